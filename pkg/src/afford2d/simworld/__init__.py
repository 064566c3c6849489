from .env import (
    A2O,
    O2O,
    AgentState,
    ContactEvent,
    EnvBatch,
    EnvState,
    format_trace_line,
    reset,
    step,
    success_check,
    trace_record,
)
from .objects import (
    ArticulatedObject,
    Joint,
    Link,
    generate_object_family,
    instance_ids,
    split_family,
)
from .tasks import DT, TASK_IDS, TaskSpec, task_defaults, with_overrides

__all__ = [
    "A2O",
    "O2O",
    "AgentState",
    "ArticulatedObject",
    "ContactEvent",
    "DT",
    "EnvBatch",
    "EnvState",
    "Joint",
    "Link",
    "TASK_IDS",
    "TaskSpec",
    "format_trace_line",
    "generate_object_family",
    "instance_ids",
    "reset",
    "split_family",
    "step",
    "success_check",
    "task_defaults",
    "trace_record",
    "with_overrides",
]
