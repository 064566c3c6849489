"""Task families: semantics, success parameters, reward weights, agent layout."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..errors import ContractViolation

DT = 0.05  # integration step, seconds

TASK_IDS = (
    "open_door",
    "close_door",
    "pull_drawer",
    "push_drawer",
    "pick_place",
    "dual_push",
    "toy_reach",
)


@dataclass(frozen=True)
class RewardWeights:
    """Base reward shaping: distance-to-part plus task-progress terms."""

    w_dist: float = 0.1
    w_progress: float = 2.0
    success_bonus: float = 10.0
    w_tilt: float = 0.0


@dataclass(frozen=True)
class AgentLayout:
    home: tuple = (0.0, 0.8)
    start_spread: float = 0.3       # uniform box half-width around home for resets
    reach: float = 0.8
    base_range: float = 0.6         # horizontal slide limit of the arm base
    vmax: float = 0.8               # per-axis velocity command limit, m/s
    grasp_radius: float = 0.05
    gripper_radius: float = 0.04


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    horizon: int
    n_agents: int = 1
    target: float = 0.0             # target joint value / displacement
    close_eps: float = 0.05         # "closed" tolerance for close/push tasks
    initial_open: float = 0.0       # starting joint value of close/push tasks
    tip_threshold: float = 0.35
    clearance: float = 0.03
    success_radius: float = 0.1     # toy_reach only
    reward: RewardWeights = field(default_factory=RewardWeights)
    agent: AgentLayout = field(default_factory=AgentLayout)
    part_labels: tuple = ()
    focus_labels: tuple = ()        # labels the distance shaping points at
    partial_view: bool = False
    cloud_points: int = 256

    @property
    def action_dim(self):
        # per agent: velocity (2) + base slide (1) + grip (1)
        return self.n_agents * 4


_DEFAULTS = {
    "open_door": TaskSpec(
        task_id="open_door", horizon=200, target=0.5,
        part_labels=("frame", "panel", "handle"),
        focus_labels=("panel", "handle"),
        agent=AgentLayout(home=(0.3, 0.55), start_spread=0.25, reach=0.8),
    ),
    "close_door": TaskSpec(
        task_id="close_door", horizon=200, initial_open=0.9,
        part_labels=("frame", "panel", "handle"),
        focus_labels=("panel", "handle"),
        agent=AgentLayout(home=(0.3, 0.55), start_spread=0.25, reach=0.8),
    ),
    "pull_drawer": TaskSpec(
        task_id="pull_drawer", horizon=200, target=0.22,
        part_labels=("cabinet", "front", "handle"),
        focus_labels=("front", "handle"),
        agent=AgentLayout(home=(0.0, 0.5), start_spread=0.25, reach=0.7),
    ),
    "push_drawer": TaskSpec(
        task_id="push_drawer", horizon=200, initial_open=0.3,
        part_labels=("cabinet", "front", "handle"),
        focus_labels=("front", "handle"),
        agent=AgentLayout(home=(0.0, 0.7), start_spread=0.25, reach=0.7),
    ),
    "pick_place": TaskSpec(
        task_id="pick_place", horizon=400, clearance=0.03,
        part_labels=("item", "tabletop", "leg", "obstacle"),
        focus_labels=("item",),
        reward=RewardWeights(w_dist=0.1, w_progress=4.0, success_bonus=10.0),
        agent=AgentLayout(home=(-0.9, 0.35), start_spread=0.2, reach=0.9,
                          base_range=1.2, grasp_radius=0.06),
    ),
    "dual_push": TaskSpec(
        task_id="dual_push", horizon=300, n_agents=2, target=0.5,
        part_labels=("seat", "back", "legs"),
        focus_labels=("seat", "back", "legs"),
        reward=RewardWeights(w_dist=0.1, w_progress=4.0, success_bonus=10.0,
                             w_tilt=0.2),
        agent=AgentLayout(home=(-0.6, 0.45), start_spread=0.2, reach=0.8,
                          base_range=1.5),
    ),
    "toy_reach": TaskSpec(
        task_id="toy_reach", horizon=100, success_radius=0.1,
        part_labels=("marker",),
        focus_labels=("marker",),
        reward=RewardWeights(w_dist=1.0, w_progress=0.0, success_bonus=10.0),
        agent=AgentLayout(home=(0.0, 0.6), start_spread=0.4, reach=1.2,
                          base_range=0.8),
    ),
}


def task_defaults(task_id):
    if task_id not in _DEFAULTS:
        raise ContractViolation(f"unknown task id {task_id!r}; known: {TASK_IDS}")
    return _DEFAULTS[task_id]


def with_overrides(spec, **kwargs):
    """Replace top-level TaskSpec fields; nested reward/agent fields take dicts."""
    kwargs = dict(kwargs)
    if "reward" in kwargs and isinstance(kwargs["reward"], dict):
        kwargs["reward"] = replace(spec.reward, **kwargs["reward"])
    if "agent" in kwargs and isinstance(kwargs["agent"], dict):
        kwargs["agent"] = replace(spec.agent, **kwargs["agent"])
    unknown = set(kwargs) - set(spec.__dataclass_fields__)
    if unknown:
        raise ContractViolation(f"unknown TaskSpec fields: {sorted(unknown)}")
    out = replace(spec, **kwargs)
    if out.horizon < 1:
        raise ContractViolation("horizon must be >= 1")
    return out
