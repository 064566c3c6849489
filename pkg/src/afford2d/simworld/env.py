"""Quasi-static 2-D environment: stepping, contacts, grasping, success, batching.

The physics is deliberately reduced: disc grippers integrate clamped velocity
commands; a gripper penetrating a boundary is projected back to the surface
and the penetration transfers to the touched link's joint DOFs through the
joint Jacobian, gated by dry friction and damped. Every resolved penetration
or held grasp emits an agent-to-object contact event; object-object surface
overlaps (pick-and-place) emit object-to-object events on both participants.
Everything is deterministic given (state, action).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, SimulationError
from ..geometry import RigidTransform, segments_intersect
from .objects import ArticulatedObject
from .tasks import DT, TaskSpec

A2O = "A2O"
O2O = "O2O"

K_CONTACT = 120.0  # penetration depth (m) to generalized-force gain


@dataclass
class ContactEvent:
    world: np.ndarray
    local: np.ndarray          # canonical object frame
    channel: str
    object_id: str
    link: int
    timestep: int


@dataclass
class AgentState:
    pos: np.ndarray
    home: np.ndarray
    base_offset: float = 0.0
    grip_closed: bool = False
    attached: tuple | None = None   # (object index, link index, link-local anchor)
    last_vel: np.ndarray = field(default_factory=lambda: np.zeros(2))


@dataclass
class EnvState:
    task: TaskSpec
    objects: list
    agents: list
    spring_targets: list            # per object: per-joint rest values
    timestep: int = 0
    done: bool = False
    success: bool = False
    prev_potential: float = 0.0
    ever_grasped: bool = False
    item_resting: bool = True
    item_support: str = "floor"     # floor | tabletop | obstacle

    @property
    def instance_key(self):
        return tuple(o.object_id for o in self.objects)


# ---------------------------------------------------------------------------
# vectorized segment helpers


def _closest_on_segments(p, a, b):
    """Distances/foot points from p to each segment (a[i], b[i])."""
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom = np.where(denom == 0.0, 1.0, denom)
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    d = np.hypot(p[0] - proj[:, 0], p[1] - proj[:, 1])
    return d, proj


def _crosses(p0, p1, a, b):
    """Boolean per segment: does the motion p0->p1 cross segment (a[i], b[i])?"""

    def orient(pa, pb, pc):
        return ((pb[..., 0] - pa[..., 0]) * (pc[..., 1] - pa[..., 1])
                - (pb[..., 1] - pa[..., 1]) * (pc[..., 0] - pa[..., 0]))

    o1 = orient(p0[None, :], p1[None, :], a)
    o2 = orient(p0[None, :], p1[None, :], b)
    o3 = orient(a, b, np.broadcast_to(p0, a.shape))
    o4 = orient(a, b, np.broadcast_to(p1, a.shape))
    return (np.sign(o1) != np.sign(o2)) & (np.sign(o3) != np.sign(o4)) \
        & (o1 != 0.0) & (o2 != 0.0)


# ---------------------------------------------------------------------------
# reset


def reset(task, instance, seed):
    """Fresh episode: joints at task-specified initial values, seeded agent start."""
    objs = [o.fresh_copy() for o in (instance if isinstance(instance, tuple) else (instance,))]
    for o in objs:
        o.ensure_cloud(task.cloud_points, seed=_cloud_seed(o.object_id))
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0x7FFFFFFF, 911]))

    spring_targets = []
    for o in objs:
        targets = np.zeros(len(o.joints))
        if task.task_id in ("close_door", "push_drawer") and len(o.joints) > 0:
            o.q[0] = task.initial_open
            targets[0] = task.initial_open
        spring_targets.append(targets)

    if task.task_id == "pick_place":
        item = objs[0]
        x_item = float(rng.uniform(-1.05, -0.75))
        item.base = RigidTransform(0.0, (x_item, 0.0))

    agents = []
    for ai in range(task.n_agents):
        home = np.array(task.agent.home) + np.array([0.0, -0.3 * ai])
        start = home + rng.uniform(-task.agent.start_spread, task.agent.start_spread, size=2)
        agents.append(AgentState(pos=start, home=home))

    env = EnvState(task=task, objects=objs, agents=agents, spring_targets=spring_targets)
    env.prev_potential = _potential(env)
    if task.task_id == "pick_place":
        env.item_resting = True
        env.item_support = "floor"
    return env


def _cloud_seed(object_id):
    h = 0
    for ch in object_id:
        h = (h * 131 + ord(ch)) % (2 ** 31)
    return h


# ---------------------------------------------------------------------------
# step


def step(env, action):
    """Advance one control period; returns (env, contacts, base_reward, done, success)."""
    task = env.task
    if env.done:
        raise SimulationError("step() on a finished episode; reset first")
    action = np.asarray(action, dtype=np.float64).reshape(-1)
    if action.shape[0] != task.action_dim:
        raise ContractViolation(
            f"action dim {action.shape[0]} != expected {task.action_dim}")
    if not np.all(np.isfinite(action)):
        raise SimulationError("non-finite action")

    contacts = []
    forces = [np.zeros(len(o.joints)) for o in env.objects]
    driven = set()
    segs = [o.world_segments() for o in env.objects]
    vmax = task.agent.vmax

    for ai, agent in enumerate(env.agents):
        a = action[4 * ai:4 * ai + 4]
        v = np.clip(a[:2], -vmax, vmax)
        vb = float(np.clip(a[2], -vmax, vmax))
        grip_cmd = bool(a[3] > 0.0)
        agent.base_offset = float(np.clip(agent.base_offset + vb * DT,
                                          -task.agent.base_range, task.agent.base_range))
        base_point = agent.home + np.array([agent.base_offset, 0.0])

        if not grip_cmd:
            agent.attached = None
            agent.grip_closed = False

        old_pos = agent.pos.copy()
        if agent.attached is not None:
            _drive_attached(env, agent, v, base_point, contacts, driven)
        else:
            new_pos = _clamp_reach(old_pos + v * DT, base_point, task.agent.reach)
            hit = _deepest_contact(env, segs, old_pos, new_pos, task.agent.gripper_radius)
            if hit is None:
                agent.pos = new_pos
            else:
                oi, li, cpoint, normal, depth = hit
                obj = env.objects[oi]
                if obj.free_base:
                    _nudge_free_object(env, oi, normal, depth, contacts)
                else:
                    for ji, _ in obj.ancestor_joints(li):
                        jac = obj.joint_jacobian(ji, li, cpoint)
                        forces[oi][ji] += K_CONTACT * depth * float(jac @ (-normal))
                agent.pos = cpoint + normal * task.agent.gripper_radius
                contacts.append(_contact(env, oi, li, cpoint, A2O))
            if grip_cmd:
                agent.grip_closed = True
                grasp = _find_graspable(env, segs, agent.pos, task.agent.grasp_radius)
                if grasp is not None:
                    oi, li, spt = grasp
                    obj = env.objects[oi]
                    agent.attached = (oi, li, obj.link_pose(li).inverse().apply(spt))
                    agent.pos = spt
                    contacts.append(_contact(env, oi, li, spt, A2O))
        agent.last_vel = (agent.pos - old_pos) / DT

    # free joint integration: spring + contact forces, dry friction, damping
    for oi, obj in enumerate(env.objects):
        for ji, (li, joint) in enumerate(obj.joints):
            if (oi, ji) in driven:
                continue
            F = forces[oi][ji]
            if joint.stiffness > 0.0:
                F += -joint.stiffness * (obj.q[ji] - env.spring_targets[oi][ji])
            qd = obj.qd[ji]
            if qd == 0.0:
                F_eff = 0.0 if abs(F) <= joint.friction else F - joint.friction * math.copysign(1.0, F)
            else:
                F_eff = F - joint.friction * math.copysign(1.0, qd)
            qd = (qd + F_eff / joint.inertia * DT) / (1.0 + joint.damping * DT)
            obj.qd[ji] = qd
            obj.q[ji] = obj.q[ji] + qd * DT
            obj.clamp_joint(ji)

    if task.task_id == "pick_place":
        _settle_and_o2o(env, contacts)

    succ_now = success_check(env, task)
    first = succ_now and not env.success
    env.success = env.success or succ_now
    reward = _base_reward(env, first)
    env.timestep += 1
    env.done = env.success or env.timestep >= task.horizon
    return env, contacts, reward, env.done, env.success


def _contact(env, oi, li, world_point, channel):
    obj = env.objects[oi]
    return ContactEvent(
        world=np.array(world_point),
        local=obj.world_to_canonical(world_point, li),
        channel=channel,
        object_id=obj.object_id,
        link=li,
        timestep=env.timestep,
    )


def _clamp_reach(pos, base_point, reach):
    d = pos - base_point
    n = math.hypot(d[0], d[1])
    if n <= reach:
        return pos
    return base_point + d * (reach / n)


def _deepest_contact(env, segs, old_pos, new_pos, radius):
    """Deepest penetration (or path crossing) over all object boundaries.

    Returns (object idx, link idx, surface point, outward normal, depth) or None.
    Ties resolve to the lowest (object, link, segment) index scanned first.
    """
    best = None
    for oi, obj in enumerate(env.objects):
        if any(ag.attached is not None and ag.attached[0] == oi for ag in env.agents) \
                and obj.free_base:
            continue  # carried items are handled by the carry path
        for li, (a, b, _labels) in enumerate(segs[oi]):
            if a.shape[0] == 0:
                continue
            d, proj = _closest_on_segments(new_pos, a, b)
            crossed = _crosses(old_pos, new_pos, a, b)
            for si in range(a.shape[0]):
                if crossed[si]:
                    depth = radius + d[si]
                    n_vec = old_pos - proj[si]
                elif d[si] < radius:
                    depth = radius - d[si]
                    n_vec = new_pos - proj[si]
                else:
                    continue
                nn = math.hypot(n_vec[0], n_vec[1])
                if nn < 1e-12:
                    seg_dir = b[si] - a[si]
                    n_vec = np.array([-seg_dir[1], seg_dir[0]])
                    nn = math.hypot(n_vec[0], n_vec[1])
                normal = n_vec / nn
                if best is None or depth > best[4] + 1e-15:
                    best = (oi, li, proj[si].copy(), normal, depth)
    if best is None:
        return None
    return best[0], best[1], best[2], best[3], best[4]


def _find_graspable(env, segs, pos, radius):
    """Nearest graspable surface point within the grasp radius, if any."""
    best = None
    for oi, obj in enumerate(env.objects):
        for li, (a, b, labels) in enumerate(segs[oi]):
            grasp_labels = obj.links[li].graspable
            if a.shape[0] == 0 or not grasp_labels:
                continue
            d, proj = _closest_on_segments(pos, a, b)
            for si in range(a.shape[0]):
                if labels[si] not in grasp_labels or d[si] >= radius:
                    continue
                if best is None or d[si] < best[0] - 1e-15:
                    best = (d[si], oi, li, proj[si].copy())
    if best is None:
        return None
    return best[1], best[2], best[3]


def _drive_attached(env, agent, v, base_point, contacts, driven):
    """Attached gripper motion drives the grasped DOF or carries a free object."""
    oi, li, anchor_local = agent.attached
    obj = env.objects[oi]
    anchor_world = obj.link_pose(li).apply(anchor_local)
    target = _clamp_reach(anchor_world + v * DT, base_point, env.task.agent.reach)
    delta = target - anchor_world

    if obj.free_base:
        applied = _try_carry(env, oi, delta, contacts)
        env.item_resting = False
        agent.pos = obj.link_pose(li).apply(anchor_local)
    else:
        chain = obj.ancestor_joints(li)
        if chain:
            ji, _ = chain[-1]  # drive the joint closest to the grasped link
            joint = obj.joints[ji][1]
            jac = obj.joint_jacobian(ji, li, anchor_world)
            jj = float(jac @ jac)
            if jj > 1e-12:
                dq = float(delta @ jac) / jj
                cap = joint.max_speed * DT
                dq = max(-cap, min(cap, dq))
                lo, hi = joint.limits
                dq = max(lo - obj.q[ji], min(hi - obj.q[ji], dq))
                obj.q[ji] = obj.q[ji] + dq
                obj.qd[ji] = dq / DT
                driven.add((oi, ji))
        agent.pos = obj.link_pose(li).apply(anchor_local)
    agent.grip_closed = True
    env.ever_grasped = True
    contacts.append(_contact(env, oi, li, agent.pos, A2O))


# ---------------------------------------------------------------------------
# pick-and-place specifics


def _item_extent(env):
    item = env.objects[0]
    (a, b, _labels) = item.world_segments()[0]
    xs = np.concatenate([a[:, 0], b[:, 0]])
    ys = np.concatenate([a[:, 1], b[:, 1]])
    return float(xs.min()), float(xs.max()), float(ys.min()), float(ys.max())


def _item_table_overlap(env):
    """First intersecting (item point, table point, table link) or None."""
    item = env.objects[0]
    table = env.objects[1]
    ia, ib, _ = item.world_segments()[0]
    ta, tb, _ = table.world_segments()[0]
    for i in range(ia.shape[0]):
        for j in range(ta.shape[0]):
            if segments_intersect(ia[i], ib[i], ta[j], tb[j]):
                mid = 0.5 * (ia[i] + ib[i])
                d, proj = _closest_on_segments(mid, ta[j:j + 1], tb[j:j + 1])
                return mid, proj[0], 0
    return None


def _try_carry(env, oi, delta, contacts):
    """Translate a carried free object, blocking on collisions; emits O2O on block."""
    item = env.objects[oi]
    x0, x1, y0, y1 = _item_extent(env)
    if y0 + delta[1] < 0.0:
        delta = np.array([delta[0], -y0])  # floor
    for attempt in (delta, np.array([delta[0], 0.0]), np.array([0.0, delta[1]])):
        old_base = item.base
        item.base = RigidTransform(old_base.angle,
                                   (old_base.translation[0] + attempt[0],
                                    old_base.translation[1] + attempt[1]))
        hit = _item_table_overlap(env)
        if hit is None:
            return attempt
        item.base = old_base
        ipt, tpt, tli = hit
        contacts.append(_contact(env, 0, 0, ipt, O2O))
        contacts.append(_contact(env, 1, tli, tpt, O2O))
    return np.zeros(2)


def _nudge_free_object(env, oi, normal, depth, contacts):
    """A gripper poke slides an unattached free object horizontally."""
    item = env.objects[oi]
    dx = float(-normal[0]) * depth
    if dx == 0.0:
        return
    old_base = item.base
    item.base = RigidTransform(old_base.angle,
                               (old_base.translation[0] + dx, old_base.translation[1]))
    if _item_table_overlap(env) is not None:
        item.base = old_base


def _support_under(env):
    """Highest support surface at or below the item's bottom edge."""
    item_x0, item_x1, item_y0, _ = _item_extent(env)
    table = env.objects[1]
    top_y = table.meta["top_y"]
    half = table.meta["half"]
    candidates = [(0.0, "floor")]
    if item_x1 > -half and item_x0 < half and top_y <= item_y0 + 1e-9:
        candidates.append((top_y, "tabletop"))
    for ox, osz in table.meta["obstacles"]:
        if item_x1 > ox - osz / 2 and item_x0 < ox + osz / 2 \
                and top_y + osz <= item_y0 + 1e-9:
            candidates.append((top_y + osz, "obstacle"))
    return max(candidates, key=lambda c: c[0])


def _settle_and_o2o(env, contacts):
    item = env.objects[0]
    attached = any(ag.attached is not None and ag.attached[0] == 0 for ag in env.agents)
    if attached:
        return
    if not env.item_resting:
        support_y, kind = _support_under(env)
        _, _, y0, _ = _item_extent(env)
        drop = y0 - support_y
        old = item.base
        item.base = RigidTransform(old.angle, (old.translation[0],
                                               old.translation[1] - drop))
        env.item_resting = True
        env.item_support = kind
    if env.item_support in ("tabletop", "obstacle"):
        table = env.objects[1]
        x0, x1, y0, _ = _item_extent(env)
        bottom_center = np.array([(x0 + x1) / 2, y0])
        if env.item_support == "tabletop":
            lo, hi = -table.meta["half"], table.meta["half"]
        else:
            ox, osz = min(table.meta["obstacles"],
                          key=lambda o: abs(o[0] - bottom_center[0]))
            lo, hi = ox - osz / 2, ox + osz / 2
        on_support = np.array([min(max(bottom_center[0], lo), hi), y0])
        contacts.append(_contact(env, 0, 0, bottom_center, O2O))
        contacts.append(_contact(env, 1, 0, on_support, O2O))


def _placement_overlaps_obstacle(env):
    item = env.objects[0]
    table = env.objects[1]
    ia, ib, _ = item.world_segments()[0]
    ta, tb, tlabels = table.world_segments()[0]
    for j in range(ta.shape[0]):
        if tlabels[j] != "obstacle":
            continue
        for i in range(ia.shape[0]):
            if segments_intersect(ia[i], ib[i], ta[j], tb[j]):
                return True
    return False


# ---------------------------------------------------------------------------
# success and reward


def success_check(env, task):
    tid = task.task_id
    if tid in ("open_door", "pull_drawer"):
        return bool(env.objects[0].q[0] >= task.target)
    if tid in ("close_door", "push_drawer"):
        return bool(env.objects[0].q[0] <= task.close_eps)
    if tid == "dual_push":
        obj = env.objects[0]
        return bool(obj.q[0] >= task.target and abs(obj.q[1]) < task.tip_threshold)
    if tid == "pick_place":
        attached = any(ag.attached is not None and ag.attached[0] == 0
                       for ag in env.agents)
        if attached or not env.item_resting or env.item_support != "tabletop":
            return False
        table = env.objects[1]
        x0, x1, _, _ = _item_extent(env)
        margin = min(x0 - (-table.meta["half"]), table.meta["half"] - x1)
        if margin < task.clearance:
            return False
        return not _placement_overlaps_obstacle(env)
    if tid == "toy_reach":
        target = np.array(env.objects[0].meta["target"])
        return bool(math.hypot(*(env.agents[0].pos - target)) < task.success_radius)
    raise ContractViolation(f"unknown task id {tid!r}")


def _focus_distance(env):
    """Mean over agents of distance to the nearest focus-labeled segment."""
    task = env.task
    if task.task_id == "toy_reach":
        target = np.array(env.objects[0].meta["target"])
        return float(np.mean([math.hypot(*(ag.pos - target)) for ag in env.agents]))
    if task.task_id == "pick_place" and env.ever_grasped:
        table = env.objects[1]
        x0, x1, y0, _ = _item_extent(env)
        bottom = np.array([(x0 + x1) / 2, y0])
        ta, tb, tlabels = table.world_segments()[0]
        ds = [d for j, d in enumerate(_closest_on_segments(bottom, ta, tb)[0])
              if tlabels[j] == "tabletop"]
        return float(min(ds))
    total = 0.0
    for ag in env.agents:
        best = math.inf
        for oi, obj in enumerate(env.objects):
            for li, (a, b, labels) in enumerate(obj.world_segments()):
                if a.shape[0] == 0:
                    continue
                d, _ = _closest_on_segments(ag.pos, a, b)
                for si in range(a.shape[0]):
                    if labels[si] in task.focus_labels and d[si] < best:
                        best = d[si]
        total += best if best < math.inf else 0.0
    return total / len(env.agents)


def _potential(env):
    task = env.task
    tid = task.task_id
    obj = env.objects[0]
    if tid in ("open_door", "pull_drawer"):
        return min(obj.q[0] / task.target, 1.0) if task.target > 0 else 0.0
    if tid in ("close_door", "push_drawer"):
        if task.initial_open <= 0:
            return 0.0
        return 1.0 - min(obj.q[0] / task.initial_open, 1.0)
    if tid == "dual_push":
        return min(obj.q[0] / task.target, 1.0) if task.target > 0 else 0.0
    if tid == "pick_place":
        return 0.4 if env.ever_grasped else 0.0
    return 0.0


def _base_reward(env, first_success):
    task = env.task
    w = task.reward
    phi = _potential(env)
    r = -w.w_dist * _focus_distance(env) + w.w_progress * (phi - env.prev_potential)
    env.prev_potential = phi
    if task.task_id == "dual_push":
        r -= w.w_tilt * abs(env.objects[0].q[1])
    if first_success:
        r += w.success_bonus
    return float(r)


# ---------------------------------------------------------------------------
# batching


class EnvBatch:
    """k objects x n replicas stepped together; results identical to solo stepping."""

    def __init__(self, envs):
        if not envs:
            raise ContractViolation("EnvBatch needs at least one env")
        ids = {e.task.task_id for e in envs}
        if len(ids) != 1:
            raise ContractViolation(f"mixed task ids in batch: {sorted(ids)}")
        self.envs = list(envs)

    def __len__(self):
        return len(self.envs)

    @property
    def task(self):
        return self.envs[0].task

    def step(self, actions):
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape[0] != len(self.envs):
            raise ContractViolation("actions row count != env count")
        return [step(e, actions[i]) for i, e in enumerate(self.envs)]

    def replace_env(self, i, env):
        self.envs[i] = env


# ---------------------------------------------------------------------------
# trace log: one JSON record per line


def trace_record(env, reward, contacts):
    return {
        "t": env.timestep,
        "agents": [[float(a.pos[0]), float(a.pos[1]), float(a.base_offset),
                    int(a.grip_closed)] for a in env.agents],
        "joints": [[float(q) for q in o.q] for o in env.objects],
        "contacts": [[c.channel, c.object_id,
                      float(c.world[0]), float(c.world[1])] for c in contacts],
        "reward": float(reward),
        "success": int(env.success),
    }


def format_trace_line(record):
    return json.dumps(record, separators=(",", ":"))
