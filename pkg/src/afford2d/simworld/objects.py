"""Articulated 2-D objects: links, joints, kinematics and procedural families.

Objects are trees of labeled boundary shapes. Every link hangs off the object
base or another link through at most one joint (revolute or prismatic). The
canonical frame (all joints at zero, base at identity) is where clouds are
sampled and contact positions accumulate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ContractViolation
from ..geometry import (
    IDENTITY,
    BoundaryShape,
    PointCloud,
    RigidTransform,
    sample_boundary,
)

REVOLUTE = "revolute"
PRISMATIC = "prismatic"


@dataclass
class Joint:
    kind: str
    anchor: tuple = (0.0, 0.0)      # revolute pivot in parent frame
    axis: tuple = (1.0, 0.0)        # prismatic direction in parent frame
    limits: tuple = (0.0, 1.0)
    damping: float = 2.0
    friction: float = 0.2           # dry-friction threshold on generalized force
    stiffness: float = 0.0          # restoring spring toward spring_target
    spring_target: float = 0.0
    inertia: float = 1.0
    max_speed: float = 3.0          # attached-drive speed cap
    sign: float = 1.0               # rotation direction; q stays "openness"

    def local_transform(self, q):
        if self.kind == REVOLUTE:
            ang = q * self.sign
            ax, ay = self.anchor
            c, s = math.cos(ang), math.sin(ang)
            # p -> anchor + R(ang) (p - anchor)
            return RigidTransform(ang, (ax - (c * ax - s * ay), ay - (s * ax + c * ay)))
        ux, uy = self.axis
        return RigidTransform(0.0, (ux * q, uy * q))


@dataclass
class Link:
    name: str
    shape: BoundaryShape
    parent: int = -1                # -1 = object base
    joint: Joint | None = None
    graspable: tuple = ()           # labels on this link the gripper may attach to


class ArticulatedObject:
    """A labeled multi-link body with generalized coordinates q."""

    def __init__(self, object_id, links, base=IDENTITY, free_base=False):
        self.object_id = object_id
        self.links = links
        self.base = base
        self.free_base = free_base
        self.joint_of_link = {}
        self.joints = []
        for li, link in enumerate(links):
            if link.joint is not None:
                self.joint_of_link[li] = len(self.joints)
                self.joints.append((li, link.joint))
        self.q = np.zeros(len(self.joints))
        self.qd = np.zeros(len(self.joints))
        # per-link segment endpoints as arrays, for vectorized transforms
        self._seg_a = []
        self._seg_b = []
        self._seg_labels = []
        for link in links:
            self._seg_a.append(np.array([s.a for s in link.shape.segments]))
            self._seg_b.append(np.array([s.b for s in link.shape.segments]))
            self._seg_labels.append([s.label for s in link.shape.segments])
        self._cloud_local = None
        self._cloud_link = None
        self._cloud_labels = None

    # ------------------------------------------------------------------
    # kinematics

    def link_pose(self, li, q=None, base=None):
        """World pose of link li for coordinates q (defaults to current)."""
        q = self.q if q is None else q
        base = self.base if base is None else base
        chain = []
        cur = li
        while cur != -1:
            chain.append(cur)
            cur = self.links[cur].parent
        tf = base
        for idx in reversed(chain):
            j = self.links[idx].joint
            if j is not None:
                tf = tf.compose(j.local_transform(q[self.joint_of_link[idx]]))
        return tf

    def canonical_pose(self, li):
        """Link pose with all joints at zero and base at identity."""
        return self.link_pose(li, q=np.zeros(len(self.joints)), base=IDENTITY)

    def ancestor_joints(self, li):
        """(joint index, link index) pairs from the base down to link li."""
        chain = []
        cur = li
        while cur != -1:
            if self.links[cur].joint is not None:
                chain.append((self.joint_of_link[cur], cur))
            cur = self.links[cur].parent
        return list(reversed(chain))

    def joint_jacobian(self, ji, li, world_point, q=None):
        """d(world_point)/dq for joint ji acting on a point of link li."""
        q = self.q if q is None else q
        link_idx, joint = self.joints[ji]
        parent_pose = self.link_pose(self.links[link_idx].parent, q=q) \
            if self.links[link_idx].parent != -1 else self.base
        if joint.kind == REVOLUTE:
            pivot = parent_pose.apply(np.asarray(joint.anchor))
            r = np.asarray(world_point) - pivot
            return joint.sign * np.array([-r[1], r[0]])
        axis = parent_pose.matrix @ np.asarray(joint.axis)
        return axis

    def clamp_joint(self, ji):
        li, joint = self.joints[ji]
        lo, hi = joint.limits
        if self.q[ji] <= lo:
            self.q[ji] = lo
            self.qd[ji] = 0.0 if self.qd[ji] < 0 else self.qd[ji]
        if self.q[ji] >= hi:
            self.q[ji] = hi
            self.qd[ji] = 0.0 if self.qd[ji] > 0 else self.qd[ji]

    # ------------------------------------------------------------------
    # boundary and clouds

    def world_segments(self):
        """Per link: (a world, b world, labels). Links with no segments give empty arrays."""
        out = []
        for li in range(len(self.links)):
            if self._seg_a[li].size == 0:
                out.append((np.zeros((0, 2)), np.zeros((0, 2)), []))
                continue
            pose = self.link_pose(li)
            out.append((pose.apply(self._seg_a[li]), pose.apply(self._seg_b[li]),
                        self._seg_labels[li]))
        return out

    def ensure_cloud(self, n_points, seed):
        """Sample the canonical cloud once; point counts per link proportional to length."""
        if self._cloud_local is not None:
            return
        lengths = [link.shape.total_length for link in self.links]
        total = sum(lengths)
        if total <= 0:
            raise ContractViolation(f"object {self.object_id} has no boundary")
        raw = [n_points * L / total for L in lengths]
        counts = [int(c) for c in raw]
        rema = sorted(range(len(raw)), key=lambda i: raw[i] - counts[i], reverse=True)
        for i in range(n_points - sum(counts)):
            counts[rema[i % len(rema)]] += 1
        pts, link_idx, labels = [], [], []
        for li, link in enumerate(self.links):
            if counts[li] == 0 or not link.shape.segments:
                continue
            sub = sample_boundary(link.shape, counts[li], seed=np.random.SeedSequence(
                [seed, li]).generate_state(1)[0])
            pts.append(sub.points)
            link_idx.extend([li] * len(sub))
            labels.extend(sub.labels)
        self._cloud_local = np.concatenate(pts, axis=0)
        self._cloud_link = np.array(link_idx, dtype=np.int64)
        self._cloud_labels = labels

    def canonical_cloud(self):
        """Cloud in the canonical object frame (joints zeroed, base ignored)."""
        pts = np.empty_like(self._cloud_local)
        for li in np.unique(self._cloud_link):
            mask = self._cloud_link == li
            pts[mask] = self.canonical_pose(int(li)).apply(self._cloud_local[mask])
        return PointCloud(pts, list(self._cloud_labels), self.object_id)

    def world_cloud(self):
        """Same points as canonical_cloud, posed at the current configuration."""
        pts = np.empty_like(self._cloud_local)
        for li in np.unique(self._cloud_link):
            mask = self._cloud_link == li
            pts[mask] = self.link_pose(int(li)).apply(self._cloud_local[mask])
        return pts

    @property
    def cloud_link_index(self):
        return self._cloud_link

    @property
    def cloud_labels(self):
        return self._cloud_labels

    def world_to_canonical(self, world_point, li):
        """Map a world contact point on link li into the canonical object frame."""
        local = self.link_pose(li).inverse().apply(np.asarray(world_point))
        return self.canonical_pose(li).apply(local)

    def canonical_to_world(self, canon_point, li):
        local = self.canonical_pose(li).inverse().apply(np.asarray(canon_point))
        return self.link_pose(li).apply(local)

    # ------------------------------------------------------------------
    # state copy (geometry is shared, state is per-env)

    def fresh_copy(self):
        dup = ArticulatedObject.__new__(ArticulatedObject)
        dup.__dict__.update(self.__dict__)
        dup.q = self.q.copy()
        dup.qd = self.qd.copy()
        dup.base = self.base
        return dup


# ---------------------------------------------------------------------------
# procedural families


def _door(object_id, rng, spring=False):
    length = float(rng.uniform(0.5, 0.8))
    handle_frac = float(rng.uniform(0.55, 0.9))
    handle_len = float(rng.uniform(0.08, 0.16))
    mirror = bool(rng.integers(0, 2))

    def mx(p):
        return (-p[0], p[1]) if mirror else p

    frame = BoundaryShape()
    frame.add(mx((-0.5, 0.0)), mx((-0.04, 0.0)), "frame")
    frame.add(mx((length + 0.04, 0.0)), mx((length + 0.5, 0.0)), "frame")
    panel = BoundaryShape()
    panel.add(mx((0.0, 0.0)), mx((length, 0.0)), "panel")
    hx = handle_frac * length
    panel.add(mx((hx, 0.02)), mx((hx, 0.02 + handle_len)), "handle")
    joint = Joint(
        REVOLUTE,
        anchor=(0.0, 0.0),
        limits=(0.0, 1.7),
        damping=4.0,
        friction=0.15 * (2.0 if spring else 1.0),
        stiffness=1.2 if spring else 0.0,
        sign=-1.0 if mirror else 1.0,
    )
    links = [
        Link("frame", frame),
        Link("panel", panel, joint=joint, graspable=("handle",)),
    ]
    obj = ArticulatedObject(object_id, links)
    obj.meta = {"length": length, "handle_frac": handle_frac, "mirror": mirror}
    return obj


def _drawer(object_id, rng, spring=False):
    width = float(rng.uniform(0.4, 0.6))
    travel = float(rng.uniform(0.3, 0.45))
    handle_off = float(rng.uniform(-0.3, 0.3)) * width / 2
    handle_len = float(rng.uniform(0.08, 0.14))
    depth = 0.35
    x0, x1 = -width / 2, width / 2

    cab = BoundaryShape()
    cab.add((x0, 0.0), (x0, -depth), "cabinet")
    cab.add((x0, -depth), (x1, -depth), "cabinet")
    cab.add((x1, -depth), (x1, 0.0), "cabinet")
    front = BoundaryShape()
    front.add((x0, 0.0), (x1, 0.0), "front")
    hx = handle_off
    front.add((hx, 0.02), (hx, 0.02 + handle_len), "handle")
    joint = Joint(
        PRISMATIC,
        axis=(0.0, 1.0),
        limits=(0.0, travel),
        damping=4.0,
        friction=0.25,
        stiffness=0.8 if spring else 0.0,
    )
    links = [
        Link("cabinet", cab),
        Link("front", front, joint=joint, graspable=("handle",)),
    ]
    obj = ArticulatedObject(object_id, links)
    obj.meta = {"width": width, "travel": travel}
    return obj


def _chair(object_id, rng):
    seat_h = float(rng.uniform(0.35, 0.5))
    width = float(rng.uniform(0.35, 0.5))
    back_h = float(rng.uniform(0.35, 0.55))
    x0, x1 = -width / 2, width / 2

    body = BoundaryShape()
    body.add((x0, 0.0), (x0, seat_h), "legs")
    body.add((x1, 0.0), (x1, seat_h), "legs")
    body.add((x0, seat_h), (x1, seat_h), "seat")
    body.add((x0, seat_h), (x0, seat_h + back_h), "back")

    slide = Joint(PRISMATIC, axis=(1.0, 0.0), limits=(-0.2, 1.5),
                  damping=3.0, friction=0.6, inertia=1.5)
    tilt = Joint(REVOLUTE, anchor=(0.0, 0.0), limits=(-0.6, 0.6),
                 damping=6.0, friction=0.05, stiffness=3.0, inertia=1.0)
    links = [
        Link("slider", BoundaryShape()),                 # virtual carriage, no geometry
        Link("body", body, parent=0, joint=tilt),
    ]
    links[0].joint = slide
    obj = ArticulatedObject(object_id, links)
    obj.meta = {"seat_h": seat_h, "width": width, "back_h": back_h}
    return obj


def _pick_item(object_id, rng):
    size = float(rng.uniform(0.08, 0.14))
    box = BoundaryShape().add_polyline(
        [(-size / 2, 0.0), (size / 2, 0.0), (size / 2, size), (-size / 2, size)],
        label="item", closed=True)
    obj = ArticulatedObject(object_id, [Link("item", box, graspable=("item",))],
                            free_base=True)
    obj.meta = {"size": size}
    return obj


def _pick_table(object_id, rng):
    top_y = float(rng.uniform(0.35, 0.45))
    half = float(rng.uniform(0.45, 0.6))
    shape = BoundaryShape()
    shape.add((-half, top_y), (half, top_y), "tabletop")
    shape.add((-half + 0.06, top_y), (-half + 0.06, 0.0), "leg")
    shape.add((half - 0.06, top_y), (half - 0.06, 0.0), "leg")
    n_obs = int(rng.integers(1, 3))
    obstacles = []
    for k in range(n_obs):
        ox = float(rng.uniform(-half * 0.7, half * 0.7))
        os_ = float(rng.uniform(0.06, 0.1))
        shape.add_polyline(
            [(ox - os_ / 2, top_y), (ox + os_ / 2, top_y),
             (ox + os_ / 2, top_y + os_), (ox - os_ / 2, top_y + os_)],
            label="obstacle", closed=True)
        obstacles.append((ox, os_))
    obj = ArticulatedObject(object_id, [Link("table", shape)])
    obj.meta = {"top_y": top_y, "half": half, "obstacles": obstacles}
    return obj


def _toy_marker(object_id, rng):
    cx = float(rng.uniform(-0.1, 0.1))
    box = BoundaryShape().add_polyline(
        [(cx - 0.05, -0.05), (cx + 0.05, -0.05), (cx + 0.05, 0.05), (cx - 0.05, 0.05)],
        label="marker", closed=True)
    obj = ArticulatedObject(object_id, [Link("marker", box)])
    obj.meta = {"target": (cx, 0.0)}
    return obj


_BUILDERS = {
    "open_door": lambda oid, rng: _door(oid, rng, spring=False),
    "close_door": lambda oid, rng: _door(oid, rng, spring=True),
    "pull_drawer": lambda oid, rng: _drawer(oid, rng),
    "push_drawer": lambda oid, rng: _drawer(oid, rng),
    "dual_push": lambda oid, rng: _chair(oid, rng),
    "pick_place": None,  # handled below: item + table pair
    "toy_reach": lambda oid, rng: _toy_marker(oid, rng),
}


def generate_object_family(task_id, count, seed):
    """Deterministic family of ``count`` object (or object-set) instances.

    pick_place instances are (item, table) pairs returned as tuples; every
    other task yields single objects. Geometry depends only on
    (task_id, seed, index).
    """
    if task_id not in _BUILDERS:
        raise ContractViolation(f"unknown task id {task_id!r}")
    if count < 1:
        raise ContractViolation("generate_object_family: count must be >= 1")
    out = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([hash_task(task_id), seed, i]))
        oid = f"{task_id}-{i:03d}"
        if task_id == "pick_place":
            item = _pick_item(oid + "-item", rng)
            table = _pick_table(oid + "-table", rng)
            out.append((item, table))
        else:
            out.append(_BUILDERS[task_id](oid, rng))
    return out


def hash_task(task_id):
    """Stable small integer per task id (Python's hash() is salted per process)."""
    h = 0
    for ch in task_id:
        h = (h * 31 + ord(ch)) % (2 ** 31)
    return h


def split_family(instances, n_train):
    """Disjoint train/test split preserving generation order."""
    if not 0 < n_train <= len(instances):
        raise ContractViolation("split_family: n_train out of range")
    return instances[:n_train], instances[n_train:]


def instance_ids(instance):
    """Object ids of one family instance (tuple-valued for pick_place)."""
    if isinstance(instance, tuple):
        return tuple(o.object_id for o in instance)
    return (instance.object_id,)
