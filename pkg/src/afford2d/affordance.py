"""Contact-driven affordance: buffers, dynamic ground truth, the predictor.

Contacts harvested during training accumulate per object and channel in
fixed-capacity buffers with uniform random eviction. A per-point score target
is rebuilt from each buffer by counting nearby contacts and normalizing by
the busiest point. The contact predictor is a small point-set network (shared
per-point encoder, max-pool global feature, concatenated 128-wide per-point
feature, sigmoid head) trained toward those targets with each object's term
weighted by its current manipulation success rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ContractViolation

A2O = "A2O"
O2O = "O2O"
CHANNELS = (A2O, O2O)

DEFAULT_CAPACITY = 512
DEFAULT_RADIUS = 0.05
DEFAULT_EPS = 1e-6

POINT_FEAT = 64         # per-point encoder width
GLOBAL_FEAT = 64        # pooled global width; concat gives the 128-wide feature


class ContactBuffer:
    """Fixed-capacity multiset of contact positions with random eviction.

    Below capacity an insert appends; at capacity the new record replaces one
    uniformly random existing slot, so every slot survives an insert with
    probability (1 - 1/capacity).
    """

    def __init__(self, capacity=DEFAULT_CAPACITY, channel=A2O, object_id="", seed=0):
        if capacity < 1:
            raise ContractViolation("buffer capacity must be >= 1")
        self.capacity = capacity
        self.channel = channel
        self.object_id = object_id
        self._store = np.empty((capacity, 2))
        self._size = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return self._size

    @property
    def points(self):
        return self._store[: self._size]

    def insert(self, point):
        point = np.asarray(point, dtype=np.float64)
        if not np.all(np.isfinite(point)):
            raise ContractViolation("contact point must be finite")
        if self._size < self.capacity:
            self._store[self._size] = point
            self._size += 1
        else:
            victim = int(self.rng.integers(0, self.capacity))
            self._store[victim] = point
        return self

    def state_dict(self):
        return {
            "capacity": self.capacity,
            "channel": self.channel,
            "object_id": self.object_id,
            "points": self.points.copy(),
            "rng_state": self.rng.bit_generator.state,
        }

    @classmethod
    def from_state(cls, state):
        buf = cls(state["capacity"], state["channel"], state["object_id"])
        pts = state["points"]
        buf._store[: len(pts)] = pts
        buf._size = len(pts)
        buf.rng.bit_generator.state = state["rng_state"]
        return buf


def compute_dgt(cloud_points, buffer_points, r=DEFAULT_RADIUS, eps=DEFAULT_EPS):
    """Per-point contact-frequency target.

    score(p) = |{q in buffer : |p-q| < r}| / (max_p' count(p') + eps).
    All scores land in [0, 1); an empty buffer gives all zeros.
    """
    pts = np.asarray(cloud_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ContractViolation("compute_dgt: cloud must be nonempty (n, 2)")
    if r <= 0 or eps <= 0:
        raise ContractViolation("compute_dgt: r and eps must be positive")
    buf = np.asarray(buffer_points, dtype=np.float64).reshape(-1, 2)
    if buf.shape[0] == 0:
        return np.zeros(pts.shape[0])
    dx = pts[:, 0][:, None] - buf[:, 0][None, :]
    dy = pts[:, 1][:, None] - buf[:, 1][None, :]
    counts = np.count_nonzero(np.hypot(dx, dy) < r, axis=1).astype(np.float64)
    return counts / (counts.max() + eps)


@dataclass
class ContactPredictorParams:
    """Shared per-point encoder, max-pool aggregation, two-channel sigmoid head."""

    encoder: dc.Mlp     # point (2) -> POINT_FEAT, tanh throughout
    head: dc.Mlp        # 128 -> 64 -> channels, sigmoid final

    def param_arrays(self):
        return self.encoder.param_arrays() + self.head.param_arrays()

    def set_param_arrays(self, arrays):
        n_enc = len(self.encoder.param_arrays())
        self.encoder.set_param_arrays(arrays[:n_enc])
        self.head.set_param_arrays(arrays[n_enc:])

    def named_arrays(self):
        out = []
        for i, (w, b) in enumerate(self.encoder.layers):
            out.append((f"cp.enc.{i}.w", w))
            out.append((f"cp.enc.{i}.b", b))
        for i, (w, b) in enumerate(self.head.layers):
            out.append((f"cp.head.{i}.w", w))
            out.append((f"cp.head.{i}.b", b))
        return out

    @property
    def feature_width(self):
        return POINT_FEAT + GLOBAL_FEAT

    def copy(self):
        return ContactPredictorParams(self.encoder.copy(), self.head.copy())


def cp_init(rng, n_channels=2, point_dim=2):
    """Fresh predictor; the head's last layer starts at zero so scores start at 0.5."""
    encoder = dc.mlp_init([point_dim, POINT_FEAT, POINT_FEAT], final="identity", rng=rng)
    head = dc.mlp_init([POINT_FEAT + GLOBAL_FEAT, 64, n_channels], final="sigmoid",
                       rng=rng, zero_last=True)
    return ContactPredictorParams(encoder, head)


def _cp_scores(enc_leaves, head_leaves, head_final, cloud_tensor):
    per_point = dc.tanh(dc.mlp_apply(enc_leaves, "identity", cloud_tensor))
    n = cloud_tensor.shape[0]
    pooled = dc.max_axis(per_point, axis=0)                     # (POINT_FEAT,)
    tiled = dc.add(dc.constant(np.zeros((n, 1))), dc.reshape(pooled, (1, -1)))
    feat = dc.concat([per_point, tiled], axis=1)                # (n, 128)
    return dc.mlp_apply(head_leaves, head_final, feat)


def cp_forward(params, cloud_points):
    """Affordance map: one score per point per channel, each strictly in (0, 1).

    Permutation-equivariant: permuting the input rows permutes the output
    rows identically (the pooled feature is permutation-invariant).
    """
    pts = np.asarray(cloud_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ContractViolation("cp_forward: cloud must be nonempty (n, d)")
    enc_leaves = dc.mlp_leaves(params.encoder, False)
    head_leaves = dc.mlp_leaves(params.head, False)
    return _cp_scores(enc_leaves, head_leaves, params.head.final, dc.constant(pts)).data


def cp_update(params, clouds, targets, success_rates, opt_state):
    """One optimizer step on the success-rate-weighted squared-error loss.

    Each object contributes sr_i * mean((scores - target)^2); sr=0 objects are
    skipped, which is exact (a zero-weighted term adds zero to the loss and to
    every gradient). If every rate is zero there is nothing to learn from:
    parameters, moments and step count stay untouched and the loss is 0.0.
    """
    if not (len(clouds) == len(targets) == len(success_rates)):
        raise ContractViolation("cp_update: object lists must align")
    for sr in success_rates:
        if not (0.0 <= sr <= 1.0):
            raise ContractViolation(f"success rate {sr} outside [0, 1]")
    live = [i for i, sr in enumerate(success_rates) if sr > 0.0]
    if not live:
        return 0.0

    # one graph per object against a single shared leaf set
    enc_leaves = dc.mlp_leaves(params.encoder, True)
    head_leaves = dc.mlp_leaves(params.head, True)
    leaves = [t for pair in enc_leaves + head_leaves for t in pair]
    total = None
    for i in live:
        cloud_t = dc.constant(np.asarray(clouds[i], dtype=np.float64))
        scores = _cp_scores(enc_leaves, head_leaves, params.head.final, cloud_t)
        err = dc.sub(scores, dc.constant(np.asarray(targets[i], dtype=np.float64)))
        term = dc.mul(dc.constant(success_rates[i]), dc.tmean(dc.mul(err, err)))
        total = term if total is None else dc.add(total, term)

    loss_value = total.data.item()
    if not np.isfinite(loss_value):
        raise ContractViolation("cp_update: non-finite loss")
    grads = dc.backprop(total, leaves)
    dc.adam_step(params.param_arrays(), grads, opt_state)
    return loss_value


def max_affordance_point(scores, cloud_points, channel=0):
    """Index and coordinates of the highest-scoring point; ties pick the lowest index."""
    sc = np.asarray(scores, dtype=np.float64)
    pts = np.asarray(cloud_points, dtype=np.float64)
    if sc.ndim == 1:
        sc = sc[:, None]
    if sc.shape[0] < 1 or pts.shape[0] != sc.shape[0]:
        raise ContractViolation("max_affordance_point: empty or misaligned inputs")
    idx = int(np.argmax(sc[:, channel]))
    return pts[idx], idx
