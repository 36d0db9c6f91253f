"""Post-hoc pose optimization: gradient descent on the physics penalties.

This is the baseline the learned corrector is compared against, and the
polisher used to make synthetic ground truth valid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..layout import LayoutScene, apply_pose_vector, to_pose_vector
from ..metrics import FLOAT_THRESHOLD, batch_float_rate, batch_object_collision
from ..physics import PhysicsWeights, SceneInstance, batch_pair_distances, batch_physics, collision_matrix

log = logging.getLogger(__name__)

BUCKETS = ("0-10", "10-20", "20-30", "30-40")
ARMIJO_C = 1e-4
BACKTRACK = 0.5
MIN_STEP = 1e-12


def count_collisions(D: np.ndarray) -> int:
    return int(np.triu(collision_matrix(D), k=1).sum())


def bucket_of(count: int) -> str:
    k = count // 10
    if k >= len(BUCKETS):
        log.info("collision count %d above the top bucket, clamped", count)
        k = len(BUCKETS) - 1
    return BUCKETS[k]


def collision_bucket(inst: SceneInstance, x=None) -> str:
    """Bucket of the number of colliding unordered pairs; counts of 40 and
    more clamp to the top bucket."""
    return bucket_of(count_collisions(batch_pair_distances([inst], [x])[0]))


@dataclass
class OptimReport:
    iterations: int
    final_loss: float
    success: bool
    bucket: str
    trace: list[dict] = field(default_factory=list)
    initial_collisions: int = 0

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "final_loss": self.final_loss, "success": self.success,
                "bucket": self.bucket, "initial_collisions": self.initial_collisions, "trace": self.trace}


def _settled(t, weights: PhysicsWeights) -> bool:
    # no sampled penetration of objects or of the table, and a support sum
    # below (delta - eps)^2, so every gap is under the float threshold
    slack = max(FLOAT_THRESHOLD - weights.epsilon_sup, 0.0)
    return t.total == 0.0 or (t.obj_obj == 0.0 and t.obj_table == 0.0 and t.support < slack ** 2)


def optimize_many(instances: Sequence[SceneInstance], weights: PhysicsWeights = PhysicsWeights(),
                  budget: int = 5000, lr: float = 10.0, trace_every: int = 1) -> list[tuple[LayoutScene, OptimReport]]:
    """Optimize several scenes in lockstep (one batched physics call per
    line-search round). Each scene follows exactly the trajectory it would
    follow alone."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    S = len(instances)
    xs = [to_pose_vector(inst.scene) for inst in instances]
    D0 = batch_pair_distances(instances, xs)
    init_counts = [count_collisions(D) for D in D0]
    terms = batch_physics(instances, xs, weights)
    f = np.array([t.total for t in terms])
    g = [t.grad for t in terms]
    step = np.full(S, float(lr))
    iters = np.zeros(S, dtype=int)
    traces: list[list[dict]] = [[] for _ in range(S)]
    active = np.array([t.total > 0.0 for t in terms])
    # last iterate that already passes the validity check, kept in case the
    # run stalls before reaching zero loss
    fallback: list = [None] * S
    for s, t in enumerate(terms):
        traces[s].append(_row(0, t))
        if _settled(t, weights):
            fallback[s] = (xs[s], f[s], 0, 1)

    while active.any():
        pending = list(np.nonzero(active)[0])
        trial = {s: min(step[s] * 2.0, 1e6) for s in pending}
        while pending:
            cand = [xs[s] - trial[s] * g[s] for s in pending]
            res = batch_physics([instances[s] for s in pending], cand, weights)
            still = []
            for s, x_new, t in zip(pending, cand, res):
                gg = float(g[s] @ g[s])
                if t.total <= f[s] - ARMIJO_C * trial[s] * gg:
                    xs[s], f[s], g[s], step[s] = x_new, t.total, t.grad, trial[s]
                    iters[s] += 1
                    if iters[s] % trace_every == 0:
                        traces[s].append(_row(int(iters[s]), t))
                    if _settled(t, weights):
                        fallback[s] = (x_new, t.total, int(iters[s]), len(traces[s]))
                    if t.total == 0.0 or iters[s] >= budget:
                        active[s] = False
                else:
                    trial[s] *= BACKTRACK
                    if trial[s] * np.sqrt(gg) < MIN_STEP or gg == 0.0:
                        active[s] = False  # stationary point with positive loss
                    else:
                        still.append(s)
            pending = still

    for s in range(S):
        if f[s] > 0.0 and fallback[s] is not None:
            xs[s], f[s], iters[s], keep = fallback[s]
            traces[s] = traces[s][:keep]
    oc = batch_object_collision(instances, xs)
    fl = batch_float_rate(instances, xs)
    out = []
    for s, inst in enumerate(instances):
        scene = inst.scene if iters[s] == 0 else apply_pose_vector(inst.scene, xs[s])
        rep = OptimReport(int(iters[s]), float(f[s]), bool(oc[s] == 0 and fl[s] == 0),
                          bucket_of(init_counts[s]), traces[s], init_counts[s])
        out.append((scene, rep))
    return out


def _row(it: int, t) -> dict:
    return {"iter": it, "total": t.total, "obj_obj": t.obj_obj, "obj_table": t.obj_table, "support": t.support}


def optimize_poses(inst: SceneInstance, weights: PhysicsWeights = PhysicsWeights(), budget: int = 5000,
                   lr: float = 10.0, seed: int = 0, restarts: int = 0,
                   restart_scale: float = 0.01) -> tuple[LayoutScene, OptimReport]:
    """Gradient descent with Armijo backtracking on the total physics loss.

    The first trial step of each iteration is twice the last accepted one, so
    the loss trace is non-increasing. Stops when the loss is zero, at a
    stationary point, or when ``budget`` steps are used. A run that ends with
    positive loss returns its last iterate that had no penetration and every
    support gap under the float threshold, if there was one.

    With ``restarts > 0`` a run that stalls before the budget is spent is
    resumed from its end pose plus Gaussian noise of ``restart_scale`` meters
    (and radians), drawn from ``seed``. The trace is then monotone only within
    each run; the best run by final loss is returned.
    """
    scene, rep = optimize_many([inst], weights, budget, lr)[0]
    rng = np.random.default_rng(seed)
    used, best = rep.iterations, (scene, rep)
    for _ in range(restarts):
        if best[1].success or used >= budget:
            break
        x = to_pose_vector(best[0])
        x = x + rng.normal(0.0, restart_scale, size=x.shape)
        trial_inst = SceneInstance(apply_pose_vector(inst.scene, x), inst.geometries, inst.library)
        scene, r = optimize_many([trial_inst], weights, budget - used, lr)[0]
        used += r.iterations
        log.info("restart: loss %.3g -> %.3g", best[1].final_loss, r.final_loss)
        if r.success or r.final_loss < best[1].final_loss:
            best = (scene, r)
    scene, r = best
    rep = OptimReport(used, r.final_loss, r.success, rep.bucket,
                      r.trace if r is rep else rep.trace + r.trace, rep.initial_collisions)
    return scene, rep
