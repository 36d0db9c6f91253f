"""Flow-matching physics corrector.

A conditional velocity field over pose vectors is trained on straight paths
from a noised coarse pose ``x_0 = x^c + sigma * eps`` to the ground truth
``x_1 = x*``. The physics penalties are evaluated on the one-step endpoint
estimate ``x_t + (1 - t) v`` and back-propagated through the SDF chain rule.
At inference the ODE ``dx/dt = v(x, t, C)`` is integrated from the coarse pose.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from ..errors import ConfigError, NonFiniteLoss, NonFiniteState
from ..layout import LayoutScene, apply_pose_vector, join_pose_vector, split_pose_vector, to_pose_vector
from ..physics import GeometryLibrary, PhysicsWeights, SceneInstance, batch_physics

log = logging.getLogger(__name__)

SLOT_CAPACITY = 16
EMBED_DIM = 64
INSTANCE_DIM = 32
TIME_DIM = 32
CHECKPOINT_FORMAT = "tabletop-flow-v1"
ALL_TERMS = ("obj_obj", "obj_table", "support")


@dataclass(frozen=True)
class TrainConfig:
    sigma: float = 0.1
    lr: float = 2e-4
    batch_size: int = 64
    epochs: int = 300
    hidden_dim: int = 128
    ode_steps: int = 32
    solver: str = "euler"
    lambda_sdf: float = 0.02
    lambda_sup: float = 0.01
    epsilon_sup: float = 2e-4
    terms: tuple[str, ...] = ALL_TERMS
    self_conditioning: bool = False
    physics_at: str = "x1_hat"  # or "x_t"
    arch: str = "mlp"
    layers: int = 2
    seed: int = 0
    capacity: int = SLOT_CAPACITY
    grad_clip: float = 1.0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.ode_steps < 1:
            raise ConfigError("ode_steps must be >= 1")
        if self.solver not in ("euler", "rk4"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.arch not in ("mlp", "pairwise"):
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self.physics_at not in ("x1_hat", "x_t"):
            raise ConfigError(f"physics_at must be 'x1_hat' or 'x_t', not {self.physics_at!r}")
        bad = set(self.terms) - set(ALL_TERMS)
        if bad:
            raise ConfigError(f"unknown physics terms {sorted(bad)}")

    @property
    def weights(self) -> PhysicsWeights:
        return PhysicsWeights(self.lambda_sdf, self.lambda_sup, self.epsilon_sup)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["terms"] = list(self.terms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "terms" in known:
            known["terms"] = tuple(known["terms"])
        return cls(**known)

    def digest(self) -> str:
        return hashlib.sha1(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# pose layout helpers: pose vector [p_1..p_N | r_1..r_N] <-> per-object (N, 4)

def pose_to_slots(x, n: int | None = None) -> np.ndarray:
    p, r = split_pose_vector(x, n)
    return np.concatenate([p, r[:, None]], axis=1)


def slots_to_pose(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return join_pose_vector(s[:, :3], s[:, 3])


def branch_yaw(target, reference):
    """Representative of ``target`` (mod 2 pi) nearest to ``reference``."""
    rnd = torch.round if isinstance(target, torch.Tensor) else np.round
    return target + 2 * math.pi * rnd((reference - target) / (2 * math.pi))


@dataclass(frozen=True, eq=False)
class Condition:
    """Per-scene conditioning: coarse poses, geometry embeddings and sizes of
    the real objects, their instance slots, and the padding mask."""

    coarse: np.ndarray  # (N, 4)
    embeddings: np.ndarray  # (N, 64)
    sizes: np.ndarray  # (N, 3)
    slots: np.ndarray  # (N,) instance-embedding index
    capacity: int = SLOT_CAPACITY

    @property
    def n(self) -> int:
        return len(self.coarse)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.capacity, dtype=bool)
        m[: self.n] = True
        return m


def build_condition(scene: LayoutScene, library: GeometryLibrary, capacity: int = SLOT_CAPACITY,
                    instance: SceneInstance | None = None) -> Condition:
    inst = instance or SceneInstance.build(scene, library)
    if inst.n > capacity:
        raise ConfigError(f"scene has {inst.n} objects, slot capacity is {capacity}")
    coarse = pose_to_slots(to_pose_vector(scene), inst.n)
    emb = np.stack([g.embedding for g in inst.geometries]) if inst.n else np.zeros((0, EMBED_DIM))
    sizes = np.array([g.size for g in inst.geometries]).reshape(-1, 3)
    return Condition(coarse, emb, sizes, np.arange(inst.n), capacity)


@dataclass
class Batch:
    coarse: torch.Tensor  # (S, K, 4)
    emb: torch.Tensor  # (S, K, 64)
    sizes: torch.Tensor  # (S, K, 3)
    slots: torch.Tensor  # (S, K) long
    mask: torch.Tensor  # (S, K) bool

    def to(self, dtype) -> "Batch":
        if self.coarse.dtype == dtype:
            return self
        return Batch(self.coarse.to(dtype), self.emb.to(dtype), self.sizes.to(dtype), self.slots, self.mask)

    def trim(self) -> "Batch":
        """Drop trailing slots that are padding in every scene."""
        k = max(int(self.mask.sum(1).max()), 1) if len(self.mask) else 1
        return Batch(self.coarse[:, :k], self.emb[:, :k], self.sizes[:, :k], self.slots[:, :k], self.mask[:, :k])


def stack_conditions(conds: Sequence[Condition]) -> Batch:
    K = max(c.capacity for c in conds)
    S = len(conds)
    coarse = np.zeros((S, K, 4))
    emb = np.zeros((S, K, EMBED_DIM))
    sizes = np.zeros((S, K, 3))
    slots = np.zeros((S, K), dtype=np.int64)
    mask = np.zeros((S, K), dtype=bool)
    for s, c in enumerate(conds):
        n = c.n
        coarse[s, :n], emb[s, :n], sizes[s, :n], slots[s, :n] = c.coarse, c.embeddings, c.sizes, c.slots
        mask[s, :n] = True
    f = torch.float64
    return Batch(torch.tensor(coarse, dtype=f), torch.tensor(emb, dtype=f), torch.tensor(sizes, dtype=f),
                 torch.tensor(slots), torch.tensor(mask))


# ---------------------------------------------------------------------------
# network

def time_embedding(t: torch.Tensor, dim: int = TIME_DIM) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(1000.0) * torch.arange(half, dtype=t.dtype) / half)
    ang = t[..., None] * freqs * 2 * math.pi
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


def _mlp(sizes: Sequence[int]) -> nn.Sequential:
    mods: list[nn.Module] = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        mods += [nn.Linear(a, b), nn.SiLU()]
    return nn.Sequential(*mods)


def _masked_mean(h: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    m = mask.to(h.dtype)[..., None]
    return (h * m).sum(1) / m.sum(1).clamp_min(1.0)


class VelocityField(nn.Module):
    """Shared per-object network with a pooled scene context.

    Per object: noisy pose, coarse pose, size, yaw sin/cos, geometry
    embedding, instance embedding and time embedding are encoded; the
    masked mean of the encodings is appended and a second stage predicts the
    object's 4-d velocity. ``arch="pairwise"`` replaces the mean with masked
    message passing over object pairs using relative positions.
    """

    def __init__(self, hidden: int = 128, arch: str = "mlp", layers: int = 2,
                 capacity: int = SLOT_CAPACITY, self_conditioning: bool = False):
        super().__init__()
        self.arch = arch
        self.self_conditioning = self_conditioning
        self.instance = nn.Embedding(capacity, INSTANCE_DIM)
        d_in = 4 + 4 + 3 + 4 + EMBED_DIM + INSTANCE_DIM + TIME_DIM + (4 if self_conditioning else 0)
        self.encode = _mlp([d_in] + [hidden] * layers)
        if arch == "pairwise":
            self.message = nn.ModuleList([_mlp([2 * hidden + 11, hidden, hidden]) for _ in range(layers)])
            self.update = nn.ModuleList([_mlp([2 * hidden, hidden]) for _ in range(layers)])
        self.decode = _mlp([2 * hidden + TIME_DIM, hidden, hidden])
        self.out = nn.Linear(hidden, 4)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: torch.Tensor, t: torch.Tensor, batch: Batch, sc: torch.Tensor | None = None) -> torch.Tensor:
        """``x``: (S, K, 4) current poses, ``t``: (S,). Returns (S, K, 4) in
        the dtype of ``x``; padded slots get zero velocity. The network itself
        runs in float32."""
        out_dtype = x.dtype
        x, t = x.float(), t.float()
        batch = batch.to(torch.float32)
        if sc is not None:
            sc = sc.float()
        S, K, _ = x.shape
        te = time_embedding(t)[:, None, :].expand(S, K, TIME_DIM)
        feats = [x, batch.coarse, batch.sizes,
                 torch.stack([torch.sin(x[..., 3]), torch.cos(x[..., 3]),
                              torch.sin(batch.coarse[..., 3]), torch.cos(batch.coarse[..., 3])], dim=-1),
                 batch.emb, self.instance(batch.slots), te]
        if self.self_conditioning:
            feats.append(torch.zeros_like(x) if sc is None else sc)
        h = self.encode(torch.cat(feats, dim=-1))
        mask = batch.mask
        if self.arch == "pairwise":
            pm = (mask[:, :, None] & mask[:, None, :]) & ~torch.eye(K, dtype=torch.bool)[None]
            rel = x[:, None, :, :3] - x[:, :, None, :3]  # (S, i, j, 3): j relative to i
            dyaw = x[:, None, :, 3] - x[:, :, None, 3]
            sz = batch.sizes[:, None, :, :].expand(S, K, K, 3) + batch.sizes[:, :, None, :]
            overlap = sz / 2 - rel.abs()  # per-axis box overlap, positive when boxes intersect
            edge = torch.cat([rel, torch.sin(dyaw)[..., None], torch.cos(dyaw)[..., None], sz, overlap], dim=-1)
            w = pm.to(h.dtype)[..., None]
            for msg, upd in zip(self.message, self.update):
                hi = h[:, :, None, :].expand(S, K, K, h.shape[-1])
                hj = h[:, None, :, :].expand(S, K, K, h.shape[-1])
                m = msg(torch.cat([hi, hj, edge], dim=-1)) * w
                agg = m.sum(2) / w.sum(2).clamp_min(1.0)
                h = h + upd(torch.cat([h, agg], dim=-1))
        ctx = _masked_mean(h, mask)[:, None, :].expand_as(h)
        v = self.out(self.decode(torch.cat([h, ctx, te], dim=-1)))
        return (v * mask.to(v.dtype)[..., None]).to(out_dtype)


def build_field(config: TrainConfig) -> VelocityField:
    torch.manual_seed(config.seed)
    return VelocityField(config.hidden_dim, config.arch, config.layers, config.capacity, config.self_conditioning)


# ---------------------------------------------------------------------------
# flow-matching pieces

def make_training_pair(gt_pose, coarse_pose, sigma: float, t, noise):
    """``x_0 = x^c + sigma * noise``, ``x_1 = x*`` with yaws re-branched next to
    ``x_0``; returns ``(x_t, v_target)``. Works on per-object (..., 4) arrays
    or tensors."""
    x0 = coarse_pose + sigma * noise
    x1 = gt_pose.clone() if isinstance(gt_pose, torch.Tensor) else np.array(gt_pose, dtype=float, copy=True)
    x1[..., 3] = branch_yaw(gt_pose[..., 3], x0[..., 3])
    tt = t[..., None, None] if isinstance(t, torch.Tensor) and t.ndim == 1 else t
    xt = (1 - tt) * x0 + tt * x1
    return xt, x1 - x0


def one_step_estimate(x_t, t, v):
    """``x_t + (1 - t) v``."""
    tt = t[..., None, None] if isinstance(t, torch.Tensor) and t.ndim == 1 else t
    return x_t + (1 - tt) * v


def flow_matching_loss(v_pred: torch.Tensor, v_target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean squared error over the valid (unpadded) pose dimensions."""
    m = mask.to(v_pred.dtype)[..., None]
    return (((v_pred - v_target) ** 2) * m).sum() / (m.sum() * v_pred.shape[-1]).clamp_min(1.0)


class _PhysicsFn(torch.autograd.Function):
    """Batch-mean of the weighted physics total at per-object poses; the
    gradient comes from the analytic numpy implementation."""

    @staticmethod
    def forward(ctx, x, instances, weights, terms):
        xs = x.detach().cpu().numpy()
        S = len(instances)
        res = batch_physics(instances, [slots_to_pose(xs[s, : inst.n]) for s, inst in enumerate(instances)],
                            weights, terms=terms)
        grad = np.zeros_like(xs)
        for s, (inst, r) in enumerate(zip(instances, res)):
            p, yw = split_pose_vector(r.grad, inst.n)
            grad[s, : inst.n, :3] = p
            grad[s, : inst.n, 3] = yw
        ctx.save_for_backward(torch.from_numpy(grad / S))
        ctx.parts = np.array([[r.obj_obj, r.obj_table, r.support] for r in res]).mean(0)
        return x.new_tensor(sum(r.total for r in res) / S)

    @staticmethod
    def backward(ctx, g):
        (grad,) = ctx.saved_tensors
        return g * grad, None, None, None


def physics_penalty(x: torch.Tensor, instances: Sequence[SceneInstance], weights: PhysicsWeights,
                    terms=ALL_TERMS) -> tuple[torch.Tensor, np.ndarray]:
    """Differentiable physics loss of per-object poses ``x`` (S, K, 4);
    returns ``(loss, [obj_obj, obj_table, support] batch means)``."""
    if not terms:
        return x.new_tensor(0.0), np.zeros(3)
    out = _PhysicsFn.apply(x, list(instances), weights, tuple(terms))
    parts = out.grad_fn.parts if out.grad_fn is not None else _parts(x, instances, weights, terms)
    return out, parts


def _parts(x, instances, weights, terms):
    xs = x.detach().cpu().numpy()
    res = batch_physics(instances, [slots_to_pose(xs[s, : inst.n]) for s, inst in enumerate(instances)],
                        weights, terms=terms, want_grad=False)
    return np.array([[r.obj_obj, r.obj_table, r.support] for r in res]).mean(0)


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainingSet:
    """Precomputed tensors for (coarse scene, ground truth) pairs."""

    batch: Batch
    gt: torch.Tensor  # (M, K, 4)
    instances: list[SceneInstance]

    def __len__(self):
        return len(self.instances)

    def subset(self, idx) -> tuple[Batch, torch.Tensor, list[SceneInstance]]:
        b = self.batch
        sel = torch.as_tensor(idx)
        sub = Batch(b.coarse[sel], b.emb[sel], b.sizes[sel], b.slots[sel], b.mask[sel]).trim()
        k = sub.mask.shape[1]
        return sub, self.gt[sel][:, :k], [self.instances[int(i)] for i in idx]


def prepare_training_set(pairs: Sequence[tuple[LayoutScene, LayoutScene]], library: GeometryLibrary,
                         capacity: int = SLOT_CAPACITY) -> TrainingSet:
    """``pairs`` are ``(coarse, ground_truth)`` scenes with matching objects."""
    if not pairs:
        raise ValueError("training set is empty")
    conds, gts, insts = [], [], []
    for coarse, gt in pairs:
        inst = SceneInstance.build(coarse, library)
        conds.append(build_condition(coarse, library, capacity, inst))
        g = np.zeros((capacity, 4))
        g[: inst.n] = pose_to_slots(to_pose_vector(gt), inst.n)
        gts.append(g)
        insts.append(inst)
    return TrainingSet(stack_conditions(conds), torch.tensor(np.stack(gts)), insts)


@dataclass
class StepMetrics:
    flow: float
    physics: float
    obj_obj: float
    obj_table: float
    support: float
    total: float


def _sample_batch_inputs(data_gt, batch: Batch, sigma: float, gen: torch.Generator):
    S, K, _ = data_gt.shape
    t = torch.rand(S, generator=gen, dtype=torch.float64)
    noise = torch.randn(S, K, 4, generator=gen, dtype=torch.float64)
    return t, noise


def training_loss(model: VelocityField, batch: Batch, gt: torch.Tensor, instances, config: TrainConfig,
                  t: torch.Tensor, noise: torch.Tensor, sc_draw: float = 1.0) -> tuple[torch.Tensor, StepMetrics]:
    xt, target = make_training_pair(gt, batch.coarse, config.sigma, t, noise)
    m = batch.mask.to(xt.dtype)[..., None]
    xt, target = xt * m, target * m
    sc = None
    if model.self_conditioning and sc_draw < 0.5:
        with torch.no_grad():
            sc = one_step_estimate(xt, t, model(xt, t, batch))
    v = model(xt, t, batch, sc)
    flow = flow_matching_loss(v, target, batch.mask)
    at = one_step_estimate(xt, t, v) if config.physics_at == "x1_hat" else xt
    phys, parts = physics_penalty(at, instances, config.weights, config.terms)
    total = flow + phys
    return total, StepMetrics(float(flow.detach()), float(phys.detach()), *map(float, parts), float(total.detach()))


def training_step(model: VelocityField, opt: torch.optim.Optimizer, batch: Batch, gt: torch.Tensor,
                  instances, config: TrainConfig, gen: torch.Generator) -> StepMetrics:
    t, noise = _sample_batch_inputs(gt, batch, config.sigma, gen)
    sc_draw = float(torch.rand(1, generator=gen, dtype=torch.float64))
    loss, met = training_loss(model, batch, gt, instances, config, t, noise, sc_draw)
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"non-finite training loss: {met}")
    opt.zero_grad()
    loss.backward()
    if config.grad_clip > 0:
        nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    opt.step()
    return met


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def write_csv(self, path) -> None:
        cols = ["epoch", "flow_loss", "obj_obj", "obj_table", "sup", "physics", "seconds"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r[k] for k in cols})


def train(data: TrainingSet, config: TrainConfig, out_dir: str | Path | None = None,
          model: VelocityField | None = None, progress: Callable[[dict], None] | None = None) -> tuple[VelocityField, TrainLog]:
    """Adam on flow loss + physics penalties. Deterministic for a fixed seed."""
    if len(data) == 0:
        raise ValueError("training set is empty")
    model = model or build_field(config)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    gen = torch.Generator().manual_seed(config.seed)
    log_ = TrainLog()
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    M = len(data)
    for epoch in range(1, config.epochs + 1):
        perm = torch.randperm(M, generator=gen)
        acc = np.zeros(5)
        n_b = 0
        for k in range(0, M, config.batch_size):
            idx = perm[k:k + config.batch_size].tolist()
            batch, gt, insts = data.subset(idx)
            met = training_step(model, opt, batch, gt, insts, config, gen)
            acc += [met.flow, met.obj_obj, met.obj_table, met.support, met.physics]
            n_b += 1
        acc /= n_b
        row = {"epoch": epoch, "flow_loss": acc[0], "obj_obj": acc[1], "obj_table": acc[2], "sup": acc[3],
               "physics": acc[4], "seconds": round(time.perf_counter() - start, 3)}
        log_.rows.append(row)
        if progress:
            progress(row)
        log.info("epoch %d flow %.5f oo %.2e ot %.2e sup %.2e", epoch, acc[0], acc[1], acc[2], acc[3])
        if out and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(model, config, out / f"epoch{epoch:04d}.pt")
    if out:
        save_checkpoint(model, config, out / "final.pt")
        log_.write_csv(out / "train_log.csv")
    return model, log_


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(model: VelocityField, config: TrainConfig, path) -> None:
    payload = {"format": CHECKPOINT_FORMAT, "config": json.dumps(config.to_dict(), sort_keys=True),
               "config_hash": config.digest(), "state": model.state_dict()}
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[VelocityField, TrainConfig]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    config = TrainConfig.from_dict(json.loads(payload["config"]))
    if config.digest() != payload["config_hash"]:
        raise ConfigError(f"{path}: config hash mismatch")
    model = VelocityField(config.hidden_dim, config.arch, config.layers, config.capacity, config.self_conditioning)
    model.load_state_dict(payload["state"])
    model.eval()
    return model, config


# ---------------------------------------------------------------------------
# inference

def integrate_ode(x0, field_fn: Callable, steps: int = 32, solver: str = "euler"):
    """Fixed-step integration of ``dx/dt = field_fn(x, t)`` from t=0 to t=1.

    Works on numpy arrays and torch tensors alike.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if solver not in ("euler", "rk4"):
        raise ValueError(f"unknown solver {solver!r}")
    h = 1.0 / steps
    x = x0
    for k in range(steps):
        t = k * h
        if solver == "euler":
            x = x + h * field_fn(x, t)
        else:
            k1 = field_fn(x, t)
            k2 = field_fn(x + 0.5 * h * k1, t + 0.5 * h)
            k3 = field_fn(x + 0.5 * h * k2, t + 0.5 * h)
            k4 = field_fn(x + h * k3, t + h)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        finite = torch.isfinite(x).all() if isinstance(x, torch.Tensor) else np.isfinite(x).all()
        if not finite:
            raise NonFiniteState(f"ODE state became non-finite at step {k + 1}")
    return x


def _model_field(model: VelocityField, batch: Batch):
    state = {"sc": None}

    def f(x, t):
        tt = torch.full((x.shape[0],), float(t), dtype=x.dtype)
        v = model(x, tt, batch, state["sc"])
        if model.self_conditioning:
            state["sc"] = one_step_estimate(x, tt, v)
        return v
    return f


def correct_many(scenes: Sequence[LayoutScene], model: VelocityField, library: GeometryLibrary,
                 steps: int = 32, solver: str = "euler", capacity: int | None = None) -> list[LayoutScene]:
    """Correct a batch of scenes in one ODE solve. Scenes do not interact,
    but batched matmuls may round differently from single-scene calls."""
    cap = capacity or model.instance.num_embeddings
    conds = [build_condition(s, library, cap) for s in scenes]
    if not conds:
        return []
    batch = stack_conditions(conds).trim()
    with torch.no_grad():
        x = integrate_ode(batch.coarse.clone(), _model_field(model, batch), steps, solver).numpy()
    out = []
    for s, (scene, c) in enumerate(zip(scenes, conds)):
        out.append(apply_pose_vector(scene, slots_to_pose(x[s, : c.n])) if c.n else scene)
    return out


def correct(scene: LayoutScene, model: VelocityField, library: GeometryLibrary, steps: int = 32,
            solver: str = "euler") -> LayoutScene:
    """Integrate the learned field from the scene's poses; only poses change
    and yaws come back wrapped."""
    return correct_many([scene], model, library, steps, solver)[0]


class FlowCorrector:
    """Callable ``scene -> scene`` bundling a field, its library and solver."""

    def __init__(self, model: VelocityField, library: GeometryLibrary, steps: int = 32, solver: str = "euler"):
        self.model = model
        self.library = library
        self.steps = steps
        self.solver = solver

    @classmethod
    def from_checkpoint(cls, path, library: GeometryLibrary, steps: int | None = None, solver: str | None = None):
        model, cfg = load_checkpoint(path)
        return cls(model, library, steps or cfg.ode_steps, solver or cfg.solver)

    def __call__(self, scene: LayoutScene) -> LayoutScene:
        return correct(scene, self.model, self.library, self.steps, self.solver)

    def many(self, scenes: Sequence[LayoutScene]) -> list[LayoutScene]:
        return correct_many(scenes, self.model, self.library, self.steps, self.solver)
