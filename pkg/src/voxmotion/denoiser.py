"""Small x0-predicting denoiser with hand-written reverse-mode gradients.

Forward pass for a batch of noisy heatmaps ``x`` (B, T, K, H, W, D):

    xp  = pool(x)                         fixed linear pooling to the trunk grid
    c   = [uiv pyramid stats, task embedding, goal]
    g   = goal bumps over the horizontal trunk cells
    e   = sinusoidal(timestep)
    h1  = silu(xp Wx + c Wc + g Wg + e Wt + b1)
    h2  = h1 + silu(h1 W2 + b2)
    F   = h2 Wo + g Wgo + bo
    out = upsample(c_skip xp + c_out F)   back to the full grid

``c_skip`` and ``c_out`` depend on the timestep and follow from the linear
posterior mean of zero-mean data with scale ``data_scale`` under the pooled
noise variance, so the network only has to model the residual. Without the
skip the deterministic sampler amplifies trunk errors once alpha_bar
approaches 1. ``data_scale`` sits below the measured pooled RMS (about 0.3)
on purpose: a smaller prior hands more of the mid-noise prediction to the
trunk, which sees the condition, and less to the skip, which only copies
the current estimate.

The goal bumps are a fixed Gaussian of the goal's (x, z) distance to each
trunk cell centre, one per cell of the horizontal trunk plane. They let the
first layer and, through ``Wgo``, the output place the final root near
the goal with a near-linear map, which the raw 3-vector alone does not.

The UIV pyramid statistics are average-pooled label occupancies at 4^3, 2^3
and 1^3 per semantic channel, so the condition path injects every scale
into the first trunk layer.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .diffusion import DiffusionSchedule, forward_noise, make_schedule, sample as ddim_sample
from .errors import InvariantError, NumericalError
from .geometry import SkeletonTopology
from .heatmap import amplitude, decode_raw, encode_joints, unbiased_centers
from .losses import LossReport, LossWeights, total_loss
from .synthdata import TaskId, ToySample
from .uiv import SemanticVolume, VolumeSpec, build_uiv

PARAM_NAMES = ("task_emb", "Wx", "Wc", "Wg", "Wt", "b1", "W2", "b2", "Wo", "Wgo", "bo")


@dataclass(frozen=True)
class ModelConfig:
    dims: tuple = (16, 16, 16)
    pitch: tuple = (0.15, 0.30, 0.30)
    origin: tuple = (-2.4, 0.0, -2.4)
    T: int = 8
    K: int = 8
    trunk_dims: tuple = (4, 4, 4)
    width: int = 64
    embed_dim: int = 16
    time_dim: int = 16
    n_tasks: int = 4
    pyramid: tuple = (4, 2, 1)
    temporal_chunks: int = 1
    sigma: float = 3.0
    N: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    data_scale: float = 0.1

    def __post_init__(self):
        for name in ("dims", "pitch", "origin", "trunk_dims", "pyramid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def spec(self) -> VolumeSpec:
        return VolumeSpec(self.dims, self.pitch, self.origin)

    @property
    def field_shape(self) -> tuple:
        return (self.T, self.K, *self.dims)

    @property
    def n_stats(self) -> int:
        return 3 * self.temporal_chunks * sum(p**3 for p in self.pyramid)

    @property
    def cond_dim(self) -> int:
        return self.n_stats + self.embed_dim + 3

    @property
    def goal_dim(self) -> int:
        return self.trunk_dims[1] * self.trunk_dims[2]

    @property
    def trunk_in(self) -> int:
        return self.T * self.K * int(np.prod(self.trunk_dims))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TaskCondition:
    task_id: TaskId
    uiv: SemanticVolume
    goal: np.ndarray | None = None
    _stats: np.ndarray | None = field(default=None, repr=False, compare=False)

    def stats(self, config: ModelConfig) -> np.ndarray:
        if self._stats is None:
            if self.uiv.spec != config.spec:
                raise InvariantError("condition volume spec does not match the model")
            self._stats = pyramid_stats(self.uiv, config.pyramid, config.temporal_chunks)
        return self._stats


def interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Linear interpolation (cell-centered, edge-clamped) from n_in to n_out samples."""
    M = np.zeros((n_out, n_in))
    x = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    x = np.clip(x, 0, n_in - 1)
    lo = np.floor(x).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    w = x - lo
    M[np.arange(n_out), lo] += 1 - w
    M[np.arange(n_out), hi] += w
    return M


def pool_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Least-squares left inverse of the upsampler, so pool(upsample(o)) == o.

    Rows sum to 1 because the upsampler reproduces constants. The exact
    inverse keeps DDIM on the full grid equivalent to DDIM at trunk
    resolution, which is what training sees.
    """
    U = interp_matrix(n_in, n_out)
    return np.linalg.solve(U.T @ U, U.T)


def avg_pool_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Adaptive average pooling bins."""
    P = np.zeros((n_out, n_in))
    for i in range(n_out):
        a = (i * n_in) // n_out
        b = -((-(i + 1) * n_in) // n_out)
        P[i, a:b] = 1.0 / (b - a)
    return P


def apply3(x: np.ndarray, mh, mw, md) -> np.ndarray:
    """Contract the last three axes of ``x`` with per-axis matrices (new x old)."""
    y = x @ md.T
    y = np.swapaxes(np.swapaxes(y, -1, -2) @ mw.T, -1, -2)
    y = np.moveaxis(np.moveaxis(y, -3, -1) @ mh.T, -1, -3)
    return y


def pyramid_stats(uiv: SemanticVolume, scales=(4, 2, 1), chunks: int = 1) -> np.ndarray:
    """Average-pooled one-hot occupancy per channel at several scales."""
    onehot = np.moveaxis(uiv.labels.astype(np.float64), -1, 0)  # (3, T, H, W, D)
    groups = np.array_split(np.arange(uiv.T), chunks)
    feats = []
    for g in groups:
        mean = onehot[:, g].mean(axis=1) if len(g) else np.zeros(onehot.shape[:1] + onehot.shape[2:])
        for s in scales:
            mats = [avg_pool_matrix(s, n) for n in uiv.spec.dims]
            feats.append(apply3(mean, *mats).ravel())
    return np.concatenate(feats)


def timestep_embedding(i, dim: int) -> np.ndarray:
    i = np.atleast_1d(np.asarray(i, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = i[:, None] * freqs[None]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _silu(a):
    s = 0.5 * (1.0 + np.tanh(0.5 * a))
    return a * s, s


def _silu_grad(a, s):
    return s * (1.0 + a * (1.0 - s))


class Denoiser:
    """Parameters plus forward/backward for the trunk described in the module docstring."""

    def __init__(self, config: ModelConfig, params: dict | None = None, seed: int = 0,
                 dtype=np.float64):
        self.config = config
        self.dtype = dtype
        c = config
        pools = [pool_matrix(t, n) for t, n in zip(c.trunk_dims, c.dims)]
        self._pool = [p.astype(dtype) for p in pools]
        self._up = [interp_matrix(n, t).astype(dtype) for t, n in zip(c.trunk_dims, c.dims)]
        # pooled white noise has covariance kron(P P^T); its per-axis Cholesky factors
        self._noise_chol = [np.linalg.cholesky(p @ p.T).astype(dtype) for p in pools]
        dh, dw, dd = (np.diag(p @ p.T) for p in pools)
        self._noise_var = dh[:, None, None] * dw[None, :, None] * dd[None, None, :]
        self._alpha_bar = make_schedule(c.N, c.beta_start, c.beta_end).alpha_bar
        self.params = params if params is not None else self.init_params(seed)
        self.check_shapes()

    def param_shapes(self) -> dict:
        c = self.config
        return {
            "task_emb": (c.n_tasks, c.embed_dim),
            "Wx": (c.trunk_in, c.width),
            "Wc": (c.cond_dim, c.width),
            "Wg": (c.goal_dim, c.width),
            "Wt": (c.time_dim, c.width),
            "b1": (c.width,),
            "W2": (c.width, c.width),
            "b2": (c.width,),
            "Wo": (c.width, c.trunk_in),
            "Wgo": (c.goal_dim, c.trunk_in),
            "bo": (c.trunk_in,),
        }

    def init_params(self, seed: int) -> dict:
        rng = np.random.default_rng(seed)
        p = {}
        for name, shape in self.param_shapes().items():
            if name.startswith("b") or name == "Wgo":
                p[name] = np.zeros(shape)
            elif name == "task_emb":
                p[name] = rng.standard_normal(shape) * 0.5
            else:
                scale = 1.0 / np.sqrt(shape[0])
                if name == "Wo":
                    scale *= 0.5
                p[name] = rng.standard_normal(shape) * scale
        return {k: v.astype(self.dtype) for k, v in p.items()}

    def check_shapes(self) -> None:
        for name, shape in self.param_shapes().items():
            if name not in self.params:
                raise InvariantError(f"missing parameter {name}")
            if tuple(self.params[name].shape) != tuple(shape):
                raise InvariantError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise NumericalError(f"parameter {name} is not finite")

    # condition features ------------------------------------------------
    def encode_condition(self, stats, task_ids, goals) -> np.ndarray:
        """Concatenate pyramid stats (B, S), task embeddings and goals (B, 3)."""
        emb = self.params["task_emb"][np.asarray(task_ids, dtype=int)]
        return np.concatenate([np.asarray(stats, self.dtype), emb, np.asarray(goals, self.dtype)], axis=1)

    def goal_features(self, goals) -> np.ndarray:
        """Gaussian bumps (B, w*d) of the goal's ground-plane distance to each trunk cell centre."""
        c = self.config
        lo = np.asarray(c.origin, float)
        ext = np.array([c.dims[1] * c.pitch[1], c.dims[2] * c.pitch[2]])
        n = np.array(c.trunk_dims[1:])
        cell = ext / n
        cx = lo[0] + (np.arange(n[0]) + 0.5) * cell[0]
        cz = lo[2] + (np.arange(n[1]) + 0.5) * cell[1]
        g = np.asarray(goals, float)
        dx = (g[:, 0, None] - cx[None]) / cell[0]
        dz = (g[:, 2, None] - cz[None]) / cell[1]
        bump = np.exp(-0.5 * (dx[:, :, None] ** 2 + dz[:, None, :] ** 2))
        return bump.reshape(len(g), -1).astype(self.dtype)

    def condition_arrays(self, conds) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        stats = np.stack([c.stats(self.config) for c in conds])
        tasks = np.array([int(c.task_id) for c in conds])
        goals = np.stack([np.zeros(3) if c.goal is None else np.asarray(c.goal, float) for c in conds])
        return stats, tasks, goals

    # forward / backward ------------------------------------------------
    def pool(self, x):
        return apply3(x, *self._pool)

    def pooled_noise(self, rng, batch: int) -> np.ndarray:
        """Sample of pool(white noise) drawn directly at trunk resolution."""
        c = self.config
        z = rng.standard_normal((batch, c.T, c.K, *c.trunk_dims), dtype=self.dtype)
        return apply3(z, *self._noise_chol)

    def precondition(self, t, batch: int):
        """Per-sample (c_skip, c_out) broadcastable to (B, T, K, h, w, d)."""
        ab = self._alpha_bar[np.broadcast_to(np.asarray(t, dtype=int), (batch,))]
        ab = ab[:, None, None, None, None, None]
        var_n = (1.0 - ab) * self._noise_var
        sd2 = self.config.data_scale**2
        tot = ab * sd2 + var_n
        c_skip = np.sqrt(ab) * sd2 / tot
        c_out = self.config.data_scale * np.sqrt(var_n / tot)
        return c_skip.astype(self.dtype), c_out.astype(self.dtype)

    def forward(self, x, t, stats, task_ids, goals):
        return self.forward_pooled(self.pool(x), t, stats, task_ids, goals)

    def forward_pooled(self, xp, t, stats, task_ids, goals):
        c, P = self.config, self.params
        B = xp.shape[0]
        c_skip, c_out = self.precondition(t, B)
        skip = c_skip * xp
        xp = xp.reshape(B, -1)
        cond = self.encode_condition(stats, task_ids, goals)
        gf = self.goal_features(goals)
        temb = timestep_embedding(np.broadcast_to(t, (B,)), c.time_dim).astype(self.dtype)
        a1 = xp @ P["Wx"] + cond @ P["Wc"] + gf @ P["Wg"] + temb @ P["Wt"] + P["b1"]
        h1, s1 = _silu(a1)
        a2 = h1 @ P["W2"] + P["b2"]
        z2, s2 = _silu(a2)
        h2 = h1 + z2
        o = skip + c_out * (h2 @ P["Wo"] + gf @ P["Wgo"] + P["bo"]).reshape(B, c.T, c.K, *c.trunk_dims)
        out = apply3(o, *self._up)
        cache = (xp, cond, gf, temb, a1, s1, h1, a2, s2, h2, np.asarray(task_ids, dtype=int), c_out)
        return out, cache

    def predict_x0(self, x, t, stats, task_ids, goals):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.config.field_shape:
            raise InvariantError(f"input shape {x.shape[1:]} != {self.config.field_shape}")
        return self.forward(x, t, stats, task_ids, goals)[0]

    def backward(self, cache, g_out) -> dict:
        """Parameter gradients given dL/d(out)."""
        c, P = self.config, self.params
        xp, cond, gf, temb, a1, s1, h1, a2, s2, h2, task_ids, c_out = cache
        B = g_out.shape[0]
        g_o = (c_out * apply3(g_out, *[m.T for m in self._up])).reshape(B, -1)
        grads = {"Wo": h2.T @ g_o, "Wgo": gf.T @ g_o, "bo": g_o.sum(axis=0)}
        g_h2 = g_o @ P["Wo"].T
        g_a2 = g_h2 * _silu_grad(a2, s2)
        grads["W2"] = h1.T @ g_a2
        grads["b2"] = g_a2.sum(axis=0)
        g_h1 = g_h2 + g_a2 @ P["W2"].T
        g_a1 = g_h1 * _silu_grad(a1, s1)
        grads["Wx"] = xp.T @ g_a1
        grads["Wc"] = cond.T @ g_a1
        grads["Wg"] = gf.T @ g_a1
        grads["Wt"] = temb.T @ g_a1
        grads["b1"] = g_a1.sum(axis=0)
        g_cond = g_a1 @ P["Wc"].T
        s0 = c.n_stats
        g_emb = np.zeros_like(P["task_emb"])
        np.add.at(g_emb, task_ids, g_cond[:, s0 : s0 + c.embed_dim])
        grads["task_emb"] = g_emb
        return grads


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()})


def adam_update(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for k, g in grads.items():
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        if lr:
            params[k] -= lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + state.eps)


def linear_lr(base: float, step: int, total: int) -> float:
    """Learning rate decayed linearly to zero over ``total`` steps."""
    return base * max(0.0, 1.0 - step / max(total, 1))


@dataclass
class TrainItem:
    """A ground-truth motion with its precomputed condition."""

    joints: np.ndarray  # (T, K, 3)
    cond: TaskCondition


def make_items(samples: list[ToySample], config: ModelConfig) -> list[TrainItem]:
    spec = config.spec
    items = []
    for s in samples:
        if s.gt_motion.positions.shape[:2] != (config.T, config.K):
            raise InvariantError("sample frame/joint count does not match the model")
        cond = TaskCondition(s.task_id, build_uiv(s.entities, spec), s.goal)
        cond.stats(config)
        items.append(TrainItem(s.gt_motion.positions, cond))
    return items


def target_fields(joints: np.ndarray, config: ModelConfig, dtype=np.float64) -> np.ndarray:
    """Amplitude-scaled ground-truth heatmaps for joints (..., T, K, 3)."""
    vals, _ = encode_joints(joints, config.spec, config.sigma, dtype=dtype,
                            scale=amplitude(config.sigma))
    return vals


class TaskMixer:
    """Draws task ids in a fixed integer ratio using shuffled bags."""

    def __init__(self, ratio: dict, rng: np.random.Generator):
        self.ratio = {TaskId(k): int(v) for k, v in ratio.items() if int(v) > 0}
        if not self.ratio:
            raise InvariantError("task mix must have a positive entry")
        self.rng = rng
        self._bag: list = []

    def draw(self) -> TaskId:
        if not self._bag:
            bag = [t for t, n in self.ratio.items() for _ in range(n)]
            self._bag = [bag[i] for i in self.rng.permutation(len(bag))]
        return self._bag.pop()


DEFAULT_MIX = {TaskId.HUMAN_HUMAN: 1, TaskId.HUMAN_OBJECT: 1, TaskId.HUMAN_SCENE: 1}


def draw_batch(items_by_task: dict, mixer: TaskMixer, batch: int, rng) -> list[TrainItem]:
    out = []
    for _ in range(batch):
        task = mixer.draw()
        pool = items_by_task[task]
        out.append(pool[int(rng.integers(len(pool)))])
    return out


def batch_loss(model: Denoiser, batch: list[TrainItem], sched: DiffusionSchedule,
               weights: LossWeights, rng: np.random.Generator, topo: SkeletonTopology,
               timesteps=None, with_grad: bool = True):
    """Noise a batch, predict x0 and evaluate the weighted objective.

    The trunk only sees the pooled noisy field, and pooling is linear, so the
    corruption is applied at trunk resolution: ``forward_noise(pool(x0))``
    with noise drawn from the exact distribution of pooled white noise.

    Returns ``(report, grads)``; grads is None when ``with_grad`` is False.
    """
    cfg = model.config
    joints = np.stack([it.joints for it in batch])
    x0 = target_fields(joints, cfg, model.dtype)
    B = len(batch)
    if timesteps is None:
        timesteps = rng.integers(1, sched.N + 1, size=B)
    xp_t = forward_noise(model.pool(x0), timesteps, model.pooled_noise(rng, B), sched)
    stats, tasks, goals = model.condition_arrays([it.cond for it in batch])
    out, cache = model.forward_pooled(xp_t, timesteps, stats, tasks, goals)
    report = total_loss(out, x0, joints, topo, weights, spec=cfg.spec, with_grad=with_grad)
    grads = model.backward(cache, report.grad.astype(model.dtype, copy=False)) if with_grad else None
    return report, grads


def train_step(model: Denoiser, opt: AdamState, batch: list[TrainItem], sched: DiffusionSchedule,
               weights: LossWeights, rng: np.random.Generator, topo: SkeletonTopology,
               lr: float) -> LossReport:
    report, grads = batch_loss(model, batch, sched, weights, rng, topo)
    if not np.isfinite(report.total):
        raise NumericalError(f"non-finite loss {report.terms}")
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {k}")
    adam_update(model.params, grads, opt, lr)
    return report


@dataclass
class TrainResult:
    model: Denoiser
    opt: AdamState
    history: list  # per-step dicts of loss terms


def train(items: list[TrainItem], config: ModelConfig, sched: DiffusionSchedule, topo: SkeletonTopology,
          steps: int, batch: int = 16, lr: float = 3e-5, seed: int = 0, mix: dict | None = None,
          weights: LossWeights = LossWeights(), model: Denoiser | None = None,
          log_every: int = 0, logger=None) -> TrainResult:
    rng = np.random.default_rng(seed)
    model = model or Denoiser(config, seed=seed)
    opt = AdamState.zeros_like(model.params)
    by_task: dict = {}
    for it in items:
        by_task.setdefault(TaskId(it.cond.task_id), []).append(it)
    mix = {k: v for k, v in (mix or DEFAULT_MIX).items() if TaskId(k) in by_task and v > 0}
    mixer = TaskMixer(mix, rng)
    history = []
    for step in range(steps):
        b = draw_batch(by_task, mixer, batch, rng)
        rep = train_step(model, opt, b, sched, weights, rng, topo, linear_lr(lr, step, steps))
        history.append({"step": step, "total": rep.total, **rep.terms})
        if log_every and logger and (step % log_every == 0 or step == steps - 1):
            logger(step, rep)
    return TrainResult(model, opt, history)


def sample_motions(model: Denoiser, conds: list[TaskCondition], sched: DiffusionSchedule,
                   step_count: int = 50, seed: int = 0, project: bool = False):
    """DDIM-sample heatmaps for each condition and decode them to joints.

    With ``project`` every x0 estimate is decoded to joints and re-encoded as
    clean Gaussians before the DDIM update, which keeps the sampler on the
    manifold of well-formed heatmaps. The re-encode is centred so that it
    decodes back to the same joints; otherwise the inward decode bias near
    the faces compounds over the steps.

    Returns ``(fields, joints)`` with fields (B, T, K, H, W, D) in amplitude
    space and joints (B, T, K, 3).
    """
    cfg = model.config
    stats, tasks, goals = model.condition_arrays(conds)

    def denoise(x, i, _):
        x0 = model.predict_x0(x, np.full(len(conds), i), stats, tasks, goals)
        if project:
            j, _ = decode_raw(x0.astype(np.float64), cfg.spec)
            j = unbiased_centers(j, cfg.spec, cfg.sigma)
            x0, _ = encode_joints(j, cfg.spec, cfg.sigma, dtype=model.dtype, scale=amplitude(cfg.sigma))
        return x0

    fields = ddim_sample(denoise, None, sched, (len(conds), *cfg.field_shape), step_count, seed,
                         dtype=model.dtype)
    joints, _ = decode_raw(fields.astype(np.float64), cfg.spec)
    return fields, joints
