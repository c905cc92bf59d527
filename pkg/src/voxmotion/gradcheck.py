"""Central finite-difference checks of every hand-written gradient.

Each check probes a handful of random coordinates (or every coordinate for
small tensors) in double precision and reports the worst relative error
``|fd - an| / max(|fd|, |an|, floor)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import Denoiser, ModelConfig
from .geometry import REST_POSE, toy_skeleton
from .heatmap import decode_raw, decode_raw_vjp, expectation, expectation_vjp
from .losses import LossWeights, loss_ori, loss_pos, loss_rec, loss_sk, loss_vel, total_loss
from .uiv import VolumeSpec

LOSS_TOL = 1e-4
PARAM_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    rel_err: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.rel_err) and self.rel_err < self.tol)


def _rel(fd: float, an: float, floor: float = 1e-6) -> float:
    return abs(fd - an) / max(abs(fd), abs(an), floor)


def fd_check(f, x: np.ndarray, grad: np.ndarray, rng, n_probe: int = 12, h: float = 1e-6) -> float:
    """Worst relative error between ``grad`` and central differences of ``f`` at ``x``."""
    flat = x.reshape(-1)
    idx = np.arange(flat.size) if flat.size <= n_probe else rng.choice(flat.size, n_probe, replace=False)
    # prefer coordinates where the analytic gradient is non-trivial
    if flat.size > n_probe:
        big = np.argsort(-np.abs(grad.reshape(-1)))[: n_probe // 2]
        idx = np.unique(np.concatenate([idx[: n_probe - len(big)], big]))
    worst = 0.0
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        worst = max(worst, _rel((fp - fm) / (2 * h), float(grad.reshape(-1)[i])))
    return worst


def _tiny_spec() -> VolumeSpec:
    return VolumeSpec((4, 4, 4), (0.5, 0.5, 0.5), (-1.0, 0.0, -1.0))


def _motion(rng, T: int, jitter: float = 0.05) -> np.ndarray:
    return REST_POSE[None] + jitter * rng.standard_normal((T, *REST_POSE.shape))


def run_all(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    topo = toy_skeleton()
    out = []

    # first moment w.r.t. positive weights
    spec = _tiny_spec()
    w = rng.uniform(0.1, 1.0, (2, *spec.dims))
    up = rng.standard_normal((2, 3))
    s = w.sum(axis=(-3, -2, -1))
    j = expectation(w, spec)
    g = expectation_vjp(j, up, spec, s)
    out.append(CheckResult("decode_expectation", fd_check(lambda: float((expectation(w, spec) * up).sum()), w, g, rng), LOSS_TOL))

    # clamp-normalize decode, including clamped voxels
    v = rng.uniform(-0.3, 1.0, (2, *spec.dims))
    jr, cache = decode_raw(v, spec)
    gr = decode_raw_vjp(cache, up, spec)
    out.append(CheckResult("decode_raw", fd_check(lambda: float((decode_raw(v, spec)[0] * up).sum()), v, gr, rng), LOSS_TOL))

    # loss terms in joint space
    T = 4
    pred, gt = _motion(rng, T), _motion(rng, T)
    a, b = rng.standard_normal((3, 5)), rng.standard_normal((3, 5))
    out.append(CheckResult("loss_rec", fd_check(lambda: loss_rec(a, b)[0], a, loss_rec(a, b)[1], rng), LOSS_TOL))
    for name, fn in (("loss_pos", loss_pos), ("loss_vel", loss_vel)):
        out.append(CheckResult(name, fd_check(lambda fn=fn: fn(pred, gt)[0], pred, fn(pred, gt)[1], rng), LOSS_TOL))
    out.append(CheckResult("loss_sk", fd_check(lambda: loss_sk(pred, gt, topo)[0], pred, loss_sk(pred, gt, topo)[1], rng), LOSS_TOL))
    p0, g0 = pred[0].copy(), gt[0].copy()
    out.append(CheckResult("loss_ori", fd_check(lambda: loss_ori(p0, g0, topo)[0], p0, loss_ori(p0, g0, topo)[1], rng), LOSS_TOL))

    # full objective through the decoder; a coarse grid keeps joints inside
    spec2 = VolumeSpec((6, 6, 6), (0.4, 0.4, 0.4), (-1.2, 0.0, -1.2))
    gt_j = _motion(rng, 2)
    field = rng.uniform(0.0, 1.0, (2, topo.K, *spec2.dims))
    target = rng.uniform(0.0, 1.0, field.shape)
    weights = LossWeights()
    rep = total_loss(field, target, gt_j, topo, weights, spec=spec2)
    f = lambda: total_loss(field, target, gt_j, topo, weights, spec=spec2, with_grad=False).total  # noqa: E731
    out.append(CheckResult("total_loss", fd_check(f, field, rep.grad, rng, n_probe=16), LOSS_TOL))

    out.extend(check_denoiser(rng))
    return out


def tiny_config() -> ModelConfig:
    return ModelConfig(dims=(4, 4, 4), pitch=(0.5, 0.5, 0.5), origin=(-1.0, 0.0, -1.0), T=2, K=2,
                       trunk_dims=(2, 2, 2), width=8, embed_dim=4, time_dim=4, pyramid=(2, 1))


def check_denoiser(rng, config: ModelConfig | None = None) -> list[CheckResult]:
    """FD check of every parameter tensor against a random linear readout of the output."""
    cfg = config or tiny_config()
    model = Denoiser(cfg, seed=int(rng.integers(1 << 30)), dtype=np.float64)
    # non-zero biases so every path is exercised
    for k in ("b1", "b2", "bo"):
        model.params[k] = 0.1 * rng.standard_normal(model.params[k].shape)
    B = 3
    x = rng.standard_normal((B, *cfg.field_shape))
    t = rng.integers(1, cfg.N + 1, size=B)
    stats = rng.uniform(0, 1, (B, cfg.n_stats))
    tasks = rng.integers(0, cfg.n_tasks, size=B)
    goals = rng.standard_normal((B, 3))
    readout = rng.standard_normal((B, *cfg.field_shape))

    def f():
        return float((model.forward(x, t, stats, tasks, goals)[0] * readout).sum())

    _, cache = model.forward(x, t, stats, tasks, goals)
    grads = model.backward(cache, readout)
    return [CheckResult(f"denoiser.{name}", fd_check(f, model.params[name], grads[name], rng, n_probe=10), PARAM_TOL)
            for name in model.params]


def format_table(results: list[CheckResult]) -> str:
    w = max(len(r.name) for r in results)
    lines = [f"{'check':<{w}}  {'rel_err':>10}  {'tol':>7}  status"]
    for r in results:
        lines.append(f"{r.name:<{w}}  {r.rel_err:>10.2e}  {r.tol:>7.0e}  {'ok' if r.ok else 'FAIL'}")
    return "\n".join(lines)
