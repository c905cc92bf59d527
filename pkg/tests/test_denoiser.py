import numpy as np
import pytest

from voxmotion.denoiser import (
    AdamState, Denoiser, ModelConfig, TaskCondition, TaskMixer, adam_update, apply3, batch_loss, interp_matrix,
    linear_lr, make_items, pool_matrix, pyramid_stats, sample_motions, train, train_step,
)
from voxmotion.diffusion import make_schedule
from voxmotion.errors import InvariantError
from voxmotion.gradcheck import check_denoiser, tiny_config
from voxmotion.losses import LossWeights
from voxmotion.synthdata import TaskId, generate
from voxmotion.uiv import empty_volume


def tiny_items(cfg, topo, n=4, task="reach"):
    from voxmotion.uiv import VolumeSpec

    big = VolumeSpec(cfg.dims, cfg.pitch, cfg.origin)
    samples = [generate(task, s, big, cfg.T, topo) for s in range(n)]
    return make_items(samples, cfg)


def small_cfg(**kw):
    base = dict(dims=(8, 8, 8), pitch=(0.3, 0.6, 0.6), T=2, trunk_dims=(2, 2, 2), width=16,
                embed_dim=4, time_dim=4, pyramid=(2, 1))
    base.update(kw)
    return ModelConfig(**base)


def test_cond_dim_formula():
    c = ModelConfig()
    assert c.cond_dim == 3 * (4**3 + 2**3 + 1**3) * 1 + c.embed_dim + 3
    m = Denoiser(c)
    conds = [TaskCondition(TaskId.HUMAN_SCENE, empty_volume(c.spec, c.T), np.array([1.0, 0, 2.0]))]
    st, tk, go = m.condition_arrays(conds)
    feat = m.encode_condition(st, tk, go)
    assert feat.shape == (1, c.cond_dim)
    assert not feat[0, : c.n_stats].any()  # empty volume pools to zero
    np.testing.assert_array_equal(feat[0, -3:], [1.0, 0.0, 2.0])
    no_goal = m.condition_arrays([TaskCondition(TaskId.HUMAN_OBJECT, empty_volume(c.spec, c.T))])
    assert not no_goal[2].any()


def test_pyramid_stats_frame_permutation(spec16, topo):
    s = generate("approach", 2, spec16, 8, topo)
    from voxmotion.uiv import build_uiv

    vol = build_uiv(s.entities, spec16)
    swapped = type(vol)(vol.spec, vol.codes[[1, 0, *range(2, vol.T)]])
    np.testing.assert_array_equal(pyramid_stats(vol), pyramid_stats(swapped))
    # occupancy fractions per channel at the coarsest scale
    onehot = vol.labels.mean(axis=(0, 1, 2, 3))
    np.testing.assert_allclose(pyramid_stats(vol)[-3:], onehot, atol=1e-12)


def test_pool_inverts_upsample(rng):
    for n_out, n_in in ((4, 16), (2, 8), (4, 48)):
        P, U = pool_matrix(n_out, n_in), interp_matrix(n_in, n_out)
        np.testing.assert_allclose(P @ U, np.eye(n_out), atol=1e-12)
        np.testing.assert_allclose(P.sum(1), 1.0, atol=1e-12)
        np.testing.assert_allclose(U.sum(1), 1.0, atol=1e-12)


def test_pooled_noise_covariance(rng):
    cfg = small_cfg(T=1, K=1)
    m = Denoiser(cfg)
    z = m.pooled_noise(rng, 20000).reshape(20000, -1)
    direct = apply3(rng.standard_normal((20000, 1, 1, *cfg.dims)), *m._pool).reshape(20000, -1)
    P = [pool_matrix(t, n) for t, n in zip(cfg.trunk_dims, cfg.dims)]
    cov = np.kron(np.kron(P[0] @ P[0].T, P[1] @ P[1].T), P[2] @ P[2].T)
    scale = np.abs(cov).max()
    assert np.abs(np.cov(z, rowvar=False) - cov).max() < 0.05 * scale
    assert np.abs(np.cov(direct, rowvar=False) - cov).max() < 0.05 * scale


def test_predict_shapes_and_determinism(topo, rng):
    cfg = small_cfg()
    m = Denoiser(cfg, seed=3)
    items = tiny_items(cfg, topo, 3, "goalwalk")
    st, tk, go = m.condition_arrays([it.cond for it in items])
    x = rng.standard_normal((3, *cfg.field_shape))
    a = m.predict_x0(x, np.array([5, 500, 1000]), st, tk, go)
    b = m.predict_x0(x, np.array([5, 500, 1000]), st, tk, go)
    assert a.shape == x.shape and a.tobytes() == b.tobytes()
    with pytest.raises(InvariantError):
        m.predict_x0(x[:, :1], 5, st, tk, go)


def test_fd_gradients_every_parameter():
    for r in check_denoiser(np.random.default_rng(0), tiny_config()):
        assert r.rel_err < 1e-3, r


def test_zero_upstream_and_finite_gradients(rng):
    cfg = tiny_config()
    m = Denoiser(cfg, seed=1)
    x = rng.standard_normal((2, *cfg.field_shape))
    st = rng.random((2, cfg.n_stats))
    _, cache = m.forward(x, np.array([3, 900]), st, [0, 2], rng.standard_normal((2, 3)))
    zero = m.backward(cache, np.zeros((2, *cfg.field_shape)))
    assert all(not g.any() for g in zero.values())
    g = m.backward(cache, rng.standard_normal((2, *cfg.field_shape)))
    assert set(g) == set(m.params) and all(np.all(np.isfinite(v)) for v in g.values())


def test_task_mixer_ratio():
    mixer = TaskMixer({TaskId.HUMAN_HUMAN: 1, TaskId.HUMAN_OBJECT: 1, TaskId.HUMAN_SCENE: 1},
                      np.random.default_rng(0))
    draws = [mixer.draw() for _ in range(3000)]
    for t in (TaskId.HUMAN_HUMAN, TaskId.HUMAN_OBJECT, TaskId.HUMAN_SCENE):
        assert 0.30 <= draws.count(t) / 3000 <= 0.3667
    with pytest.raises(InvariantError):
        TaskMixer({TaskId.HUMAN_HUMAN: 0}, np.random.default_rng(0))


def test_adam_single_step_oracle():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, 0.0])}
    s = AdamState.zeros_like(p)
    adam_update(p, g, s, 0.1)
    # first bias-corrected step moves by lr * sign(g) where g != 0
    np.testing.assert_allclose(p["w"], [1.0 - 0.1 * 0.5 / (0.5 + 1e-8), -2.0])
    assert linear_lr(1.0, 0, 10) == 1.0 and linear_lr(1.0, 5, 10) == 0.5 and linear_lr(1.0, 20, 10) == 0.0


def test_train_step_lr_zero_and_determinism(topo):
    cfg = small_cfg()
    items = tiny_items(cfg, topo)
    sched = make_schedule()

    def run(lr):
        m = Denoiser(cfg, seed=0)
        opt = AdamState.zeros_like(m.params)
        train_step(m, opt, items, sched, LossWeights(), np.random.default_rng(9), topo, lr)
        return m.params

    base = Denoiser(cfg, seed=0).params
    frozen = run(0.0)
    assert all(np.array_equal(frozen[k], base[k]) for k in base)
    a, b = run(1e-3), run(1e-3)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert any(not np.array_equal(a[k], base[k]) for k in a)


def test_reach_training_halves_heldout_loss(topo):
    """Training on the reach task halves the held-out loss (fixed noise and timesteps)."""
    cfg = small_cfg(T=4, width=64)
    train_items = tiny_items(cfg, topo, 48)
    from voxmotion.uiv import VolumeSpec

    spec = VolumeSpec(cfg.dims, cfg.pitch, cfg.origin)
    held = make_items([generate("reach", 1000 + s, spec, cfg.T, topo) for s in range(16)], cfg)
    sched = make_schedule()
    ts = np.linspace(1, 1000, 16).astype(int)

    def heldout(m):
        rep, _ = batch_loss(m, held, sched, LossWeights(), np.random.default_rng(0), topo,
                            timesteps=ts, with_grad=False)
        return rep.total

    m = Denoiser(cfg, seed=0)
    before = heldout(m)
    res = train(train_items, cfg, sched, topo, 400, batch=16, lr=2e-3, seed=0, model=m)
    after = heldout(res.model)
    assert after < 0.5 * before, (before, after)


def test_sample_motions_shapes(topo):
    cfg = small_cfg()
    m = Denoiser(cfg, seed=0)
    conds = [it.cond for it in tiny_items(cfg, topo, 2, "goalwalk")]
    fields, joints = sample_motions(m, conds, make_schedule(), 5, seed=2)
    assert fields.shape == (2, *cfg.field_shape) and joints.shape == (2, cfg.T, cfg.K, 3)
    f2, j2 = sample_motions(m, conds, make_schedule(), 5, seed=2)
    assert fields.tobytes() == f2.tobytes()
    _, jp = sample_motions(m, conds, make_schedule(), 5, seed=2, project=True)
    assert np.all(np.isfinite(jp))


def test_checkpoint_round_trip_via_cli_loader(tmp_path, topo):
    from voxmotion.cli import _save_model, load_model
    from voxmotion.config import profile
    from voxmotion.errors import FormatError

    cfg = small_cfg()
    m = Denoiser(cfg, seed=4)
    _save_model(tmp_path / "m.uck", m, AdamState.zeros_like(m.params), profile("desk"), 0)
    back, meta = load_model(tmp_path / "m.uck")
    assert back.config == cfg and meta["run"]["profile"] == "desk"
    for k in m.params:
        np.testing.assert_array_equal(back.params[k], m.params[k].astype(np.float32))
    m.params["Wx"] = m.params["Wx"][:-1]
    _save_model(tmp_path / "bad.uck", m, None, profile("desk"), 0)
    with pytest.raises(FormatError):
        load_model(tmp_path / "bad.uck")
