import json

import numpy as np
import pytest

from voxmotion import cli
from voxmotion import config as cfgmod
from voxmotion import gradcheck
from voxmotion.formats import (
    read_checkpoint, read_field, read_motion, read_ply_vertices, read_sidecar, read_volume, write_motion,
)
from voxmotion.geometry import REST_POSE, MotionSequence
from voxmotion.uiv import default_spec, voxel_to_world


def run(*argv):
    return cli.main([str(a) for a in argv])


def tree_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_gen_data_byte_identical(tmp_path):
    assert run("gen-data", "--task", "reach", "--count", 10, "--seed", 7, "--out", tmp_path / "a") == 0
    assert run("gen-data", "--task", "reach", "--count", 10, "--seed", 7, "--out", tmp_path / "b") == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert len(a) == 30 and a == b
    run("gen-data", "--task", "reach", "--count", 10, "--seed", 8, "--out", tmp_path / "c")
    assert tree_bytes(tmp_path / "c") != a


def test_gen_data_mix_ratio(tmp_path):
    assert run("gen-data", "--task", "mix", "--mix", "1:1:1", "--count", 9, "--out", tmp_path) == 0
    names = [p.stem.split("_")[0] for p in tmp_path.glob("*.json")]
    assert sorted(names) == ["approach"] * 3 + ["goalwalk"] * 3 + ["reach"] * 3


def test_encode_decode_round_trip_full_profile(tmp_path, topo):
    spec = default_spec()
    rng = np.random.default_rng(3)
    # lifted pose, every joint at least 3 sigma voxels from each face of the 48^3 grid
    idx = rng.uniform(9, 38, (4, 8, 3))
    motion = MotionSequence(voxel_to_world(idx, spec))
    write_motion(tmp_path / "m.uim", motion, topo)
    assert run("encode", "--profile", "full", "--motion", tmp_path / "m.uim", "--out", tmp_path / "m.uhf") == 0
    assert read_field(tmp_path / "m.uhf").spec == spec
    assert run("decode", "--field", tmp_path / "m.uhf", "--like", tmp_path / "m.uim", "--out", tmp_path / "d.uim") == 0
    back, _ = read_motion(tmp_path / "d.uim")
    pitch = np.array([spec.pitch[1], spec.pitch[0], spec.pitch[2]])
    assert np.max(np.abs(back.positions - motion.positions) / pitch) < 0.05


def test_voxelize_and_export_ply(tmp_path, topo):
    pose = REST_POSE[None].repeat(2, 0) + np.array([0.0, 0.1, 0.0])
    write_motion(tmp_path / "m.uim", MotionSequence(pose), topo)
    (tmp_path / "box.json").write_text(json.dumps([[1.0, 0.5, 1.0], [1.1, 0.5, 1.0]]))
    assert run("voxelize", "--motion", tmp_path / "m.uim", "--points", f"{tmp_path / 'box.json'}:object",
               "--out", tmp_path / "v.uiv") == 0
    vol = read_volume(tmp_path / "v.uiv")
    assert vol.T == 2 and vol.count(1) > 0 and vol.count(2) > 0
    assert run("export-ply", "--volume", tmp_path / "v.uiv", "--motion", tmp_path / "m.uim",
               "--out", tmp_path / "v.ply") == 0
    pts, cols = read_ply_vertices(tmp_path / "v.ply")
    n_vox = int((vol.codes[0] > 0).sum())
    assert len(pts) == n_vox + 16
    assert {tuple(c) for c in cols[:n_vox]} <= {(230, 120, 40), (40, 120, 230)}
    assert np.all(cols[n_vox:] == (220, 30, 30))
    assert run("voxelize", "--points", "nofile", "--out", tmp_path / "x.uiv") == 1
    assert run("export-ply", "--volume", tmp_path / "v.uiv", "--frame", 5, "--out", tmp_path / "x.ply") == 3


def test_train_sample_eval_closure(tmp_path):
    conf = cfgmod.profile("desk").replace(width=16, steps=30, T=8)
    cfgmod.dump(conf, tmp_path / "run.json")
    data, gt = tmp_path / "data", tmp_path / "gt"
    assert run("gen-data", "--config", tmp_path / "run.json", "--task", "mix", "--count", 6, "--out", data) == 0
    assert run("gen-data", "--config", tmp_path / "run.json", "--task", "goalwalk", "--count", 3,
               "--seed", 11, "--out", gt) == 0
    ck = tmp_path / "m.uck"
    assert run("train", "--config", tmp_path / "run.json", "--data", data, "--out", ck, "--lr", 1e-3,
               "--figures", tmp_path) == 0
    meta, tensors = read_checkpoint(ck)
    assert meta["model"]["width"] == 16 and meta["run"]["lr"] == 1e-3 and meta["trained_steps"] == 30
    assert any(k.startswith("adam_m/") for k in tensors)
    assert (tmp_path / "loss.png").stat().st_size > 0 and ck.with_suffix(".loss.csv").exists()

    pred = tmp_path / "pred"
    assert run("sample", "--config", tmp_path / "run.json", "--ckpt", ck, "--cond", gt, "--out", pred,
               "--ddim-steps", 3, "--save-fields") == 0
    for stem in ("goalwalk_00000", "goalwalk_00001", "goalwalk_00002"):
        m, _ = read_motion(pred / f"{stem}.uim")
        assert np.all(np.isfinite(m.positions))
        assert read_sidecar(pred / f"{stem}.json")["goal"] is not None
        read_volume(pred / f"{stem}.uiv")
        read_field(pred / f"{stem}.uhf")
    # sampled conditions are themselves valid sample directories
    assert run("decode", "--field", pred / "goalwalk_00000.uhf", "--out", tmp_path / "d.uim") == 0

    assert run("eval", "--pred", pred, "--gt", gt, "--out", tmp_path / "rep.json", "--figures", tmp_path) == 0
    rep = json.loads((tmp_path / "rep.json").read_text())
    assert rep["goal_dist_cm"] is not None and rep["mpjpe_cm"] > 0
    assert "goal_dist_cm" in (tmp_path / "rep.txt").read_text()
    assert (tmp_path / "metrics.png").stat().st_size > 0 and (tmp_path / "root_paths.png").stat().st_size > 0
    # a training set can be scored against itself
    assert run("eval", "--pred", gt, "--gt", gt, "--out", tmp_path / "self.json") == 0
    assert json.loads((tmp_path / "self.json").read_text())["mpjpe_cm"] == 0


def test_dump_config_reload_is_identical_run(tmp_path):
    assert run("gen-data", "--task", "approach", "--count", 3, "--seed", 5, "--out", tmp_path / "a",
               "--dump-config", tmp_path / "eff.json") == 0
    assert cfgmod.load(tmp_path / "eff.json").seed == 5
    assert run("gen-data", "--config", tmp_path / "eff.json", "--task", "approach", "--count", 3,
               "--out", tmp_path / "b") == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_exit_codes(tmp_path, monkeypatch, capsys):
    assert run("no-such-command") == 1
    assert run("gen-data", "--task", "reach") == 1
    assert run("gen-data", "--task", "reach", "--count", 1, "--bogus", "--out", tmp_path) == 1
    assert run("decode", "--field", tmp_path / "missing.uhf", "--out", tmp_path / "x.uim") == 2
    (tmp_path / "bad.uhf").write_bytes(b"JUNKJUNKJUNK" * 10)
    assert run("decode", "--field", tmp_path / "bad.uhf", "--out", tmp_path / "x.uim") == 2
    assert run("gen-data", "--task", "mix", "--mix", "0:0:0", "--count", 2, "--out", tmp_path) == 3
    (tmp_path / "c.json").write_text('{"nested": {"a": 1}}')
    assert run("gen-data", "--config", tmp_path / "c.json", "--task", "reach", "--count", 1, "--out", tmp_path) == 2
    assert run("gradcheck") == 0

    real = gradcheck.decode_raw_vjp

    def wrong(cache, upstream, spec):
        return 2.0 * real(cache, upstream, spec)

    monkeypatch.setattr(gradcheck, "decode_raw_vjp", wrong)
    assert run("gradcheck") == 4
    assert "FAIL" in capsys.readouterr().out


def test_sample_rejects_nan_checkpoint(tmp_path):
    from voxmotion.denoiser import Denoiser

    conf = cfgmod.profile("desk").replace(width=8)
    m = Denoiser(conf.model_config(), seed=0)
    m.params["Wo"][0, 0] = np.nan
    from voxmotion.formats import write_checkpoint

    tensors = {f"param/{k}": v for k, v in m.params.items()}
    write_checkpoint(tmp_path / "nan.uck", {"model": m.config.to_dict()}, tensors)
    run("gen-data", "--task", "goalwalk", "--count", 1, "--out", tmp_path / "c")
    assert run("sample", "--ckpt", tmp_path / "nan.uck", "--cond", tmp_path / "c", "--out", tmp_path / "p") == 4
