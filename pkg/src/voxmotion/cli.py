"""Command-line entry point.

Exit codes: 0 ok, 1 usage, 2 format, 3 invariant, 4 numerical.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import formats
from .denoiser import (
    AdamState, Denoiser, ModelConfig, TaskCondition, TrainItem, TaskMixer, sample_motions, train,
)
from .errors import FormatError, InvariantError, NumericalError, VoxMotionError
from .geometry import EntityClass, EntitySnapshot, MotionSequence, sample_body_surface
from .heatmap import Mode, decode_expectation, encode_motion, HeatmapField, normalize
from .metrics import evaluate
from .synthdata import TASK_NAMES, TaskId, generate
from .uiv import build_uiv, occupied_indices, voxel_to_world

log = logging.getLogger("voxmotion")

TASK_BY_ID = {v: k for k, v in TASK_NAMES.items()}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- helpers --------------------------------------------------------------

def _run_config(args) -> cfgmod.RunConfig:
    overrides = {
        "seed": getattr(args, "seed", None),
        "ddim_steps": getattr(args, "ddim_steps", None),
        "steps": getattr(args, "steps", None),
        "batch": getattr(args, "batch", None),
        "lr": getattr(args, "lr", None),
        "mix": getattr(args, "mix", None),
        "sigma": getattr(args, "sigma", None),
    }
    cfg = cfgmod.resolve(args.profile, args.config, overrides)
    if getattr(args, "dump_config", None):
        cfgmod.dump(cfg, args.dump_config)
    return cfg


def _sample_stems(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FormatError(f"{d}: not a directory")
    stems = sorted(p.with_suffix("") for p in d.glob("*.json"))
    if not stems:
        raise FormatError(f"{d}: no sample sidecars found")
    return stems


def _task_id(name) -> TaskId:
    if name not in TASK_NAMES:
        raise FormatError(f"unknown task {name!r} in sidecar")
    return TASK_NAMES[name]


def _load_condition(stem: Path) -> tuple[TaskCondition, dict]:
    side = formats.read_sidecar(stem.with_suffix(".json"))
    vol = formats.read_volume(stem.with_suffix(".uiv"))
    return TaskCondition(_task_id(side["task_id"]), vol, side["goal"]), side


def _save_model(path, model: Denoiser, opt: AdamState | None, run: cfgmod.RunConfig, history_len: int):
    tensors = {f"param/{k}": v for k, v in model.params.items()}
    if opt is not None:
        tensors.update({f"adam_m/{k}": v for k, v in opt.m.items()})
        tensors.update({f"adam_v/{k}": v for k, v in opt.v.items()})
    meta = {"model": model.config.to_dict(), "run": run.to_dict(),
            "adam_step": opt.step if opt else 0, "trained_steps": history_len}
    formats.write_checkpoint(path, meta, tensors)


def load_model(path, dtype=np.float32) -> tuple[Denoiser, dict]:
    meta, tensors = formats.read_checkpoint(path)
    try:
        mcfg = ModelConfig.from_dict(meta["model"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: checkpoint config block is incomplete ({exc})") from exc
    params = {k.split("/", 1)[1]: v.astype(dtype) for k, v in tensors.items() if k.startswith("param/")}
    try:
        model = Denoiser(mcfg, params=params, dtype=dtype)
    except InvariantError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return model, meta


# -- subcommands ----------------------------------------------------------

def cmd_voxelize(args) -> int:
    cfg = _run_config(args)
    spec = cfg.spec
    frames: list[list[EntitySnapshot]] = []
    if args.motion:
        motion, topo = formats.read_motion(args.motion)
        for t in range(motion.T):
            frames.append([sample_body_surface(motion.positions[t], topo, args.samples_per_bone, seed=cfg.seed + t)])
    T = len(frames) or args.frames
    frames = frames or [[] for _ in range(T)]
    for item in args.points or []:
        path, _, cls = item.rpartition(":")
        if not path or cls.upper() not in EntityClass.__members__:
            raise UsageError(f"--points expects FILE:CLASS with CLASS in human/object/scene, got {item!r}")
        try:
            pts = np.asarray(json.loads(Path(path).read_text()), dtype=np.float64).reshape(-1, 3)
        except (OSError, ValueError) as exc:
            raise FormatError(f"{path}: expected a JSON list of [x, y, z] points ({exc})") from exc
        snap = EntitySnapshot(pts, EntityClass[cls.upper()])
        for f in frames:
            f.append(snap)
    vol = build_uiv(frames, spec)
    formats.write_volume(args.out, vol)
    print(f"wrote {args.out}: T={vol.T} dims={spec.dims} human={vol.count(1)} object={vol.count(2)} scene={vol.count(3)}")
    return 0


def cmd_encode(args) -> int:
    cfg = _run_config(args)
    motion, _ = formats.read_motion(args.motion)
    field = encode_motion(motion, cfg.spec, cfg.sigma)
    n_out = int(field.out_of_grid.sum())
    if n_out:
        log.warning("%d joint samples lie outside the grid and were encoded as uniform", n_out)
    formats.write_field(args.out, field)
    print(f"wrote {args.out}: T={field.T} K={field.K} dims={field.spec.dims}")
    return 0


def cmd_decode(args) -> int:
    field = formats.read_field(args.field)
    if field.mode != Mode.TARGET:
        field = normalize(field)
    topo = formats.read_motion(args.like)[1] if args.like else formats.default_topology_for(field.K)
    motion = decode_expectation(field, fps=args.fps)
    formats.write_motion(args.out, motion, topo)
    print(f"wrote {args.out}: T={motion.T} K={motion.K}")
    return 0


def _mix_tasks(cfg: cfgmod.RunConfig, count: int, rng) -> list[TaskId]:
    mixer = TaskMixer(cfgmod.parse_mix(cfg.mix), rng)
    return [mixer.draw() for _ in range(count)]


def cmd_gen_data(args) -> int:
    cfg = _run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    if args.task == "mix":
        tasks = _mix_tasks(cfg, args.count, rng)
    else:
        tasks = [TASK_NAMES[args.task]] * args.count
    seeds = rng.integers(0, 2**31 - 1, size=args.count)
    topo = formats.default_topology_for(cfg.K)
    for i, (task, s) in enumerate(zip(tasks, seeds)):
        sample = generate(task, int(s), cfg.spec, cfg.T, topo)
        stem = out / f"{TASK_BY_ID[task]}_{i:05d}"
        formats.write_volume(stem.with_suffix(".uiv"), build_uiv(sample.entities, cfg.spec))
        formats.write_motion(stem.with_suffix(".uim"), sample.gt_motion, topo)
        formats.write_sidecar(stem.with_suffix(".json"), TASK_BY_ID[task], int(s), sample.goal,
                              sample.contact_labels, sample.object_points)
    print(f"wrote {args.count} samples to {out}")
    return 0


def load_items(directory, mcfg: ModelConfig) -> list[TrainItem]:
    items = []
    for stem in _sample_stems(directory):
        cond, _ = _load_condition(stem)
        motion, _ = formats.read_motion(stem.with_suffix(".uim"))
        if motion.positions.shape[:2] != (mcfg.T, mcfg.K):
            raise InvariantError(f"{stem}: motion shape {motion.positions.shape[:2]} != ({mcfg.T}, {mcfg.K})")
        cond.stats(mcfg)
        items.append(TrainItem(motion.positions, cond))
    return items


def cmd_train(args) -> int:
    cfg = _run_config(args)
    mcfg = cfg.model_config()
    items = load_items(args.data, mcfg)
    topo = formats.default_topology_for(cfg.K)
    model = Denoiser(mcfg, seed=cfg.seed, dtype=np.float32)

    def logger(step, rep):
        log.info("step %d total %.5f %s", step, rep.total, {k: round(v, 5) for k, v in rep.terms.items()})

    res = train(items, mcfg, cfg.schedule(), topo, cfg.steps, cfg.batch, cfg.lr, cfg.seed,
                mix=cfgmod.parse_mix(cfg.mix), weights=cfg.weights, model=model,
                log_every=args.log_every, logger=logger)
    _save_model(args.out, res.model, res.opt, cfg, len(res.history))
    hist_path = Path(args.out).with_suffix(".loss.csv")
    with hist_path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(res.history[0]) if res.history else ["step", "total"])
        w.writeheader()
        w.writerows(res.history)
    if args.figures and res.history:
        from . import plotting

        plotting.loss_curve(res.history, Path(args.figures) / "loss.png")
    h = [r["total"] for r in res.history]
    if h:
        print(f"trained {len(h)} steps: first-100 mean {np.mean(h[:100]):.5f}, last-100 mean {np.mean(h[-100:]):.5f}")
    print(f"wrote {args.out} and {hist_path}")
    return 0


def cmd_sample(args) -> int:
    cfg = _run_config(args)
    model, meta = load_model(args.ckpt)
    stems = _sample_stems(args.cond)
    conds, sides = zip(*[_load_condition(s) for s in stems])
    topo = formats.default_topology_for(model.config.K)
    fields, joints = sample_motions(model, list(conds), cfg.schedule(), cfg.ddim_steps, cfg.seed)
    if not np.all(np.isfinite(joints)):
        raise NumericalError("sampled joints are not finite")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, stem in enumerate(stems):
        dst = out / stem.name
        formats.write_motion(dst.with_suffix(".uim"), MotionSequence(joints[i], cfg.fps), topo)
        side = sides[i]
        formats.write_sidecar(dst.with_suffix(".json"), side["task_id"], side["seed"], side["goal"],
                              side["contact_labels"], side.get("object_points"))
        formats.write_volume(dst.with_suffix(".uiv"), conds[i].uiv)
        if args.save_fields:
            formats.write_field(dst.with_suffix(".uhf"),
                                HeatmapField(model.config.spec, fields[i].astype(np.float64), Mode.RAW))
    print(f"sampled {len(stems)} motions with {cfg.ddim_steps} DDIM steps into {out}")
    return 0


METRIC_ORDER = ("mpjpe_cm", "troot_cm", "fs", "c_prec", "c_rec", "c_acc", "c_f1", "goal_dist_cm", "diversity", "ffd")


def format_report(report: dict, n: int) -> str:
    w = max(len(k) for k in METRIC_ORDER)
    lines = [f"{'metric':<{w}}  {'value':>12}", f"{'samples':<{w}}  {n:>12d}"]
    for k in METRIC_ORDER:
        v = report.get(k)
        lines.append(f"{k:<{w}}  {'n/a':>12}" if v is None else f"{k:<{w}}  {v:>12.6f}")
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    preds, gts, objs, labels, goals = [], [], [], [], []
    topo = None
    for stem in _sample_stems(args.gt):
        pstem = Path(args.pred) / stem.name
        if not pstem.with_suffix(".uim").exists():
            raise FormatError(f"missing prediction {pstem.with_suffix('.uim')}")
        gm, topo = formats.read_motion(stem.with_suffix(".uim"))
        pm, ptopo = formats.read_motion(pstem.with_suffix(".uim"))
        if ptopo.parent != topo.parent or pm.positions.shape != gm.positions.shape:
            raise InvariantError(f"{stem.name}: prediction and ground truth do not share a skeleton/shape")
        side = formats.read_sidecar(stem.with_suffix(".json"))
        preds.append(pm.positions)
        gts.append(gm.positions)
        objs.append(side.get("object_points"))
        labels.append(side["contact_labels"] if side.get("object_points") is not None else None)
        goals.append(side["goal"])
    report = evaluate(preds, gts, topo, objs, labels, goals, seed=cfg.seed).to_dict()
    Path(args.out).write_text(json.dumps(report, indent=1) + "\n")
    table = format_report(report, len(preds))
    table_path = Path(args.table) if args.table else Path(args.out).with_suffix(".txt")
    table_path.write_text(table)
    if args.figures:
        from . import plotting

        plotting.metric_bars(report, Path(args.figures) / "metrics.png")
        plotting.root_paths(preds, gts, goals, Path(args.figures) / "root_paths.png")
    sys.stdout.write(table)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_table, run_all

    results = run_all(seed=args.seed if args.seed is not None else 0)
    print(format_table(results))
    return 0 if all(r.ok for r in results) else 4


def cmd_export_ply(args) -> int:
    vol = formats.read_volume(args.volume)
    if not 0 <= args.frame < vol.T:
        raise InvariantError(f"frame {args.frame} outside [0, {vol.T})")
    codes = vol.codes[args.frame]
    idx = np.argwhere(codes > 0)
    pts = [voxel_to_world(idx.astype(np.float64), vol.spec)]
    cols = [np.array([formats.CLASS_COLORS[int(c)] for c in codes[tuple(idx.T)]]).reshape(-1, 3)]
    if args.motion:
        motion, _ = formats.read_motion(args.motion)
        j = motion.positions.reshape(-1, 3)
        pts.append(j)
        cols.append(np.tile(formats.JOINT_COLOR, (len(j), 1)))
    formats.write_ply(args.out, np.concatenate(pts), np.concatenate(cols))
    print(f"wrote {args.out}: {sum(len(p) for p in pts)} points")
    return 0


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="voxmotion", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--profile", choices=sorted(cfgmod.PROFILES), default=None,
                        help="base profile (default desk unless --config is given)")
        sp.add_argument("--config", help="flat JSON config file")
        sp.add_argument("--dump-config", help="write the effective config here")
        sp.add_argument("--seed", type=int)
        return sp

    s = common(sub.add_parser("voxelize", help="build a UIV1 volume from a motion and/or point sets"))
    s.add_argument("--motion")
    s.add_argument("--points", action="append", metavar="FILE:CLASS")
    s.add_argument("--frames", type=int, default=1, help="frame count when no motion is given")
    s.add_argument("--samples-per-bone", type=int, default=24)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_voxelize)

    s = common(sub.add_parser("encode", help="motion to a UHF1 target heatmap field"))
    s.add_argument("--motion", required=True)
    s.add_argument("--sigma", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", help="UHF1 field to a motion by first-moment decoding")
    s.add_argument("--field", required=True)
    s.add_argument("--like", help="motion file whose skeleton to reuse")
    s.add_argument("--fps", type=float, default=10.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_decode)

    s = common(sub.add_parser("gen-data", help="write synthetic samples (UIV1 + UIM1 + sidecar)"))
    s.add_argument("--task", choices=[*TASK_NAMES, "mix"], required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--mix", help="h:o:s ratio for --task mix")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = common(sub.add_parser("train", help="train the denoiser on a sample directory"))
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="UCK1 checkpoint path")
    s.add_argument("--steps", type=int)
    s.add_argument("--batch", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--mix", help="h:o:s task ratio")
    s.add_argument("--log-every", type=int, default=500)
    s.add_argument("--figures", help="directory for the loss curve")
    s.set_defaults(func=cmd_train)

    s = common(sub.add_parser("sample", help="DDIM-sample motions for each condition in a directory"))
    s.add_argument("--ckpt", required=True)
    s.add_argument("--cond", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ddim-steps", type=int)
    s.add_argument("--save-fields", action="store_true")
    s.set_defaults(func=cmd_sample)

    s = common(sub.add_parser("eval", help="score predictions against ground truth"))
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out", required=True, help="JSON report path")
    s.add_argument("--table", help="text table path (default: report path with .txt)")
    s.add_argument("--figures", help="directory for report figures")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference checks of all analytic gradients")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("export-ply", help="occupied voxels and joints as an ASCII PLY point cloud")
    s.add_argument("--volume", required=True)
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--motion")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_ply)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if hasattr(args, "profile") and args.profile is None and not getattr(args, "config", None):
        args.profile = "desk"
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except InvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3
    except VoxMotionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, UnicodeDecodeError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
