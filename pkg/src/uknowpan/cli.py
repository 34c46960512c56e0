"""``uknowpan`` command line: data generation, training, sampling, evaluation and self-checks.

Exit codes: 0 on success, 1 on validation errors (bad config, files, shapes),
2 on numeric failures (divergence, undefined metrics).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .data import make_scene_set, read_rasters, save_heatmap, save_preview, write_rasters
from .errors import ConfigError, NumericError, ValidationError
from .metrics import MetricReport, full_resolution_metrics, reduced_metrics
from . import training as tr

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _key_flags() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    g = p.add_argument_group("configuration keys (flags override --config)")
    g.add_argument("--config", metavar="FILE", help="key = value config file")
    for key in C.SCHEMA:
        g.add_argument(f"--{key.name.replace('_', '-')}", dest=f"key_{key.name}", metavar="V",
                       default=None, help=key.describe())
    return p


def _flag_values(args) -> dict:
    raw = {k[4:]: v for k, v in vars(args).items() if k.startswith("key_") and v is not None}
    return C.validate(raw, "command line")


def _file_values(args) -> dict:
    return C.load_config_file(args.config) if getattr(args, "config", None) else {}


def _resolved(args) -> dict:
    return C.resolve(_file_values(args), _flag_values(args))


def _over_checkpoint(args, base: dict) -> dict:
    """Checkpoint settings, overridden by anything given in a config file or flag."""
    merged = dict(base)
    merged.update(_file_values(args))
    merged.update(_flag_values(args))
    return merged


def _fresh_log(out: Path, append: bool = False) -> tr.RunLog:
    path = out.with_name(out.name + ".log")
    if not append and path.exists():
        path.unlink()
    return tr.RunLog(path)


def _load_set(path):
    return tr.load_scene_set(path)


# -- subcommands ---------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    v = _resolved(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, count in (("train", v["train_scenes"]), ("val", v["val_scenes"])):
        data = make_scene_set(v["seed"], count, split, v["bands"], v["height"], v["width"])
        tr.save_scene_set(out / f"{split}.ukrs", data)
        print(f"wrote {count} {split} scenes to {out / f'{split}.ukrs'}")
    return EXIT_OK


def cmd_train_prior(args) -> int:
    cfg = tr.TrainConfig.from_flat(_resolved(args))
    out = Path(args.out)
    prior = tr.train_prior(cfg, _load_set(args.data), _fresh_log(out))
    tr.save_checkpoint(out, "prior", prior, cfg, cfg.prior_iterations)
    print(f"prior checkpoint written to {out}")
    return EXIT_OK


def cmd_train_teacher(args) -> int:
    out = Path(args.out)
    train = _load_set(args.data)
    val = _load_set(args.val) if args.val else None
    if args.resume:
        ck = tr.load_checkpoint(args.resume)
        if ck.kind != "teacher":
            raise ConfigError(f"{args.resume} holds a {ck.kind} checkpoint, not a teacher")
        cfg = tr.TrainConfig.from_flat(_over_checkpoint(args, ck.train_config().flat))
        prior = ck.prior
        teacher = tr.train_teacher(cfg, train, prior, val, _fresh_log(out, append=True), resume=ck,
                                   stop_at=args.until, checkpoint_dir=out.parent)
    else:
        cfg = tr.TrainConfig.from_flat(_resolved(args))
        prior = None
        if args.prior:
            ck = tr.load_checkpoint(args.prior)
            if ck.kind != "prior":
                raise ConfigError(f"{args.prior} holds a {ck.kind} checkpoint, not a prior")
            prior = ck.model
        elif cfg.model.ffa_on:
            raise ConfigError("--prior is required when ffa_on is true")
        teacher = tr.train_teacher(cfg, train, prior, val, _fresh_log(out), stop_at=args.until,
                                   checkpoint_dir=out.parent)
    tr.save_checkpoint(out, "teacher", teacher, cfg, teacher._iteration, teacher._optimizer, prior)
    print(f"teacher checkpoint (iteration {teacher._iteration}) written to {out}")
    return EXIT_OK


def cmd_distill(args) -> int:
    cfg = tr.TrainConfig.from_flat(_resolved(args))
    if cfg.selector == "teacher":
        raise ConfigError("distill needs a student selector: student_L1, student_KD or student_UKnow")
    teacher = None
    if args.teacher:
        ck = tr.load_checkpoint(args.teacher)
        if ck.kind != "teacher":
            raise ConfigError(f"{args.teacher} holds a {ck.kind} checkpoint, not a teacher")
        teacher = ck.model
        teacher.astype(cfg.np_dtype)
        if teacher.prior is not None:
            teacher.prior.astype(cfg.np_dtype)
    out = Path(args.out)
    val = _load_set(args.val) if args.val else None
    student = tr.distill_student(cfg, teacher, _load_set(args.data), val, _fresh_log(out))
    tr.save_checkpoint(out, "student", student, cfg, cfg.distill_iterations)
    print(f"{cfg.selector} checkpoint written to {out}")
    return EXIT_OK


def _preview_bands(args, bands: tuple, available: int) -> tuple:
    if all(0 <= b < available for b in bands) and bands:
        return bands
    if args.key_preview_bands is not None or "preview_bands" in _file_values(args):
        raise ConfigError(f"preview_bands {C.format_value(bands)} out of range for {available}-band scenes")
    return (0,)  # default RGB triple does not fit: grayscale of the first band


def cmd_sharpen(args) -> int:
    ck = tr.load_checkpoint(args.checkpoint)
    if ck.kind not in ("teacher", "student"):
        raise ConfigError(f"{args.checkpoint} holds a {ck.kind} checkpoint; sharpen needs a teacher or student")
    v = _over_checkpoint(args, ck.train_config().flat)
    cfg = tr.TrainConfig.from_flat(v)
    data = _load_set(args.input)
    bands = _preview_bands(args, v["preview_bands"], data.bands)
    fused, theta = tr.sharpen(ck.model, data, cfg, v["seed"], with_uncertainty=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rasters = {"hrms": fused}
    if ck.kind == "teacher" and theta is not None:
        rasters["theta"] = theta.astype(np.float64)
    write_rasters(out / "fused.ukrs", rasters)
    for i in range(len(data)):
        save_preview(out / f"fused_{i:03d}.png", fused[i], bands)
        if "theta" in rasters:
            save_heatmap(out / f"uncertainty_{i:03d}.png", rasters["theta"][i].mean(axis=0))
    print(f"sharpened {len(data)} scenes into {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    v = _resolved(args)
    fused_map = read_rasters(args.fused)
    if "hrms" not in fused_map:
        raise ConfigError(f"{args.fused} has no 'hrms' array")
    fused = fused_map["hrms"]
    ref = _load_set(args.reference)
    if fused.shape[0] != len(ref):
        raise ConfigError(f"{args.fused} holds {fused.shape[0]} images but {args.reference} holds {len(ref)}")
    rows = []
    for i in range(len(ref)):
        if args.mode == "reduced":
            if ref.hrms is None:
                raise ConfigError(f"{args.reference} lacks 'hrms'; reduced mode needs ground truth")
            rows.append(reduced_metrics(fused[i], ref.hrms[i], q_window=v["q_window"]))
        else:
            rows.append(full_resolution_metrics(fused[i], ref.lrms[i], ref.pan[i]))
    report = MetricReport.aggregate(rows, args.mode)
    label = args.label or Path(args.fused).stem
    Path(args.out).write_text(report.to_csv(label), encoding="utf-8")
    print(report.table(label))
    return EXIT_OK


def cmd_ablate(args) -> int:
    v = _resolved(args)
    cfg = tr.TrainConfig.from_flat(v)
    out = Path(args.out)
    log = _fresh_log(out)
    rows = tr.run_ablation_matrix(cfg, v["ablation_seeds"], log)
    out.write_text(tr.ablation_csv(rows), encoding="utf-8")
    for r in rows:
        print(r["report"].table(f"{r['group']}: {r['label']}"))
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    return EXIT_OK if run_selfcheck() else EXIT_NUMERIC


def cmd_show_config(args) -> int:
    sys.stdout.write(C.to_text(_resolved(args)))
    return EXIT_OK


def _key_listing() -> str:
    lines = ["configuration keys (config file 'key = value' or --key-name flag on any command):"]
    for key in C.SCHEMA:
        lines.append(f"  {key.name:<20} {key.describe()}")
    lines.append("precedence: defaults < profile < --config file < flags")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    keys = _key_flags()
    p = _Parser(prog="uknowpan", description="Uncertainty-aware diffusion PAN-sharpening toolkit.",
                epilog=_key_listing(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, fn, help):
        sp = sub.add_parser(name, parents=[keys], help=help, description=help)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("gen-data", cmd_gen_data, "generate synthetic train/val scene files")
    sp.add_argument("--out", required=True, help="output directory")
    sp = add("train-prior", cmd_train_prior, "train the prior network")
    sp.add_argument("--data", required=True, help="training scene file")
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp = add("train-teacher", cmd_train_teacher, "train the teacher denoiser")
    sp.add_argument("--data", required=True, help="training scene file")
    sp.add_argument("--val", help="validation scene file")
    sp.add_argument("--prior", help="prior checkpoint")
    sp.add_argument("--resume", help="teacher checkpoint to continue from")
    sp.add_argument("--until", type=int, help="stop after this many completed iterations")
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp = add("distill", cmd_distill, "distill a student from a teacher checkpoint")
    sp.add_argument("--data", required=True, help="training scene file")
    sp.add_argument("--val", help="validation scene file")
    sp.add_argument("--teacher", help="teacher checkpoint (not needed for student_L1)")
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp = add("sharpen", cmd_sharpen, "sample fused images, uncertainty rasters and previews")
    sp.add_argument("--checkpoint", required=True, help="teacher or student checkpoint")
    sp.add_argument("--input", required=True, help="scene file to sharpen")
    sp.add_argument("--out", required=True, help="output directory")
    sp = add("evaluate", cmd_evaluate, "score fused images against a scene file")
    sp.add_argument("--fused", required=True, help="raster file with an 'hrms' array")
    sp.add_argument("--reference", required=True, help="scene file")
    sp.add_argument("--mode", choices=("reduced", "full"), default="reduced")
    sp.add_argument("--label", default="", help="row label in the CSV")
    sp.add_argument("--out", required=True, help="CSV path")
    sp = add("ablate", cmd_ablate, "run the FFA/HQFE, loss and conditioning ablation matrix")
    sp.add_argument("--out", required=True, help="CSV path")
    add("selfcheck", cmd_selfcheck, "run the invariant suite")
    add("show-config", cmd_show_config, "print the resolved configuration")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
