"""Command-line driver: synth-data, pretrain, train, infer, extract-grad, eval, report.

Configuration is a flat key-value text file (``section.field = value``) with
command-line overrides via repeated ``--set key=value``; every run directory
receives the fully resolved configuration that was actually used. Exit codes:
0 success, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import traceback
import typing
from pathlib import Path

import numpy as np

from .arch import GeneratorConfig, build_generator
from .data import PairSamplerConfig, SYNTH_KINDS, synth_dataset
from .gradops import (ImageError, bicubic_resample, extract_gradient,
                      load_image, normalize_for_display, save_image)
from .losses import LossReport, LossWeights
from .metrics import EvalReport, emit_grid, evaluate_pair
from .nn import Checkpoint, CheckpointError, Tensor, load_checkpoint, save_checkpoint
from .train import (ABLATIONS, Schedule, TrainConfig, TrainingDiverged,
                    adversarial_train, apply_ablation, canonical_config_text,
                    pretrain)


class UserError(Exception):
    pass


# -- flat key-value config -------------------------------------------------------

_SECTIONS = {"gen": GeneratorConfig, "data": PairSamplerConfig,
             "loss": LossWeights, "sched": Schedule, "train": TrainConfig}

_TRAIN_SCALAR_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)} - {
    "gen", "data", "weights", "schedule"}


def _parse_scalar(raw: str, ann) -> object:
    origin = typing.get_origin(ann)
    if origin is typing.Union:  # Optional[...]
        args = [a for a in typing.get_args(ann) if a is not type(None)]
        if raw.strip().lower() in ("none", ""):
            return None
        return _parse_scalar(raw, args[0])
    if ann is bool:
        v = raw.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise UserError(f"expected a boolean, got {raw!r}")
    if ann is int:
        return int(raw)
    if ann is float:
        return float(raw)
    if ann is str:
        return raw.strip()
    if ann is tuple:
        return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
    raise UserError(f"unsupported config value type {ann}")


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; '#' starts a comment."""
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UserError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def resolve_run_config(config_path=None, overrides=()) -> TrainConfig:
    pairs = parse_config_file(config_path) if config_path else {}
    for item in overrides:
        if "=" not in item:
            raise UserError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()

    sections = {"gen": {}, "data": {}, "loss": {}, "sched": {}, "train": {}}
    hints = {name: typing.get_type_hints(cls) for name, cls in _SECTIONS.items()}
    for key, raw in pairs.items():
        if "." not in key:
            raise UserError(f"config key {key!r} must be namespaced (section.field)")
        section, field_name = key.split(".", 1)
        if section not in sections:
            raise UserError(f"unknown config section {section!r} in {key!r}")
        if section == "train" and field_name not in _TRAIN_SCALAR_FIELDS:
            raise UserError(f"unknown train field {field_name!r}")
        if section != "train" and field_name not in hints[section]:
            raise UserError(f"unknown config key {key!r}")
        ann = hints[section][field_name]
        try:
            sections[section][field_name] = _parse_scalar(raw, ann)
        except (ValueError, TypeError) as exc:
            raise UserError(f"bad value for {key}: {exc}") from exc

    try:
        gen = GeneratorConfig(**sections["gen"])
        if "hr_dir" not in sections["data"]:
            sections["data"]["hr_dir"] = "data/hr"
        data = PairSamplerConfig(**sections["data"])
        weights = LossWeights(**sections["loss"])
        sched = Schedule(**sections["sched"])
        return TrainConfig(gen=gen, data=data, weights=weights, schedule=sched,
                           **sections["train"])
    except (ValueError, TypeError) as exc:
        raise UserError(str(exc)) from exc


def _write_run_config(cfg: TrainConfig, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(canonical_config_text(cfg))


# -- shared inference helper ------------------------------------------------------

def _load_generator(ckpt: Checkpoint, dtype=np.float64):
    if "gen_config" not in ckpt.meta:
        raise UserError("checkpoint carries no generator architecture")
    cfg = GeneratorConfig.from_dict(ckpt.meta["gen_config"])
    gen = build_generator(cfg, rng_seed=0, dtype=dtype)
    gen.load_param_tree(ckpt.with_prefix("gen"))
    return gen


def _super_resolve(gen, img, zero_grad_features=False):
    x = Tensor(img.transpose(2, 0, 1)[None].astype(gen.dtype))
    out = gen(x, fuse_gradient_features=not zero_grad_features
              if gen.cfg.use_gradient_branch else None)
    sr = out.sr_image.data[0].transpose(1, 2, 0).astype(np.float64)
    grad = None
    if out.sr_gradient is not None:
        grad = out.sr_gradient.data[0].transpose(1, 2, 0).astype(np.float64)
    return sr, grad


# -- subcommands --------------------------------------------------------------------

def cmd_synth_data(args) -> int:
    paths = synth_dataset(args.kind, args.n, args.size, args.seed, args.out)
    print(f"wrote {len(paths)} images to {args.out}")
    return 0


def _resolved_config(args) -> TrainConfig:
    cfg = resolve_run_config(args.config, args.set or ())
    if getattr(args, "hr_dir", None):
        cfg = dataclasses.replace(
            cfg, data=dataclasses.replace(cfg.data, hr_dir=args.hr_dir))
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "steps", None) is not None:
        cfg = dataclasses.replace(cfg, total_steps=args.steps)
    if getattr(args, "pretrain_steps", None) is not None:
        cfg = dataclasses.replace(cfg, pretrain_steps=args.pretrain_steps)
    if getattr(args, "ablation", None):
        cfg = apply_ablation(cfg, args.ablation)
    return cfg


def cmd_pretrain(args) -> int:
    cfg = _resolved_config(args)
    run_dir = Path(args.run_dir)
    _write_run_config(cfg, run_dir)
    ckpt, reports = pretrain(cfg, run_dir=run_dir)
    last = reports[-1].pix_img if reports else float("nan")
    print(f"pretrain finished at step {ckpt.step} (final pix loss {last:.5f}); "
          f"checkpoint at {run_dir / 'pretrain.ckpt'}")
    return 0


def _emit_sample_grid(ckpt: Checkpoint, cfg: TrainConfig, run_dir: Path,
                      probe: np.ndarray, step: int) -> None:
    gen = _load_generator(ckpt, dtype=cfg.np_dtype)
    lr = bicubic_resample(probe, 0.25)
    sr, _ = _super_resolve(gen, lr)
    grid_dir = run_dir / "samples"
    grid_dir.mkdir(exist_ok=True)
    emit_grid([bicubic_resample(lr, 4.0), sr, probe],
              ["bicubic", "model", "target"],
              grid_dir / f"step_{step:07d}.png")


def _probe_image(cfg: TrainConfig) -> np.ndarray:
    paths = sorted(Path(cfg.data.hr_dir).glob("*.png"))
    if not paths:
        raise UserError(f"no PNG files in {cfg.data.hr_dir}")
    img = load_image(paths[0])
    crop = cfg.data.lr_patch * cfg.data.scale
    h, w = img.shape[:2]
    if h < crop or w < crop:
        return img[:h - h % 4 or h, :w - w % 4 or w]
    y, x = (h - crop) // 2, (w - crop) // 2
    return img[y:y + crop, x:x + crop]


def cmd_train(args) -> int:
    cfg = _resolved_config(args)
    run_dir = Path(args.run_dir)
    _write_run_config(cfg, run_dir)

    if args.init:
        init = load_checkpoint(args.init)
    else:
        init = None

    if cfg.total_steps == 0:
        # initialization checkpoint only
        if init is None:
            gen = build_generator(cfg.gen, cfg.seed, dtype=cfg.np_dtype)
            arrays = {f"gen.{n}": p.data.copy() for n, p in gen.named_parameters()}
            meta = {"stage": "init", "gen_config": cfg.gen.to_dict(),
                    "train_config": cfg.to_dict()}
            save_checkpoint(run_dir / "ckpt_0000000.ckpt", arrays, 0, meta)
        else:
            save_checkpoint(run_dir / "ckpt_0000000.ckpt", init.arrays,
                            init.step, init.meta)
        print(f"wrote initialization checkpoint to {run_dir}")
        return 0

    if init is None:
        print(f"pretraining for {cfg.pretrain_steps} steps ...")
        init, _ = pretrain(cfg, run_dir=run_dir)

    probe = _probe_image(cfg)
    last_step = None
    for ckpt in adversarial_train(cfg, init, run_dir=run_dir):
        _emit_sample_grid(ckpt, cfg, run_dir, probe, ckpt.step)
        last_step = ckpt.step
        print(f"checkpoint at step {ckpt.step}")
    print(f"training finished at step {last_step}; artifacts in {run_dir}")
    return 0


def cmd_infer(args) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        raise UserError(str(exc)) from exc
    gen = _load_generator(ckpt)
    zero = args.zero_grad_features
    if zero and not gen.cfg.use_gradient_branch:
        print("warning: checkpoint has no gradient branch; "
              "--zero-grad-features ignored", file=sys.stderr)
        zero = False
    in_dir, out_dir = Path(args.input), Path(args.output)
    paths = sorted(in_dir.glob("*.png"))
    if not paths:
        raise UserError(f"no PNG files in {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    done = 0
    for p in paths:
        try:
            img = load_image(p)
            sr, grad = _super_resolve(gen, img, zero_grad_features=zero)
            save_image(sr, out_dir / p.name)
            if grad is not None:
                save_image(normalize_for_display(grad),
                           out_dir / f"{p.stem}_gradmap.png")
            done += 1
        except (ImageError, ValueError) as exc:
            print(f"skipping {p.name}: {exc}", file=sys.stderr)
    print(f"super-resolved {done}/{len(paths)} images into {out_dir}")
    return 0 if done else 1


def cmd_extract_grad(args) -> int:
    in_dir, out_dir = Path(args.input), Path(args.output)
    paths = sorted(in_dir.glob("*.png"))
    if not paths:
        raise UserError(f"no PNG files in {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    done = 0
    for p in paths:
        try:
            gmap = extract_gradient(load_image(p))
            save_image(normalize_for_display(gmap), out_dir / p.name)
            done += 1
        except (ImageError, ValueError) as exc:
            print(f"skipping {p.name}: {exc}", file=sys.stderr)
    print(f"wrote {done}/{len(paths)} gradient maps to {out_dir}")
    return 0 if done else 1


def cmd_eval(args) -> int:
    sr_dir, hr_dir = Path(args.sr_dir), Path(args.hr_dir)
    sr_files = {p.name: p for p in sr_dir.glob("*.png")}
    hr_files = {p.name: p for p in hr_dir.glob("*.png")}
    shared = sorted(set(sr_files) & set(hr_files))
    for name in sorted(set(sr_files) ^ set(hr_files)):
        print(f"unpaired: {name}", file=sys.stderr)
    if not shared:
        raise UserError("no paired files to evaluate")
    report = EvalReport(border=args.border, channels=args.channels)
    for name in shared:
        p, s, g = evaluate_pair(load_image(sr_files[name]), load_image(hr_files[name]),
                                border=args.border, channels=args.channels)
        report.add(name, p, s, g)
    print(report.to_text_table())
    if args.out:
        Path(args.out).write_text(report.to_jsonl())
        print(f"report written to {args.out}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    logs = {}
    for name in ("pretrain_log.jsonl", "train_log.jsonl"):
        path = run_dir / name
        if path.exists():
            logs[name] = [LossReport.from_json_line(ln)
                          for ln in path.read_text().strip().splitlines() if ln]
    if not logs:
        raise UserError(f"no loss logs found in {run_dir}")

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(logs), figsize=(6 * len(logs), 4), squeeze=False)
    for ax, (name, reports) in zip(axes[0], logs.items()):
        steps = [r.step for r in reports]
        for term in ("total_g", "pix_img", "perceptual", "pix_gm", "pix_gb",
                     "dis_img", "dis_gm"):
            values = [getattr(r, term) for r in reports]
            if any(v != 0.0 for v in values):
                ax.plot(steps, values, label=term, linewidth=0.8)
        ax.set_title(name.replace("_log.jsonl", ""))
        ax.set_xlabel("step")
        ax.set_yscale("log")
        ax.legend(fontsize=7)
    out_png = run_dir / "loss_curves.png"
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)

    print(f"curves written to {out_png}")
    for name, reports in logs.items():
        tail = reports[max(0, len(reports) - max(1, len(reports) // 10)):]
        summary = {t: float(np.mean([getattr(r, t) for r in tail]))
                   for t in ("total_g", "pix_img", "pix_gm", "pix_gb")}
        head = name.replace("_log.jsonl", "")
        print(f"{head:>9}: last step {reports[-1].step}, tail means "
              + ", ".join(f"{k}={v:.5f}" for k, v in summary.items()))
    return 0


# -- argument parsing ---------------------------------------------------------------

def _add_config_args(p: argparse.ArgumentParser, with_train_flags=True):
    p.add_argument("--config", help="key-value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--run-dir", required=True, help="output directory for the run")
    if with_train_flags:
        p.add_argument("--hr-dir", help="directory of HR training PNGs")
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int, help="adversarial steps (0: init only)")
        p.add_argument("--pretrain-steps", type=int, dest="pretrain_steps")
        p.add_argument("--ablation", choices=ABLATIONS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradsr",
        description="gradient-guided GAN super resolution toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic HR dataset")
    p.add_argument("--kind", choices=SYNTH_KINDS, required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("pretrain", help="supervised warm-up stage only")
    _add_config_args(p)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("train", help="pretrain (unless --init) plus adversarial stage")
    _add_config_args(p)
    p.add_argument("--init", help="start from this checkpoint instead of pretraining")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="super-resolve a directory of PNGs")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--zero-grad-features", action="store_true",
                   help="zero the gradient-branch features at the fusion point")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("extract-grad", help="write normalized gradient-map PNGs")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(fn=cmd_extract_grad)

    p = sub.add_parser("eval", help="PSNR/SSIM/gradient fidelity over paired dirs")
    p.add_argument("sr_dir")
    p.add_argument("hr_dir")
    p.add_argument("--out", help="write the machine-readable report here")
    p.add_argument("--border", type=int, default=4)
    p.add_argument("--channels", choices=("rgb", "luma"), default="rgb")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="render loss curves and a summary table")
    p.add_argument("run_dir")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; that's a user error
        return 0 if exc.code in (0, None) else 1
    try:
        return args.fn(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ImageError, FileNotFoundError, NotADirectoryError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
