"""``rotsr`` command line: one executable, one subcommand per pipeline stage.

Every subcommand resolves a flat config from built-in defaults, an optional
``--config`` JSON file and explicit flags (in that order of precedence) and
keys all randomness off ``seed``.

Exit codes: 0 ok, 2 usage, 3 I/O, 4 config, 5 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3, 4, 5

DEFAULTS = {
    "seed": 0,
    # simulate
    "count": 20,
    "n_test": None,
    "size": 256,
    "n_trees": 8,
    "branch_depth": 4,
    "noise_sigma": 0.01,
    "background_level": 0.05,
    "shift_kind": "constant",
    "shift": 3,
    # preprocess
    "median": True,
    "registration": True,
    # degrade
    "deg_shift_max": 2,
    "deg_blur_min": 0.2,
    "deg_blur_max": 1.0,
    "deg_noise_max": 0.02,
    "deg_p_stage": 0.5,
    # model
    "scale": 2,
    "n_rstb": 2,
    "n_stl_per_rstb": 2,
    "n_heads": 2,
    "dim": 32,
    "window": 8,
    # train
    "lr": 1e-4,
    "epochs": 200,
    "steps": None,
    "batch": 8,
    "patch": 64,
    "sub_window": 64,
    "patches_per_image": 16,
    "lam": 0.5,
    "patch_selection": True,
    "consistency_loss": True,
    "displacement_degradation": True,
    "augmentation": False,
    "ckpt_every": 0,
    # eval
    "baseline": "none",
}

_OPTIONAL_INT = {"n_test", "steps"}


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# config


def _check_value(key, value):
    default = DEFAULTS[key]
    if value is None and (default is None or key in _OPTIONAL_INT):
        return None
    if key in _OPTIONAL_INT:
        default = 0
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        value = float(value)
    elif isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror or e}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a flat JSON object")
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {', '.join(unknown)}")
    return {k: _check_value(k, v) for k, v in data.items()}


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(load_config(args.config))
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = _check_value(key, v)
    return cfg


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# builders


def _geometry(size: int):
    from .geometry import ScanGeometry
    return ScanGeometry(size, size)


def _phantom_params(cfg):
    from .simulator import PhantomParams
    return PhantomParams(n_trees=cfg["n_trees"], branch_depth=cfg["branch_depth"], noise_sigma=cfg["noise_sigma"],
                         background_level=cfg["background_level"], size=cfg["size"])


def _degradation(cfg):
    from .sampling import DegradationConfig
    return DegradationConfig(shift_max=cfg["deg_shift_max"], blur_sigma=(cfg["deg_blur_min"], cfg["deg_blur_max"]),
                             noise_max=cfg["deg_noise_max"], p_stage=cfg["deg_p_stage"])


def _model_config(cfg):
    from .model import ModelConfig
    return ModelConfig(n_rstb=cfg["n_rstb"], n_stl_per_rstb=cfg["n_stl_per_rstb"], n_heads=cfg["n_heads"],
                       dim=cfg["dim"], window=cfg["window"], scale=cfg["scale"])


def _train_config(cfg):
    from .train import TrainConfig
    return TrainConfig(lr=cfg["lr"], epochs=cfg["epochs"], max_steps=cfg["steps"], batch=cfg["batch"],
                       patch=cfg["patch"], sub_window=cfg["sub_window"], patches_per_image=cfg["patches_per_image"],
                       lam=cfg["lam"], seed=cfg["seed"], registration=cfg["registration"], median=cfg["median"],
                       patch_selection=cfg["patch_selection"], consistency_loss=cfg["consistency_loss"],
                       displacement_degradation=cfg["displacement_degradation"], augmentation=cfg["augmentation"],
                       ckpt_every=cfg["ckpt_every"], degradation=_degradation(cfg))


def _read_image(path):
    from . import io
    return io.to_float(io.read_pgm(path))


def _write_image(path, img):
    from . import io
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    io.write_pgm(path, io.to_uint16(img))


def _dataset_geometry(data: Path):
    from .geometry import ScanGeometry
    meta = data / "dataset.json"
    if meta.exists():
        try:
            return ScanGeometry.from_dict(json.loads(meta.read_text())["geometry"])
        except (KeyError, TypeError, json.JSONDecodeError) as e:
            raise ConfigError(f"{meta}: bad geometry block ({e})") from None
    return None


def load_split(data, split: str, scale: int, registration: bool = True, median: bool = True):
    """HR raw scans of one split -> preprocessed HR plus adjacent-downsampled LR."""
    from . import io
    from .train import make_pairs

    data = Path(data)
    d = data / split
    if not d.is_dir():
        raise FileNotFoundError(f"{d}: no such directory")
    ids = io.list_ids(d)
    if not ids:
        raise FileNotFoundError(f"{d}: no *_hr.pgm images")
    raws = [_read_image(d / f"{i}_hr.pgm") for i in ids]
    geom = _dataset_geometry(data) or _geometry_from_shape(raws[0].shape)
    for i, r in zip(ids, raws):
        if r.shape != geom.shape:
            raise ConfigError(f"{i}: image shape {r.shape} does not match geometry {geom.shape}")
        if r.shape[0] % scale or r.shape[1] % scale:
            raise ConfigError(f"{i}: shape {r.shape} not divisible by scale {scale}")
    return make_pairs(raws, ids, geom, scale, registration=registration, median=median)


def _geometry_from_shape(shape):
    from .geometry import ScanGeometry
    return ScanGeometry(int(shape[0]), int(shape[1]))


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, cfg):
    from .simulator import DisplacementModel, simulate_dataset

    out = Path(args.out)
    geom = _geometry(cfg["size"])
    params = _phantom_params(cfg)
    disp = DisplacementModel(cfg["shift_kind"], cfg["shift"])
    info = simulate_dataset(out, cfg["count"], cfg["seed"], geom, params, disp, scale=cfg["scale"],
                            n_test=cfg["n_test"])
    meta = {"geometry": geom.to_dict(), "phantom": params.to_dict(), "displacement": disp.to_dict(),
            "seed": cfg["seed"], "scale": cfg["scale"], "n_train": info["n_train"], "n_test": info["n_test"]}
    (out / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (out / "config.json").write_text(dump_config(cfg))
    print(f"simulate: {info['n_train']} train / {info['n_test']} test scans in {out}")


def cmd_preprocess(args, cfg):
    from . import io
    from .preprocess import displacement_metric, median_filter3, register_even_to_odd

    raw = _read_image(args.input)
    out = median_filter3(raw) if cfg["median"] else raw
    shifts = np.zeros(raw.shape[0])
    if cfg["registration"]:
        out, shifts = register_even_to_odd(out, return_shifts=True)
    _write_image(args.out, out)
    if args.shifts_out:
        io.write_shifts(args.shifts_out, shifts)
    print(f"displacement_metric: before={displacement_metric(raw):.4f} after={displacement_metric(out):.4f}")


def cmd_degrade(args, cfg):
    from .sampling import displacement_degrade

    lr = _read_image(args.input)
    out, stages = displacement_degrade(lr, np.random.default_rng(cfg["seed"]), _degradation(cfg), return_log=True)
    _write_image(args.out, out)
    print("stages: " + (",".join(stages) if stages else "none"))


def cmd_train(args, cfg):
    from .checkpoint import save_checkpoint
    from .model import build_model
    from .train import init_from_scale2, train

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_split(args.data, "train", cfg["scale"], cfg["registration"], cfg["median"])
    if args.init:
        model = init_from_scale2(args.init, cfg["scale"], seed=cfg["seed"])
        for key in ("n_rstb", "n_stl_per_rstb", "n_heads", "dim", "window"):
            cfg[key] = getattr(model.cfg, key)
    else:
        model = build_model(_model_config(cfg), seed=cfg["seed"])
    tcfg = _train_config(cfg)
    (out / "config.json").write_text(dump_config(cfg))
    res = train(dataset, model, tcfg, log_path=out / "loss.csv", ckpt_dir=out)
    save_checkpoint(out / "model.ckpt", res.model, {"train": tcfg.to_dict(), "geometry": dataset.geom.to_dict()})
    last = res.log[-1]
    print(f"train: {len(res.log)} steps, final l_total={last[3]:.6f}, clipped={res.clipped_steps}")


def _load_model(path, scale=None):
    from .checkpoint import load_checkpoint
    model, _ = load_checkpoint(path)
    if scale is not None and model.cfg.scale != scale:
        raise ConfigError(f"checkpoint scale {model.cfg.scale} != requested scale {scale}")
    model.eval()
    return model


def cmd_infer(args, cfg):
    from .evaluate import model_predictor

    model = _load_model(args.ckpt)
    lr = _read_image(args.input)
    sr = np.clip(model_predictor(model)(lr), 0.0, 1.0)
    if not np.all(np.isfinite(sr)):
        raise FloatingPointError("non-finite model output")
    _write_image(args.out, sr)
    print(f"infer: {lr.shape} -> {sr.shape}")


def cmd_eval(args, cfg):
    from .evaluate import baseline_predictor, evaluate, model_predictor

    scale = cfg["scale"]
    if cfg["baseline"] == "none":
        if not args.ckpt:
            raise UsageError("eval needs --ckpt unless --baseline is bicubic or bilinear")
        predictor, method = model_predictor(_load_model(args.ckpt, scale)), "model"
    else:
        predictor, method = baseline_predictor(cfg["baseline"], scale), cfg["baseline"]
    # ground truth always goes through the full preprocessing pipeline
    pairs = load_split(args.data, "test", scale)
    report = evaluate(predictor, pairs.pairs, pairs.geom, scale, out_dir=args.images, method=method,
                      figures=args.images is not None)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        report.save(args.out)
    m = report.mean
    print(f"eval[{method} x{scale}]: psnr={m['psnr']:.4f} ssim={m['ssim']:.5f} mse={m['mse']:.6g}")


def cmd_reconstruct(args, cfg):
    from .geometry import reconstruct_gather, reconstruct_scatter

    raw = _read_image(args.input)
    geom = _geometry_from_shape(raw.shape)
    if args.method == "scatter":
        img, mask = reconstruct_scatter(raw, geom)
    else:
        img = reconstruct_gather(raw, geom)
        mask = None
    _write_image(args.out, img)
    if args.mask_out:
        from .geometry import zero_point_mask
        m = zero_point_mask(geom) if mask is None else mask
        _write_image(args.mask_out, m.astype(float))
    print(f"reconstruct[{args.method}]: {raw.shape} -> {img.shape}")


def cmd_report(args, cfg):
    from .evaluate import MetricsReport
    from .plotting import loss_curve, metric_bars
    from .train import read_loss_log

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labels = args.labels or [Path(p).stem if Path(p).stem != "report" else Path(p).parent.name for p in args.reports]
    if len(labels) != len(args.reports):
        raise UsageError("--labels must match --reports one to one")
    rows = []
    for label, path in zip(labels, args.reports):
        try:
            rep = MetricsReport.load(path)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"{path}: not a metrics report ({e})") from None
        rows.append({"label": label, "method": rep.method, "scale": rep.scale, **rep.mean})
    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["label", "method", "scale", "psnr", "ssim", "mse"])
        for r in rows:
            w.writerow([r["label"], r["method"], r["scale"], *(_fmt(r[k]) for k in ("psnr", "ssim", "mse"))])
    metric_bars(out / "metrics.png", rows)
    for i, path in enumerate(args.loss or []):
        loss_curve(out / f"loss_{i}.png", read_loss_log(path))
    sys.stdout.write((out / "summary.csv").read_text())


def _fmt(v):
    return "inf" if isinstance(v, float) and math.isinf(v) else repr(v)


# ---------------------------------------------------------------------------
# parser


def _add_common(p):
    p.add_argument("--config", help="flat JSON config; flags override its keys")
    p.add_argument("--seed", type=int)


def _flag_pair(p, key, on, off, help_off):
    g = p.add_mutually_exclusive_group()
    g.add_argument(on, dest=key, action="store_const", const=True, default=None, help=argparse.SUPPRESS)
    g.add_argument(off, dest=key, action="store_const", const=False, help=help_off)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rotsr", description="Rotational-scan super-resolution pipeline.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="write a synthetic phantom dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--shift-kind", dest="shift_kind", choices=["constant", "uniform", "walk"])
    p.add_argument("--shift", type=int, help="even-row displacement magnitude (px)")
    p.add_argument("--scale", type=int)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)

    p = sub.add_parser("preprocess", help="median filter + odd/even row registration")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--skip-median", dest="median", action="store_const", const=False)
    p.add_argument("--skip-registration", dest="registration", action="store_const", const=False)
    p.add_argument("--shifts-out", dest="shifts_out")

    p = sub.add_parser("degrade", help="apply the displacement degradation to an LR image")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--shift-max", dest="deg_shift_max", type=int)
    p.add_argument("--noise-max", dest="deg_noise_max", type=float)
    p.add_argument("--p-stage", dest="deg_p_stage", type=float)

    p = sub.add_parser("train", help="train an SR model on <data>/train")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="scale-2 checkpoint to start from (upsampler re-drawn)")
    p.add_argument("--scale", type=int, choices=[2, 4, 8])
    p.add_argument("--steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--ckpt-every", dest="ckpt_every", type=int)
    _flag_pair(p, "registration", "--registration", "--no-registration", "train on unregistered scans")
    _flag_pair(p, "patch_selection", "--patch-selection", "--no-patch-selection", "uniform patch sampling")
    _flag_pair(p, "consistency_loss", "--consistency-loss", "--no-consistency-loss", "lambda = 0")
    _flag_pair(p, "displacement_degradation", "--degradation", "--no-degradation", "skip LR degradation")
    _flag_pair(p, "augmentation", "--augmentation", "--no-augmentation", "no rotation augmentation")

    p = sub.add_parser("infer", help="super-resolve one LR raw image")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a model or baseline on <data>/test")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--scale", type=int, choices=[2, 4, 8])
    p.add_argument("--baseline", choices=["bicubic", "bilinear", "none"])
    p.add_argument("--ckpt")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--images", help="directory for restored PGMs and comparison panels")

    p = sub.add_parser("reconstruct", help="scan-convert a raw image")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["scatter", "gather"], default="scatter")
    p.add_argument("--mask-out", dest="mask_out")

    p = sub.add_parser("report", help="summarize metric reports as CSV plus figures")
    _add_common(p)
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--labels", nargs="+")
    p.add_argument("--loss", nargs="+", help="loss CSVs to plot")
    p.add_argument("--out", required=True)
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "preprocess": cmd_preprocess,
    "degrade": cmd_degrade,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "reconstruct": cmd_reconstruct,
    "report": cmd_report,
}


def _set_threads():
    val = os.environ.get("ROTSR_THREADS")
    if not val:
        return
    try:
        n = int(val)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"ROTSR_THREADS must be a positive integer, got {val!r}") from None
    import torch
    torch.set_num_threads(n)


def run(argv=None) -> int:
    """Execute one subcommand; returns the process exit code."""
    from .checkpoint import CheckpointError
    from .train import NumericError

    def fail(code, msg):
        print(f"rotsr: error: {msg}", file=sys.stderr)
        return code

    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        return fail(EXIT_USAGE, e)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    try:
        _set_threads()
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as e:
        return fail(EXIT_USAGE, e)
    except ConfigError as e:
        return fail(EXIT_CONFIG, e)
    except (NumericError, FloatingPointError) as e:
        return fail(EXIT_NUMERIC, e)
    except CheckpointError as e:
        return fail(EXIT_IO, e)
    except OSError as e:
        name = getattr(e, "filename", None)
        return fail(EXIT_IO, f"{name}: {e.strerror}" if name and e.strerror else e)
    except ValueError as e:
        return fail(EXIT_CONFIG, e)
    return EXIT_OK


def main() -> None:
    logging.basicConfig(level=os.environ.get("ROTSR_LOG", "WARNING"), format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
