"""``red-sure`` command line: train, evaluate, denoise, synth, verify, sweep."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path


from red_sure import metrics, verification
from red_sure.analysis import feature_entropy, weight_norm
from red_sure.baselines import KernelSpec, kernel_denoise, kernel_regression_train, regression_train
from red_sure.data import (
    ConfigError,
    DataError,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split,
    write_features,
)
from red_sure.fileio import atomic_write_text, read_json, write_json
from red_sure.red import LOG_COLUMNS, TrainConfig, TrainingError, load_checkpoint, red_train, save_checkpoint
from red_sure.sure import SureConfig

log = logging.getLogger("red_sure")

SPLIT_NAMES = ("train", "val", "test")

DATA_DEFAULTS = {
    "features": None,
    "targets": None,
    "synthetic": None,
    "splits": [0.8, 0.1, 0.1],
    "split_seed": 0,
}

TRAIN_DEFAULTS = {
    "model": "red",
    "kernel": "none",
    "lam": 1.0,
    "epochs": 1000,
    "batch_size": 32,
    "lr": 1e-3,
    "patience": 50,
    "hidden": None,
    "sigma": None,
    "epsilon": None,
    "probes_per_sample": 1,
    "probe_seed": 0,
    "probe_variance": "unit",
    "redraw_probes": True,
    "encoder_init_scale": 0.1,
}

COMMAND_DEFAULTS = {
    "train": {**DATA_DEFAULTS, **TRAIN_DEFAULTS},
    "evaluate": {**DATA_DEFAULTS, **TRAIN_DEFAULTS, "denoiser": "none", "checkpoint": None,
                 "subgroups": [], "eval_splits": list(SPLIT_NAMES), "pcc_mode": "pooled"},
    "denoise": {**DATA_DEFAULTS, "denoiser": None},
    "synth": {"synthetic": None},
    "verify": {"trials": 10_000, "probes": 100_000, "probe_variance": "unit", "sigma": 2.0},
    "sweep": {**DATA_DEFAULTS, **TRAIN_DEFAULTS, "lambdas": [0.0, 0.1, 0.5, 1.0, 2.0, 5.0],
              "seeds": [0, 1, 2], "workers": None},
}
GLOBAL_DEFAULTS = {"seed": 0, "out": "out", "quiet": False}

SWEEP_COLUMNS = ("lambda", "seed", "val_rmse", "val_mae", "val_pcc", "test_rmse",
                 "test_mae", "test_pcc", "head_weight_l2", "feature_entropy")

SYNTH_KEYS = {"n_samples", "latent_dim", "K", "M", "sigma", "target_noise", "seed"}


# ---------------------------------------------------------------------------
# config handling


def _parse_synthetic(text):
    """``"n_samples=800,K=64,..."`` or a JSON object."""
    text = text.strip()
    if text.startswith("{"):
        return json.loads(text)
    out = {}
    for part in filter(None, text.split(",")):
        key, _, val = part.partition("=")
        out[key.strip()] = float(val) if key.strip() in ("sigma", "target_noise") else int(val)
    return out


def _float_list(text):
    return [float(x) for x in text.split(",") if x]


def _int_list(text):
    return [int(x) for x in text.split(",") if x]


def _bool(text):
    if text.lower() in ("1", "true", "yes"):
        return True
    if text.lower() in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_data_flags(p):
    p.add_argument("--features", help="feature CSV (id,f0,...)")
    p.add_argument("--targets", help="target CSV (id,v0,...,tags)")
    p.add_argument("--synthetic", type=_parse_synthetic,
                   help="synthetic spec, e.g. n_samples=800,latent_dim=8,K=64,M=52,sigma=1")
    p.add_argument("--splits", type=_float_list, help="train,val,test fractions")
    p.add_argument("--split-seed", type=int)


def _add_train_flags(p):
    p.add_argument("--model", choices=["red", "regression"])
    p.add_argument("--kernel", help="feature smoothing for regression: none, mean:k, median:k")
    p.add_argument("--lam", "--lambda", dest="lam", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--sigma", type=float, help="noise std of the features (required for real data)")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--probes-per-sample", type=int)
    p.add_argument("--probe-seed", type=int)
    p.add_argument("--probe-variance", choices=["unit", "sigma_squared"])
    p.add_argument("--redraw-probes", type=_bool)
    p.add_argument("--encoder-init-scale", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="red-sure", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--quiet", action="store_true", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train RED or plain regression")
    _add_data_flags(p)
    _add_train_flags(p)

    p = sub.add_parser("evaluate", parents=[common], help="metrics per split and subgroup")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--denoiser", help="none, mean:k, median:k or red:<checkpoint>")
    p.add_argument("--checkpoint", help="regression checkpoint for kernel/none denoisers")
    p.add_argument("--subgroup", dest="subgroups", action="append", help="tag to report separately")
    p.add_argument("--eval-splits", type=lambda s: s.split(","))
    p.add_argument("--pcc-mode", choices=["pooled", "per-sample"])

    p = sub.add_parser("denoise", parents=[common], help="write denoised features")
    _add_data_flags(p)
    p.add_argument("--denoiser", help="mean:k, median:k or red:<checkpoint>")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    p.add_argument("--synthetic", type=_parse_synthetic)

    p = sub.add_parser("verify", parents=[common], help="run the verification suites")
    p.add_argument("--trials", type=int)
    p.add_argument("--probes", type=int)
    p.add_argument("--probe-variance", choices=["unit", "sigma_squared"])
    p.add_argument("--sigma", type=float)

    p = sub.add_parser("sweep", parents=[common], help="train over a grid of lambda and seeds")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--lambdas", type=_float_list)
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--workers", type=int)
    return parser


def resolve_config(args) -> dict:
    """defaults < config file < flags. Unknown config keys are errors."""
    cmd = args.command
    allowed = {**GLOBAL_DEFAULTS, **COMMAND_DEFAULTS[cmd]}
    cfg = dict(allowed)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        data = read_json(path)
        unknown = sorted(set(data) - set(allowed))
        if unknown:
            raise ConfigError(f"unknown config keys for {cmd!r}: {unknown}")
        cfg.update(data)
    for key, val in vars(args).items():
        if key in allowed and val is not None:
            cfg[key] = val
    if cfg.get("synthetic") is not None:
        bad = set(cfg["synthetic"]) - SYNTH_KEYS
        if bad:
            raise ConfigError(f"unknown synthetic keys: {sorted(bad)}")
    return cfg


# ---------------------------------------------------------------------------
# shared helpers


def load_data(cfg):
    if cfg.get("synthetic"):
        s = dict(cfg["synthetic"])
        s.setdefault("target_noise", 0.0)
        s.setdefault("seed", 0)
        return generate_synthetic(SyntheticSpec(**s))
    if not cfg.get("features") or not cfg.get("targets"):
        raise ConfigError("need --features and --targets, or --synthetic")
    for key in ("features", "targets"):
        if not Path(cfg[key]).is_file():
            raise FileNotFoundError(f"{key} file not found: {cfg[key]}")
    return load_dataset(cfg["features"], cfg["targets"])


def split_data(cfg, dataset):
    parts = split(dataset, cfg["splits"], cfg["split_seed"])
    return dict(zip(SPLIT_NAMES, parts))


def noise_sigma(cfg, dataset):
    if cfg.get("sigma") is not None:
        return float(cfg["sigma"])
    if "spec" in dataset.meta:
        return float(dataset.meta["spec"]["sigma"])
    raise ConfigError("--sigma is required for non-synthetic data")


def train_config(cfg, dataset, seed=None, lam=None) -> TrainConfig:
    sure = SureConfig(
        sigma=noise_sigma(cfg, dataset),
        epsilon=cfg["epsilon"],
        probes_per_sample=cfg["probes_per_sample"],
        probe_seed=cfg["probe_seed"],
        probe_variance=cfg["probe_variance"],
    )
    return TrainConfig(
        lam=cfg["lam"] if lam is None else lam,
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        lr=cfg["lr"],
        seed=cfg["seed"] if seed is None else seed,
        sure=sure,
        patience=cfg["patience"],
        hidden=cfg["hidden"],
        redraw_probes=cfg["redraw_probes"],
        encoder_init_scale=cfg["encoder_init_scale"],
    )


def _kernel(text):
    return None if text in (None, "none") else KernelSpec.parse(text)


def train_model(cfg, splits, tcfg):
    """Dispatch on ``model``/``kernel``; returns ``(model, log, kernel)``."""
    if cfg["model"] == "red":
        if _kernel(cfg["kernel"]) is not None:
            raise ConfigError("--kernel only applies to --model regression")
        model, train_log = red_train(splits["train"], splits["val"], tcfg)
        return model, train_log, None
    kernel = _kernel(cfg["kernel"])
    if kernel is None:
        model, train_log = regression_train(splits["train"], splits["val"], tcfg)
    else:
        model, train_log = kernel_regression_train(splits["train"], splits["val"], kernel, tcfg)
    return model, train_log, kernel


def predict(model, Z, kernel=None):
    return model.predict(Z if kernel is None else kernel_denoise(Z, kernel))


def features_for(model, Z, kernel=None):
    return model.denoise(Z if kernel is None else kernel_denoise(Z, kernel))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _report_dict(model, ds, kernel=None, pcc_mode="pooled"):
    return metrics.report(predict(model, ds.Z, kernel), ds.Y, pcc_mode=pcc_mode).to_dict()


def _write_meta(out, cfg):
    write_json(out / "effective_config.json", cfg)
    write_json(out / "run_meta.json", {"finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                                       "argv": sys.argv[1:]})


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg) -> int:
    out = Path(cfg["out"])
    dataset = load_data(cfg)
    splits = split_data(cfg, dataset)
    tcfg = train_config(cfg, dataset)
    model, train_log, kernel = train_model(cfg, splits, tcfg)
    save_checkpoint(out / "checkpoint.json", model, seed=tcfg.seed, lam=tcfg.lam,
                    denoiser="red" if model.encoder is not None else (kernel.label() if kernel else "none"))
    atomic_write_text(out / "train_log.csv", csv_text(LOG_COLUMNS, train_log))
    reports = {name: _report_dict(model, ds, kernel) for name, ds in splits.items()}
    write_json(out / "metrics.json", reports)
    _write_meta(out, cfg)
    log.info("train: %d epochs, val rmse %.4f", len(train_log), reports["val"]["rmse"])
    return 0


def _resolve_denoiser(cfg, dataset, splits):
    """Returns ``(label, model, kernel)`` for the evaluate/denoise commands."""
    name = cfg["denoiser"] or "none"
    if name.startswith("red:"):
        path = Path(name[4:])
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        model, _ = load_checkpoint(path)
        if model.encoder is None:
            raise ConfigError(f"{path} is a plain regression checkpoint, not RED")
        return "red", model, None
    if name != "none" and not name.startswith(("mean:", "median:")):
        raise ConfigError(f"unknown denoiser {name!r}; use none, mean:k, median:k or red:<checkpoint>")
    kernel = _kernel(name)
    if cfg.get("checkpoint"):
        path = Path(cfg["checkpoint"])
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        model, _ = load_checkpoint(path)
        return name, model, kernel
    if splits is None:
        return name, None, kernel
    tcfg = train_config(cfg, dataset)
    model, _ = (regression_train(splits["train"], splits["val"], tcfg) if kernel is None
                else kernel_regression_train(splits["train"], splits["val"], kernel, tcfg))
    return name, model, kernel


def cmd_evaluate(cfg) -> int:
    out = Path(cfg["out"])
    dataset = load_data(cfg)
    splits = split_data(cfg, dataset)
    label, model, kernel = _resolve_denoiser(cfg, dataset, splits)
    rows, payload = [], []
    for split_name in cfg["eval_splits"]:
        if split_name not in splits:
            raise ConfigError(f"unknown split {split_name!r}")
        ds = splits[split_name]
        pred = predict(model, ds.Z, kernel)
        reports = [metrics.report(pred, ds.Y, pcc_mode=cfg["pcc_mode"])]
        for tag in cfg["subgroups"]:
            try:
                reports.append(metrics.subgroup_report(pred, ds.Y, ds.tags, tag, cfg["pcc_mode"]))
            except ValueError as exc:
                raise DataError(f"subgroup {tag!r} in split {split_name!r}: {exc}") from None
        for rep in reports:
            d = {"denoiser": label, "split": split_name, **rep.to_dict()}
            payload.append(d)
            rows.append({"denoiser": label, "split": split_name, "subgroup": rep.subgroup or "all",
                         "n": rep.n_samples, "rmse": rep.rmse, "mae": rep.mae, "pcc": rep.pcc})
    write_json(out / "metrics.json", payload)
    atomic_write_text(out / "metrics.csv",
                      csv_text(("denoiser", "split", "subgroup", "n", "rmse", "mae", "pcc"), rows))
    _write_meta(out, cfg)
    return 0


def cmd_denoise(cfg) -> int:
    out = Path(cfg["out"])
    if not cfg.get("denoiser") or cfg["denoiser"] == "none":
        raise ConfigError("denoise needs --denoiser mean:k, median:k or red:<checkpoint>")
    dataset = load_data(cfg)
    label, model, kernel = _resolve_denoiser(cfg, dataset, None)
    Z = dataset.Z if kernel is None else kernel_denoise(dataset.Z, kernel)
    if model is not None:
        Z = model.denoise(Z)
    write_features(out / "denoised.csv", dataset.ids, Z)
    _write_meta(out, cfg)
    return 0


def cmd_synth(cfg) -> int:
    if not cfg.get("synthetic"):
        raise ConfigError("synth needs --synthetic")
    dataset = load_data(cfg)
    save_dataset(dataset, cfg["out"])
    _write_meta(Path(cfg["out"]), cfg)
    return 0


def cmd_verify(cfg) -> int:
    out = Path(cfg["out"])
    report = verification.run_all(
        trials=cfg["trials"], probes=cfg["probes"], probe_variance=cfg["probe_variance"],
        sigma=cfg["sigma"], seed=cfg["seed"],
    )
    for w in report["warnings"]:
        log.warning(w)
    write_json(out / "verify_report.json", report)
    failed = [c["name"] for c in report["checks"] if not c["pass"]]
    log.info("verify: %d checks, %d failed", len(report["checks"]), len(failed))
    for name in failed:
        log.error("FAILED %s", name)
    if cfg["probe_variance"] == "sigma_squared":
        log.info("mc divergence bias factor %.3f", report["summary"]["mc_divergence_bias_factor"])
    return 0 if report["pass"] else 1


def sweep_cell(cfg, lam, seed):
    dataset = load_data(cfg)
    splits = split_data(cfg, dataset)
    tcfg = train_config(cfg, dataset, seed=seed, lam=lam)
    model, _, kernel = train_model(cfg, splits, tcfg)
    val = _report_dict(model, splits["val"], kernel)
    test = _report_dict(model, splits["test"], kernel)
    return {
        "lambda": float(lam),
        "seed": int(seed),
        **{f"val_{k}": val[k] for k in ("rmse", "mae", "pcc")},
        **{f"test_{k}": test[k] for k in ("rmse", "mae", "pcc")},
        "head_weight_l2": weight_norm(model),
        "feature_entropy": feature_entropy(features_for(model, splits["test"].Z, kernel)),
    }


def pool_size(requested=None) -> int:
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("RED_SURE_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def cmd_sweep(cfg) -> int:
    out = Path(cfg["out"])
    cells = sorted({(float(l), int(s)) for l in cfg["lambdas"] for s in cfg["seeds"]})
    workers = pool_size(cfg["workers"])
    if workers == 1 or len(cells) == 1:
        rows = [sweep_cell(cfg, lam, seed) for lam, seed in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(sweep_cell, cfg, lam, seed) for lam, seed in cells]
            rows = [f.result() for f in futures]
    rows.sort(key=lambda r: (r["lambda"], r["seed"]))
    atomic_write_text(out / "sweep.csv", csv_text(SWEEP_COLUMNS, rows))
    _write_meta(out, cfg)
    return 0


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "denoise": cmd_denoise,
    "synth": cmd_synth,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"red-sure: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING if cfg["quiet"] else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](cfg)
    except (ConfigError, DataError, FileNotFoundError, TrainingError, ValueError) as exc:
        print(f"red-sure: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
