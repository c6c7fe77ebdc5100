"""Command-line entry point: ``xsub <subcommand> [--config PATH] [--out DIR] ...``.

Exit codes: 0 success, 2 config error, 3 file error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .. import attack as atk
from ..data import write_pnm
from ..defense import CleanReference, calibrate
from ..errors import XSubError
from ..explainer import Explainer
from ..model import filter_correct, load_checkpoint, save_checkpoint, train
from . import experiment as exp
from .config import Config, dump_config, load_config
from .plotdata import emit_plot_data

log = logging.getLogger("xsub")

MODEL_FILE = "model.json"
CACHE_FILE = "golden_cache.json"
REFERENCE_FILE = "reference.json"


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("XSUB_OUT") or "xsub-out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load(args) -> Config:
    cfg = load_config(args.config)
    if args.seed_override is not None:
        cfg = cfg.with_seed(args.seed_override)
    return cfg


def _workspace(cfg: Config, out: Path, defense=False) -> exp.Workspace:
    model = load_checkpoint(out / MODEL_FILE)
    train_set, test_set = exp.load_data(cfg)
    g = Explainer.from_dataset(model, train_set, cfg.explainer_config())
    cache = atk.load_or_build_cache(out / CACHE_FILE, model, g, test_set, cfg.attack_config())
    ref = None
    if defense:
        ref_path = out / REFERENCE_FILE
        ref = CleanReference.load(ref_path) if ref_path.exists() else calibrate(model, train_set)
    return exp.Workspace(cfg.seed, train_set, test_set, model, g, cache,
                         filter_correct(model, test_set), ref)


def cmd_train(cfg, out, args):
    train_set, test_set = exp.load_data(cfg)
    model = train(train_set, cfg.train_config())
    save_checkpoint(model, out / MODEL_FILE)
    (out / "config.effective").write_text(dump_config(cfg), encoding="utf-8")
    print(f"clean accuracy {atk.accuracy(model, test_set):.4f} -> {out / MODEL_FILE}")


def cmd_golden(cfg, out, args):
    model = load_checkpoint(out / MODEL_FILE)
    train_set, test_set = exp.load_data(cfg)
    g = Explainer.from_dataset(model, train_set, cfg.explainer_config())
    cache = atk.build_golden_cache(model, g, test_set, cfg.attack_config(), out / CACHE_FILE)
    for w in cache.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{len(cache)} golden entries, offline queries {cache.offline.as_dict()} "
          f"-> {out / CACHE_FILE}")


def _cells(cfg: Config):
    return [(cfg["attack.alpha"], cfg["attack.beta"], cfg["attack.k"], cfg["attack.mode"])]


def cmd_attack(cfg, out, args):
    ws = _workspace(cfg, out, defense=cfg["defense.enabled"])
    records = [exp.run_cell(ws, cfg, a, b, k, m, "adversarial", cfg["defense.enabled"])
               for a, b, k, m in _cells(cfg)]
    exp.append_csv(out / "attack.csv", records)
    for r in records:
        print(f"alpha={r.alpha} beta={r.beta} K={r.k} mode={r.mode}: attack SR {r.attack_sr:.4f}, "
              f"queries/sample predict={r.queries_predict} explain={r.queries_explain}")


def cmd_backdoor(cfg, out, args):
    ws = _workspace(cfg, out)
    acfg = cfg.attack_config()
    artifacts = {}
    record = exp.run_cell(ws, cfg, acfg.alpha, acfg.beta, acfg.k, acfg.placement_mode,
                          "backdoor", cfg["defense.enabled"], artifacts)
    save_checkpoint(artifacts["model"], out / "backdoored_model.json")
    exp.append_csv(out / "backdoor.csv", [record])
    report = artifacts["report"]
    print(f"poisoned {report.n_poison} samples; clean acc {report.clean_accuracy:.4f}, "
          f"backdoored acc {report.backdoor_accuracy:.4f}, trigger SR {report.attack_sr:.4f}")


def cmd_defend(cfg, out, args):
    model = load_checkpoint(out / MODEL_FILE)
    train_set, _ = exp.load_data(cfg)
    ref = calibrate(model, train_set)
    ref.save(out / REFERENCE_FILE)
    ws = _workspace(cfg, out, defense=True)
    record = exp.run_cell(ws, cfg, cfg["attack.alpha"], cfg["attack.beta"], cfg["attack.k"],
                          cfg["attack.mode"], "adversarial", defense=True)
    exp.append_csv(out / "defense.csv", [record])
    calib_rate = float(np.mean(ref.calibration_scores > ref.threshold))
    print(f"threshold {ref.threshold:.6g}; calibration false-flag rate {calib_rate:.4f}; "
          f"detection rate {record.detection_rate:.4f}")


def cmd_sweep(cfg, out, args):
    records = exp.run_sweep(cfg, workers=args.workers)
    path = exp.append_csv(out / "sweep.csv", records)
    print(f"{len(records)} cells -> {path}")


def cmd_plot_data(cfg, out, args):
    src = Path(args.csv) if args.csv else out / "sweep.csv"
    for path in emit_plot_data(src, out / "plot"):
        print(path)


def cmd_export_images(cfg, out, args):
    ws = _workspace(cfg, out)
    acfg = cfg.attack_config()
    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    desc = ws.test.descriptor
    ext = "pgm" if desc.shape[2] == 1 else "ppm"
    n = min(cfg["export.count"], len(ws.kept))
    for i in range(n):
        o = atk.adversarial_attack(ws.model, ws.explainer, ws.kept[i], ws.cache, acfg, index=i)
        tag = f"{i:05d}_a{acfg.alpha:g}_b{acfg.beta:g}_k{acfg.k}_{acfg.placement_mode}"
        write_pnm(img_dir / f"{tag}_orig.{ext}", o.sample.data, desc)
        write_pnm(img_dir / f"{tag}_pert.{ext}", o.perturbed, desc)
    print(f"wrote {2 * n} images to {img_dir}")


COMMANDS = {
    "train": cmd_train,
    "golden": cmd_golden,
    "attack": cmd_attack,
    "backdoor": cmd_backdoor,
    "defend": cmd_defend,
    "sweep": cmd_sweep,
    "plot-data": cmd_plot_data,
    "export-images": cmd_export_images,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xsub", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--out", default=None, help="output directory (default $XSUB_OUT)")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed-override", type=int, default=None)
        if name == "plot-data":
            p.add_argument("--csv", default=None, help="sweep CSV (default OUT/sweep.csv)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        COMMANDS[args.command](cfg, _out_dir(args), args)
    except XSubError as exc:
        key = getattr(exc, "key", None)
        print(f"error: {exc}" + (f" [key: {key}]" if key else ""), file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
