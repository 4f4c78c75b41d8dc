"""Command-line entry point: ``occmap <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import platform
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import METHODS, baseline_decide, interpolate
from .config import ExperimentConfig, load_config, save_config
from .dataset import (FieldBank, dataset_path, dataset_stats, generate_dataset, load_dataset, read_spec, stack)
from .errors import OccmapError
from .experiments import Workbench, sweep_experiment
from .metrics import EvalReport, confusion, roc_from_logits, tnr_db
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.network import decide
from .nn.train import predict_logits, train
from .svg import line_plot
from .terrain import FieldMap, save_terrain

log = logging.getLogger("occmap")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


class ValidationError(OccmapError, ValueError):
    pass


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            values = [row[c] for c in columns] if isinstance(row, dict) else row
            w.writerow([_fmt(v) for v in values])


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class Run:
    """Output staging: files go to a temporary directory and move into place on success."""

    def __init__(self, args, cfg: ExperimentConfig):
        self.args, self.cfg = args, cfg
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out))
        self.files: list[str] = []
        self.started = time.perf_counter()

    def path(self, name) -> Path:
        p = self.stage / name
        p.parent.mkdir(parents=True, exist_ok=True)
        top = name.split("/")[0]
        if top not in self.files:
            self.files.append(top)
        return p

    def commit(self, extra=None):
        manifest = {
            "command": self.args.command,
            "config_hash": self.cfg.digest(),
            "dataset_seed": self.cfg.dataset.seed,
            "train_seed": self.cfg.train.seed,
            "occmap_version": __version__,
            "numpy_version": np.__version__,
            "python_version": platform.python_version(),
            "jobs": self.args.jobs,
            "outputs": ",".join(sorted(self.files)),
        }
        manifest.update(extra or {})
        manifest["wall_time_s"] = f"{time.perf_counter() - self.started:.3f}"
        save_config(self.cfg, self.path("config.json"))
        with open(self.stage / "manifest.txt", "w") as f:
            for k, v in manifest.items():
                f.write(f"{k}={v}\n")
        for child in sorted(self.stage.iterdir()):
            dest = self.out / child.name
            if dest.is_dir():
                shutil.rmtree(dest)
            elif dest.exists():
                dest.unlink()
            shutil.move(str(child), str(dest))
        self.stage.rmdir()

    def abort(self):
        shutil.rmtree(self.stage, ignore_errors=True)


# ---------------------------------------------------------------------------
# input resolution
# ---------------------------------------------------------------------------

def _dataset_file(arg, split) -> Path:
    if arg is None:
        raise ValidationError(f"--dataset is required (directory holding {split}.sdst, or a file)")
    p = Path(arg)
    if p.is_dir():
        p = dataset_path(p, split)
    if not p.exists():
        raise ValidationError(f"dataset file {p} does not exist")
    return p


def _checkpoint(arg):
    if arg is None:
        raise ValidationError("--checkpoint is required")
    p = Path(arg)
    if p.is_dir():
        p = p / "network.snet"
    if not p.exists():
        raise ValidationError(f"checkpoint {p} does not exist")
    return load_checkpoint(p)


def _load_pairs(path):
    pairs = list(load_dataset(path))
    if not pairs:
        raise ValidationError(f"{path} holds no pairs")
    return pairs


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_config(run: Run):
    run.path("config.json")


def cmd_terrain(run: Run):
    terrain = run.cfg.dataset.terrain.build()
    save_terrain(terrain, run.path("terrain.asc"))
    alt = terrain.altitude
    row = {"width": terrain.width, "height": terrain.height, "cell_size_m": terrain.cell_size_m,
           "roughness": terrain.roughness, "min_m": float(alt.min()), "max_m": float(alt.max()),
           "peak_to_peak_m": float(np.ptp(alt))}
    write_csv(run.path("terrain.csv"), list(row), [row])
    print(f"terrain {terrain.width}x{terrain.height} peak-to-peak {row['peak_to_peak_m']:.3f} m")


def cmd_dataset(run: Run):
    cfg = run.cfg
    terrain = cfg.dataset.terrain.build()
    bank = FieldBank(terrain, cfg.dataset.propagation, run.args.jobs)
    rows = []
    for split, spec in (("train", cfg.train_spec), ("test", cfg.test_spec)):
        path = run.path(f"{split}.sdst")
        generate_dataset(spec, path, bank=bank)
        stats = dataset_stats(path)
        for n, count in stats["per_count"].items():
            rows.append({"split": split, "n_emitters": n, "maps": count,
                         "mean_occupancy": stats["mean_occupancy_per_count"].get(n, math.nan)})
        print(f"{split}: {stats['maps_total']} pairs, mean occupancy {stats['mean_occupancy']:.4f}")
    write_csv(run.path("dataset_stats.csv"), ["split", "n_emitters", "maps", "mean_occupancy"], rows)


def cmd_train(run: Run):
    cfg = run.cfg
    path = _dataset_file(run.args.dataset, "train")
    spec = read_spec(path)
    x, t = stack(_load_pairs(path))
    rows = []

    def cb(epoch, loss, lr):
        rows.append({"epoch": epoch, "loss": float(loss), "learning_rate": float(lr)})
        log.info("epoch %d loss %.6f", epoch, loss)

    result = train(x, t, cfg.train, callback=cb)
    meta = {"train_config": cfg.train.to_dict(), "dataset_digest": spec.digest(), "config_hash": cfg.digest(),
            "epoch_losses": [float(v) for v in result.epoch_losses]}
    save_checkpoint(run.path("network.snet"), result.network, meta, result.optimizer)
    write_csv(run.path("train_log.csv"), ["epoch", "loss", "learning_rate"], rows)
    table = result.network.layer_table()
    write_csv(run.path("layers.csv"), list(table[0]), table)
    print(f"trained {cfg.train.epochs} epochs: loss {result.epoch_losses[0]:.6f} -> {result.epoch_losses[-1]:.6f}")


def _eval_inputs(run: Run):
    ckpt = _checkpoint(run.args.checkpoint)
    path = _dataset_file(run.args.dataset, "test")
    spec = read_spec(path)
    pairs = _load_pairs(path)
    x, t = stack(pairs)
    if x.shape[-1] != ckpt.network.input_side:
        raise ValidationError(f"dataset side {x.shape[-1]} does not match network side {ckpt.network.input_side}")
    return ckpt.network, spec, x, t


def cmd_eval(run: Run):
    net, spec, x, t = _eval_inputs(run)
    theta = run.cfg.train.theta
    rep = EvalReport.from_counts(confusion(t, decide(predict_logits(net, x), theta)), theta, spec.tau_dbm,
                                 tnr_db(spec.tau_dbm, spec.noise_w))
    row = rep.row()
    write_csv(run.path("eval.csv"), list(row), [row])
    print(f"kappa={rep.kappa!r} p_d={rep.p_d!r} p_f={rep.p_f!r}")


def cmd_roc(run: Run):
    net, spec, x, t = _eval_inputs(run)
    reports = roc_from_logits(predict_logits(net, x), t, run.cfg.roc.thetas, spec.tau_dbm,
                              tnr_db(spec.tau_dbm, spec.noise_w))
    rows = [r.row() for r in reports]
    write_csv(run.path("roc.csv"), list(rows[0]), rows)
    print(f"roc: {len(rows)} thresholds")


def cmd_sweep(run: Run):
    cfg = run.cfg
    sw = cfg.sweep
    bench = Workbench(cfg.dataset, cfg.train, test_maps_per_count=sw.test_maps_per_count, jobs=run.args.jobs)
    base_net = _checkpoint(run.args.checkpoint).network if run.args.checkpoint else None
    res = sweep_experiment(sw.kind, bench, sw.resolved_values, sw.seeds, cfg.train.theta, base_net)
    write_csv(run.path(f"sweep_{sw.kind}.csv"), res.columns, res.rows)
    for row in res.as_table():
        print(" ".join(_fmt(v) for v in row))


def cmd_baseline(run: Run):
    cfg = run.cfg
    icfg = cfg.baseline
    if run.args.method:
        icfg = dataclasses.replace(icfg, method=run.args.method)
    path = _dataset_file(run.args.dataset, "test")
    spec = read_spec(path)
    terrain = spec.terrain.build()
    grid = spec.grid_for(terrain)
    truth, preds = [], []
    for j, pair in enumerate(load_dataset(path)):
        dbm = interpolate(pair.provenance.readings, grid, icfg)
        FieldMap(grid.n_side, grid.n_side, dbm.reshape(-1)).save(run.path(f"predictions/map_{j:05d}.sfld"))
        preds.append(baseline_decide(dbm, spec.tau_dbm))
        truth.append(pair.occupancy.bits)
    rep = EvalReport.evaluate(np.stack(truth), np.stack(preds), math.nan, spec.tau_dbm,
                              tnr_db(spec.tau_dbm, spec.noise_w))
    row = {"method": icfg.method, "domain": "dbm", "kernel": icfg.kernel if icfg.method == "rbf" else "",
           **rep.row()}
    write_csv(run.path("baseline.csv"), list(row), [row])
    print(f"{icfg.method}: kappa={rep.kappa!r}")


def _plot_spec(columns):
    if {"p_f", "p_d"} <= set(columns):
        return "p_f", ["p_d"], "false-alarm rate P_F", "detection rate P_D", "ROC", (0.0, 1.0), (0.0, 1.0)
    if "epoch" in columns:
        return "epoch", ["loss"], "epoch", "training loss", "Training loss", None, None
    ys = [c for c in columns if c.startswith("kappa") and not c.endswith("_std")]
    if "value" in columns and ys:
        return "value", ys, "sweep value", "error rate kappa", "Error rate", None, None
    raise ValidationError(f"cannot infer a plot for columns {columns}")


def cmd_plot(run: Run):
    src = run.args.csv
    if src is None or not Path(src).exists():
        raise ValidationError("--csv must name an existing CSV file")
    rows = read_csv(src)
    if not rows:
        raise ValidationError(f"{src} has no data rows")
    xcol, ycols, xlabel, ylabel, title, xlim, ylim = _plot_spec(list(rows[0]))
    xs = [float(r[xcol]) for r in rows]
    series = [(c, xs, [float(r[c]) for r in rows]) for c in ycols]
    svg = line_plot(series, xlabel, ylabel, title, xlim, ylim)
    name = Path(src).with_suffix(".svg").name
    run.path(name).write_text(svg)
    print(f"wrote {name} ({len(xs)} points)")


COMMANDS = {
    "config": (cmd_config, "write the resolved configuration"),
    "terrain": (cmd_terrain, "synthesize or load the terrain raster"),
    "dataset": (cmd_dataset, "generate train and test datasets"),
    "train": (cmd_train, "train the decision network"),
    "eval": (cmd_eval, "error rate on a test set"),
    "roc": (cmd_roc, "ROC sweep over the detection threshold"),
    "sweep": (cmd_sweep, "robustness sweep (tau, n_sensors, noise, tnr, one_bit)"),
    "baseline": (cmd_baseline, "classical interpolation baseline"),
    "plot": (cmd_plot, "render a CSV as an SVG line plot"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (all fields optional)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, help="override dataset and training seeds")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for field synthesis")
    common.add_argument("--dataset", help="dataset directory or .sdst file")
    common.add_argument("--checkpoint", help="network checkpoint file or directory")
    common.add_argument("--epochs", type=int, help="override training epochs")
    common.add_argument("--method", choices=METHODS, help="baseline method override")
    common.add_argument("--csv", help="input CSV for plot")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="occmap", description="Spectrum occupancy mapping toolkit")
    parser.add_argument("--version", action="version", version=f"occmap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        if args.seed < 0:
            raise ValidationError("--seed must be non-negative")
        cfg = dataclasses.replace(cfg, dataset=dataclasses.replace(cfg.dataset, seed=args.seed),
                                  train=dataclasses.replace(cfg.train, seed=args.seed))
    if args.epochs is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, epochs=args.epochs))
    if args.jobs < 1:
        raise ValidationError("--jobs must be >= 1")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        run = Run(args, cfg)
        COMMANDS[args.command][0](run)
        run.commit()
        return EXIT_OK
    except (ValueError, FileNotFoundError) as exc:
        if run is not None:
            run.abort()
        print(f"occmap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        if run is not None:
            run.abort()
        print(f"occmap {args.command}: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
