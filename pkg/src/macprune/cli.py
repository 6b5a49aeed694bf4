"""Command-line runner.

    macprune <mode> [--config FILE] [key=value ...]

Each mode writes into ``out`` (default ``./out``).  Every output file gets a
``<file>.json`` sidecar holding the config hash and the config itself.  On any
error the files written so far are removed, a single ``error: ...`` line goes
to stderr and the exit status is 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import MODES, ConfigError, ExperimentConfig, load_config
from .dema import recover_sequential
from .emsim import LeakageParams, read_traces, simulate_traces, write_traces
from .overhead import breakeven_p, write_grid_csv
from .pam import IapamConfig, InvalidConfigError, RpamConfig, read_mask_csv
from .qinference import QuantizedFirstLayer, ShapeError, load_inputs_csv, load_layer_csv, write_int_grid
from .strength import P_GRID, write_j_star_csv, write_r_curve_csv


class Outputs:
    """Tracks written files so a failed run can be rolled back."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.dir = Path(cfg.out)
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        self.files.append(p)
        return p

    def meta(self, path: Path, **extra) -> None:
        side = path.with_name(path.name + ".json")
        self.files.append(side)
        doc = {"config_hash": self.cfg.hash(), "config": self.cfg.public_dict(), "version": __version__, **extra}
        side.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")

    def rollback(self) -> None:
        for p in self.files:
            p.unlink(missing_ok=True)


def _layer(cfg: ExperimentConfig) -> QuantizedFirstLayer:
    if cfg.layer:
        layer = load_layer_csv(cfg.layer)
        if layer.n_macs != cfg.M:
            raise ConfigError(f"layer file has {layer.n_macs} MACs but M={cfg.M}")
        return layer
    return QuantizedFirstLayer.random(cfg.M, cfg.seed)


def _defense(cfg: ExperimentConfig, layer: QuantizedFirstLayer):
    if cfg.q > 0:
        grid = read_mask_csv(cfg.map)
        if grid.size != layer.n_pixels:
            raise ConfigError(f"map has {grid.size} pixels, layer has {layer.n_pixels}")
        return IapamConfig(cfg.p, cfg.q, grid.reshape(layer.dims))
    if cfg.p < 1:
        return RpamConfig(cfg.p)
    return None


def _params(cfg: ExperimentConfig) -> LeakageParams:
    return LeakageParams(cfg.epsilon, cfg.c, cfg.sigma)


def run_simulate(cfg: ExperimentConfig, out: Outputs) -> str:
    layer = _layer(cfg)
    ts = simulate_traces(layer, cfg.n_traces, _params(cfg), cfg.seed, _defense(cfg, layer))
    tp = out.path("traces.macp")
    write_traces(tp, ts.samples)
    out.meta(tp, traces=ts.meta, units="em_amplitude (arbitrary, float32)")
    ip = out.path("inputs.csv")
    write_int_grid(ip, ts.pixels if cfg.n_traces else np.empty((0, layer.n_pixels)),
                   "pixel_value_uint8; one trace per row, pixel index order")
    out.meta(ip)
    lp = out.path("layer.csv")
    write_int_grid(lp, layer.weights.reshape(layer.dims), "weight_int8 in MAC order, row-major")
    out.meta(lp, layer_hash=layer.digest())
    return f"wrote {cfg.n_traces} traces of {ts.samples.shape[1]} samples to {tp}"


def _load_trace_set(cfg: ExperimentConfig):
    samples, meta = read_traces(cfg.traces)
    base = Path(cfg.traces).parent
    pixels = load_inputs_csv(base / "inputs.csv")
    layer = load_layer_csv(cfg.layer) if cfg.layer else load_layer_csv(base / "layer.csv")
    if pixels.shape[0] != samples.shape[0]:
        raise ConfigError(f"{samples.shape[0]} traces but {pixels.shape[0]} input rows")
    return samples, pixels, layer


def run_attack(cfg: ExperimentConfig, out: Outputs) -> str:
    if cfg.traces:
        samples, pixels, layer = _load_trace_set(cfg)
    else:
        layer = _layer(cfg)
        ts = simulate_traces(layer, cfg.n_traces, _params(cfg), cfg.seed, _defense(cfg, layer))
        samples, pixels = ts.samples, ts.pixels
    if samples.shape[0]:
        X = layer.mac_inputs(pixels)
    else:
        X = np.empty((0, layer.n_macs), dtype=np.int64)
    res = recover_sequential(samples, X, min(cfg.j_max, layer.n_macs))
    ap = out.path("attack.csv")
    res.write_csv(ap, layer.weights[: cfg.j_max])
    good = res.correct_prefix(layer.weights)
    out.meta(ap, correct_prefix=good, errors=res.errors(layer.weights), traces_used=res.traces_used)
    return f"recovered {good}/{cfg.j_max} leading weights from {res.traces_used} traces"


def run_strength(cfg: ExperimentConfig, out: Outputs) -> str:
    jp = out.path("j_star.csv")
    write_j_star_csv(jp, P_GRID, cfg.threshold, ("basic", "adaptive"))
    out.meta(jp)
    for mode in ("basic", "adaptive"):
        rp = out.path(f"r_curve_{mode}.csv")
        write_r_curve_csv(rp, P_GRID, range(1, 41), mode)
        out.meta(rp)
    return f"wrote {jp}"


def _toy_model(cfg: ExperimentConfig):
    from .iapam import finetune_dropout, load_digits_dataset, train_classifier

    ds = load_digits_dataset(cfg.seed)
    model = train_classifier(ds, seed=cfg.seed)
    if cfg.p < 1:
        model = finetune_dropout(model, ds, cfg.p, seed=cfg.seed)
    return ds, model


def run_train_iapam(cfg: ExperimentConfig, out: Outputs) -> str:
    from .iapam import defended_accuracy, train_map

    ds, model = _toy_model(cfg)
    tm, scores = train_map(model, ds, cfg.q, cfg.alpha, cfg.epochs, cfg.iterations, cfg.seed,
                           lr=cfg.lr, mode=cfg.forward)
    mp = out.path("map.csv")
    tm.write_csv(mp)
    out.meta(mp, critical_pixels=int(tm.critical.sum()))
    sp = out.path("importance.csv")
    with open(sp, "w", newline="") as fh:
        fh.write("# importance_score (sum of sigmoid(m) over iterations)\n")
        csv.writer(fh, lineterminator="\n").writerows([[f"{v:.6f}" for v in row] for row in scores.S])
    out.meta(sp)
    hp = out.path("training_curve.csv")
    tm.write_history_csv(hp)
    out.meta(hp, final_soft_active_ratio=tm.final_soft_ratio)
    x, y = ds.x_test, ds.y_test
    ep = out.path("accuracy.csv")
    with open(ep, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["condition", "accuracy_fraction"])
        w.writerow(["unmasked", f"{model.accuracy(x, y):.6f}"])
        w.writerow([f"rpam_p{cfg.p:g}", f"{defended_accuracy(model, x, y, RpamConfig(cfg.p), cfg.seed):.6f}"])
        w.writerow([f"iapam_p{cfg.p:g}_q{cfg.q:g}",
                    f"{defended_accuracy(model, x, y, tm.iapam_config(cfg.p), cfg.seed):.6f}"])
    out.meta(ep)
    return f"final soft active ratio {tm.final_soft_ratio:.4f} (q={cfg.q:g}); map in {mp}"


def run_overhead(cfg: ExperimentConfig, out: Outputs) -> str:
    op = out.path("overhead.csv")
    ps = P_GRID + (1.0,)
    qs = tuple(round(0.1 * i, 1) for i in range(10))
    write_grid_csv(op, cfg.M, ps, qs, (cfg.D,), cfg.network_budget or None)
    out.meta(op, breakeven_p=breakeven_p(cfg.D))
    return f"break-even keep rate for D={cfg.D}: p < {breakeven_p(cfg.D):.6g}"


def run_robustness(cfg: ExperimentConfig, out: Outputs) -> str:
    from .iapam import robustness_sweep

    ds, model = _toy_model(cfg)
    ratios = tuple(round(0.1 * i, 1) for i in range(11))
    rows = robustness_sweep(model, ds, ratios, cfg.seed)
    rp = out.path("robustness.csv")
    with open(rp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zeroization_ratio", "accuracy_fraction"])
        for r, acc in rows:
            w.writerow(["unmasked" if r is None else f"{r:g}", f"{acc:.6f}"])
    out.meta(rp)
    return f"baseline accuracy {rows[0][1]:.4f}; wrote {rp}"


RUNNERS = {
    "simulate": run_simulate,
    "attack": run_attack,
    "strength": run_strength,
    "train-iapam": run_train_iapam,
    "overhead": run_overhead,
    "robustness": run_robustness,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="macprune", description="Pixel-pruning side-channel experiments.")
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", help="flat key=value config file")
    ap.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides")
    return ap


def run(cfg: ExperimentConfig) -> str:
    out = Outputs(cfg)
    try:
        return RUNNERS[cfg.mode](cfg, out)
    except BaseException:
        out.rollback()
        raise


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, mode=args.mode)
        print(run(cfg))
    except (ConfigError, InvalidConfigError, ShapeError, ValueError, OSError) as e:
        msg = " ".join(str(e).split())
        print(f"error: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
