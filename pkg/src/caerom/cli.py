"""Command-line pipeline: generate, train, cluster, eval, report, all.

    caerom <subcommand> --config <path> [--override key=value ...]

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
1 anything else (e.g. a missing prerequisite file). ``CAEROM_THREADS``
caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .autoencoder import TrainConfig, build_cae, build_cnn, train, train_icae
from .autoencoder.training import TrainingError
from .clustering import kmeans_assign, kmeans_fit
from .config import ConfigError, load_config
from .datagen import (IntegrationError, SnapshotSet, build_interp, double_cylinder_preset,
                      generate_preset, single_cylinder_preset, synthetic_wake)
from .lpv import ContractViolation, precompute
from .metrics import METRICS, MetricsError, MetricsReport, compare, evaluate, ranking_csv
from .operators import GridSpec, ProjectorContext, SolverError, assemble_operators
from .plots import label_strip, line_chart
from .pod import RankDeficiencyError, cpod_fit, pod_fit

log = logging.getLogger("caerom")

NUMERICAL_ERRORS = (SolverError, IntegrationError, TrainingError, MetricsError,
                    RankDeficiencyError, ContractViolation, FloatingPointError)
NEURAL = ("cnn", "cae", "icae")


class MissingArtifact(FileNotFoundError):
    pass


# scenario ------------------------------------------------------------------

class Scenario:
    """Grid, operators and interpolation resolved from a config."""

    def __init__(self, cfg):
        self.cfg = cfg
        if cfg.scenario == "synthetic":
            nx, ny = cfg.nx or 32, cfg.ny or 16
            self.grid = GridSpec(nx, ny, 8.0 / nx, 4.0 / ny)
            self.reynolds = cfg.reynolds or 40.0
            self.n_eval = cfg.n_eval or 64
            self.n_train = cfg.n_train or self.n_eval // 2
            self.image_shape = (cfg.image_h or 12, cfg.image_w or 16)
            self.preset = None
        else:
            make = single_cylinder_preset if cfg.scenario == "single" else double_cylinder_preset
            self.preset = make(**{k: v for k, v in (("nx", cfg.nx), ("ny", cfg.ny)) if v})
            self.grid = self.preset.grid
            self.reynolds = cfg.reynolds or self.preset.reynolds
            self.preset.reynolds = self.reynolds
            self.n_eval = cfg.n_eval or self.preset.n_eval
            self.n_train = cfg.n_train or self.preset.n_train
            self.image_shape = (cfg.image_h or self.preset.image_shape[0],
                                cfg.image_w or self.preset.image_shape[1])
        if self.n_train > self.n_eval or self.n_eval % self.n_train:
            raise ConfigError(f"n_train={self.n_train} must divide n_eval={self.n_eval}")
        self._ops = self._pair = None

    @property
    def ops(self):
        if self._ops is None:
            self._ops = assemble_operators(self.grid, self.reynolds)
        return self._ops

    @property
    def pair(self):
        if self._pair is None:
            self._pair = build_interp(self.grid, *self.image_shape)
        return self._pair

    def train_index(self):
        step = self.n_eval // self.n_train
        return np.arange(step - 1, self.n_eval, step)


def _out(cfg):
    return Path(cfg.output_dir)


def _model_dir(cfg, seed, method, n):
    return _out(cfg) / "models" / f"seed{seed}" / f"{method}_n{n}"


def _report_path(cfg, seed, data_set, method, n):
    return _out(cfg) / "reports" / f"seed{seed}" / data_set / f"{method}_n{n}.csv"


def _require(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing {path}; run the earlier pipeline stage first")
    return path


def _freeze_config(cfg):
    io.write_text(_out(cfg) / "config.txt", cfg.to_text())


# stages --------------------------------------------------------------------

def cmd_generate(cfg):
    sc = Scenario(cfg)
    _freeze_config(cfg)
    if cfg.scenario == "synthetic":
        data = synthetic_wake(sc.grid, cfg.synthetic_modes, sc.n_eval, seed=cfg.seeds[0])
    else:
        data = generate_preset(sc.preset, sc.ops, sc.n_eval)
    train_set = data.subset(sc.train_index())
    d = _out(cfg) / "data"
    io.write_matrix(d / "eval_states.bin", data.states)
    io.write_matrix(d / "eval_times.bin", data.times)
    io.write_matrix(d / "train_states.bin", train_set.states)
    io.write_matrix(d / "train_times.bin", train_set.times)
    ops = sc.ops
    io.write_matrix(d / "operators" / "M.bin", ops.M)
    io.write_matrix(d / "operators" / "f.bin", ops.f)
    io.write_sparse(d / "operators" / "A.bin", ops.A)
    io.write_sparse(d / "operators" / "J.bin", ops.J)
    io.write_json(d / "manifest.json", {
        "scenario": cfg.scenario, "nx": sc.grid.nx, "ny": sc.grid.ny, "dx": sc.grid.dx,
        "dy": sc.grid.dy, "reynolds": sc.reynolds, "n_v": int(ops.n_v),
        "n_p": int(ops.n_p), "n_eval": int(data.n_snapshots),
        "n_train": int(train_set.n_snapshots), "image_shape": list(sc.image_shape)})
    log.info("generated %d snapshots (%d train)", data.n_snapshots, train_set.n_snapshots)
    return data, train_set


def load_data(cfg, sc, which):
    d = _out(cfg) / "data"
    states = io.read_matrix(_require(d / f"{which}_states.bin"))
    times = io.read_matrix(_require(d / f"{which}_times.bin"))[:, 0]
    if states.shape[0] != 2 * sc.grid.n_nodes:
        raise ConfigError("dataset does not match the configured grid; rerun generate")
    return SnapshotSet(states, times, sc.grid)


def _train_cfg(cfg, seed, icae=False):
    if icae:
        return TrainConfig(epochs=cfg.icae_epochs, batch_size=cfg.batch_size,
                           lr=cfg.icae_lr, seed=seed)
    return TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, seed=seed)


def _write_curve(path, curves):
    rows = [["epoch"] + [f"loss_{i}" for i in range(len(curves))]]
    for e in range(max(len(c) for c in curves)):
        rows.append([e + 1] + [repr(float(c[e])) if e < len(c) else "" for c in curves])
    io.write_text(path, "".join(",".join(map(str, r)) + "\n" for r in rows))


def cmd_train(cfg):
    sc = Scenario(cfg)
    _freeze_config(cfg)
    data = load_data(cfg, sc, "train")
    for seed in cfg.seeds:
        for n in cfg.n_rho:
            if {"pod", "cpod"} & set(cfg.methods):
                io.save_model(_model_dir(cfg, seed, "pod", n), pod_fit(data, n))
            if "cnn" in cfg.methods:
                V = pod_fit(data, cfg.cnn_modes).V
                model = build_cnn(sc.pair, V, n, seed=seed, data=data)
                res = train(model, data, sc.pair, _train_cfg(cfg, seed))
                io.save_model(_model_dir(cfg, seed, "cnn", n), model)
                _write_curve(_model_dir(cfg, seed, "cnn", n) / "loss.csv", [res.loss_curve])
            if {"cae", "icae"} & set(cfg.methods):
                model = build_cae(sc.pair, n, seed=seed, data=data)
                res = train(model, data, sc.pair, _train_cfg(cfg, seed))
                io.save_model(_model_dir(cfg, seed, "cae", n), model)
                _write_curve(_model_dir(cfg, seed, "cae", n) / "loss.csv", [res.loss_curve])
            log.info("trained seed=%d n_rho=%d", seed, n)


def cmd_cluster(cfg):
    sc = Scenario(cfg)
    _freeze_config(cfg)
    data = load_data(cfg, sc, "train")
    for seed in cfg.seeds:
        for n in cfg.n_rho:
            if "cpod" in cfg.methods:
                basis = io.load_model(_require(_model_dir(cfg, seed, "pod", n)))
                km = kmeans_fit(basis.encode(data.states).T, cfg.k, seed=seed,
                                restarts=cfg.kmeans_restarts)
                io.save_model(_model_dir(cfg, seed, "cpod", n), cpod_fit(data, n, km, basis))
            if "icae" in cfg.methods:
                cae = io.load_model(_require(_model_dir(cfg, seed, "cae", n)), sc.pair)
                km = kmeans_fit(cae.encode(data.states).T, cfg.k, seed=seed,
                                restarts=cfg.kmeans_restarts)
                model = train_icae(cae, km, data, _train_cfg(cfg, seed, icae=True))
                io.save_model(_model_dir(cfg, seed, "icae", n), model)
                _write_curve(_model_dir(cfg, seed, "icae", n) / "loss.csv", model.loss_curves)
            log.info("clustered seed=%d n_rho=%d", seed, n)


def _k_of(method, cfg):
    return cfg.k if method in ("cpod", "icae") else 1


def evaluate_model(sc, model, method, data, n, seed, cfg, dataset):
    ops = sc.ops
    coeffs = precompute(ops, model)
    assign = None
    if method in ("cpod", "icae"):
        km = model.kmeans

        def assign(rho):
            return kmeans_assign(km, rho)
    report = evaluate(ops, ProjectorContext(ops), data, model.encode, model.decode,
                      method=method, n_rho=n, k=_k_of(method, cfg), dataset=dataset,
                      seed=seed, coeffs=coeffs, assign=assign)
    if assign is not None:
        report.labels = [int(assign(r)) for r in np.atleast_2d(model.encode(data.states)).T]
    return report


def cmd_eval(cfg):
    sc = Scenario(cfg)
    _freeze_config(cfg)
    for data_set in cfg.eval_sets:
        data = load_data(cfg, sc, data_set)
        for seed in cfg.seeds:
            for n in cfg.n_rho:
                for method in cfg.methods:
                    mdir = _require(_model_dir(cfg, seed, method, n))
                    model = io.load_model(mdir, sc.pair if method in NEURAL else None)
                    rep = evaluate_model(sc, model, method, data, n, seed, cfg,
                                         f"{cfg.scenario}/{data_set}")
                    io.write_text(_report_path(cfg, seed, data_set, method, n), rep.to_csv())
                    if getattr(rep, "labels", None) is not None:
                        io.write_text(_report_path(cfg, seed, data_set, method, n)
                                      .with_suffix(".labels.csv"),
                                      "".join(f"{l + 1}\n" for l in rep.labels))
                    log.info("evaluated %s n_rho=%d seed=%d on %s: reconstruction %.4g",
                             method, n, seed, data_set, rep.average("reconstruction"))


def read_report(path, method, n, k, dataset, seed):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], [r for r in rows[1:] if r[0] != "mean"]
    series = {m: [] for m in METRICS}
    for r in body:
        for m in METRICS:
            v = r[header.index(m)]
            series[m].append(None if v == "undefined" else float(v))
    times = np.array([float(r[1]) for r in body]) if body and body[0][1] else None
    return MetricsReport(method, n, k, dataset, seed, series, times)


def cmd_report(cfg):
    sc = Scenario(cfg)
    _freeze_config(cfg)
    out = _out(cfg) / "reports"
    for data_set in cfg.eval_sets:
        for seed in cfg.seeds:
            reports = []
            for n in cfg.n_rho:
                for method in cfg.methods:
                    path = _require(_report_path(cfg, seed, data_set, method, n))
                    reports.append(read_report(path, method, n, _k_of(method, cfg),
                                               f"{cfg.scenario}/{data_set}", seed))
            io.write_text(out / f"ranking_{data_set}_seed{seed}.csv",
                          ranking_csv(compare(reports)))
            _plots(cfg, sc, reports, data_set, seed)


def _plots(cfg, sc, reports, data_set, seed):
    pdir = _out(cfg) / "plots"
    tag = f"{data_set}_seed{seed}"
    by_method = {}
    for r in reports:
        by_method.setdefault(r.label(), []).append(r)
    for metric in METRICS:
        series = {name: ([r.n_rho for r in rs], [r.average(metric) for r in rs])
                  for name, rs in by_method.items()}
        io.write_text(pdir / f"{metric}_vs_nrho_{tag}.svg",
                      line_chart(series, f"averaged {metric.replace('_', ' ')}", "n_rho",
                                 metric, log_y=True))
    for n in cfg.n_rho:
        series = {}
        for r in reports:
            if r.n_rho == n:
                xs = r.times if r.times is not None else np.arange(r.n_snapshots)
                series[r.label()] = (xs, r.series["reconstruction"])
        io.write_text(pdir / f"reconstruction_over_time_n{n}_{tag}.svg",
                      line_chart(series, f"reconstruction error, n_rho = {n}", "t",
                                 "error", log_y=True))
        strips = {}
        for method in ("cpod", "icae"):
            path = _report_path(cfg, seed, data_set, method, n).with_suffix(".labels.csv")
            if method in cfg.methods and path.exists():
                strips[f"{method}{cfg.k}"] = [int(s) - 1 for s in path.read_text().split()]
        if strips:
            io.write_text(pdir / f"clusters_n{n}_{tag}.svg",
                          label_strip(strips, cfg.k, f"cluster labels over time, n_rho = {n}"))


def cmd_all(cfg):
    cmd_generate(cfg)
    cmd_train(cfg)
    cmd_cluster(cfg)
    cmd_eval(cfg)
    cmd_report(cfg)


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "cluster": cmd_cluster,
            "eval": cmd_eval, "report": cmd_report, "all": cmd_all}


def _limit_threads():
    n = os.environ.get("CAEROM_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(int(n))


def main(argv=None):
    parser = argparse.ArgumentParser(prog="caerom", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True)
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = _limit_threads()
    try:
        cfg = load_config(args.config, args.override)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (MissingArtifact, io.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    return 0


if __name__ == "__main__":
    sys.exit(main())
