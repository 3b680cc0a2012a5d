"""The six averaged evaluation metrics and the method ranking table."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .lpv import lpv_convection, residual_at
from .operators import assemble_convection, minv_norm, mnorm

METRICS = ("reconstruction", "rel_reconstruction", "convection", "rel_convection",
           "residual", "rel_residual")
UNDEFINED = "undefined"
_TINY = 1e-300


class MetricsError(ArithmeticError):
    pass


def fmt(x):
    """Shortest round-trip float text; ``None`` (a guarded ratio) becomes ``undefined``."""
    return UNDEFINED if x is None else repr(float(x))


def _ratio(num, den):
    return num / den if den >= _TINY else None


@dataclass
class MetricsReport:
    method: str
    n_rho: int
    k: int
    dataset: str
    seed: int
    series: dict = field(default_factory=dict)  # metric -> list of float | None
    times: np.ndarray = None
    labels: list = None  # cluster per snapshot, clustered methods only

    @property
    def n_snapshots(self):
        return len(self.series[METRICS[0]])

    def average(self, name):
        vals = self.series[name]
        if any(v is None for v in vals):
            return None
        return float(np.mean(vals))

    @property
    def averages(self):
        return {name: self.average(name) for name in METRICS}

    def label(self):
        return self.method if self.k <= 1 else f"{self.method}{self.k}"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["snapshot", "time"] + list(METRICS))
        for i in range(self.n_snapshots):
            t = "" if self.times is None else fmt(self.times[i])
            w.writerow([i, t] + [fmt(self.series[m][i]) for m in METRICS])
        w.writerow(["mean", ""] + [fmt(self.average(m)) for m in METRICS])
        return buf.getvalue()

    def manifest(self):
        return {"method": self.method, "n_rho": self.n_rho, "k": self.k,
                "dataset": self.dataset, "seed": self.seed, "n_snapshots": self.n_snapshots,
                "averages": {m: fmt(v) for m, v in self.averages.items()}}


def _check(i, name, value):
    if value is not None and not np.isfinite(value):
        raise MetricsError(f"non-finite {name} at snapshot {i}")
    return value


def evaluate(ops, ctx, snapshots, encode, decode, method="custom", n_rho=0, k=1,
             dataset="", seed=0, coeffs=None, assign=None):
    """Per-snapshot metrics of the reconstruction ``decode(encode(v))``.

    ``encode``/``decode`` act on column batches. With ``coeffs`` the
    convection of the reconstruction comes from the LPV form, with the
    cluster label taken from ``assign(rho)`` for clustered methods.
    """
    X = snapshots.states if hasattr(snapshots, "states") else np.asarray(snapshots, float)
    times = getattr(snapshots, "times", None)
    if X.ndim != 2 or X.shape[1] == 0:
        raise ValueError("need a nonempty n_v x T snapshot matrix")
    R = np.asarray(encode(X), dtype=float)
    if R.ndim == 1:
        R = R[None, :]
    Xt = np.asarray(decode(R), dtype=float)
    if Xt.shape != X.shape:
        raise ValueError(f"reconstruction shape {Xt.shape} != {X.shape}")
    series = {m: [] for m in METRICS}
    # contiguous rows: norms of v and v - 0 then reduce in the same order
    rows, rows_t = np.ascontiguousarray(X.T), np.ascontiguousarray(Xt.T)
    for i in range(X.shape[1]):
        v, vt = rows[i], rows_t[i]
        if not np.all(np.isfinite(vt)):
            raise MetricsError(f"non-finite reconstruction at snapshot {i}")
        if coeffs is not None:
            label = None if assign is None else assign(R[:, i])
            Nt_v = lpv_convection(coeffs, R[:, i], v, label)
            Nt_vt = lpv_convection(coeffs, R[:, i], vt, label)
        else:
            Nt = assemble_convection(ops, vt)
            Nt_v, Nt_vt = Nt @ v, Nt @ vt
        rec = mnorm(ops, v - vt)
        Nv_v = assemble_convection(ops, v) @ v
        conv = minv_norm(ops, Nv_v - Nt_v)
        res, rel_res = residual_at(ops, ctx, v, vt, Nt_vt)
        row = {
            "reconstruction": rec,
            "rel_reconstruction": _ratio(rec, mnorm(ops, v)),
            "convection": conv,
            "rel_convection": _ratio(conv, minv_norm(ops, Nv_v)),
            "residual": res,
            "rel_residual": rel_res,
        }
        for name in METRICS:
            series[name].append(_check(i, name, row[name]))
    return MetricsReport(method, n_rho, k, dataset, seed, series,
                         None if times is None else np.asarray(times))


RANKING_COLUMNS = ("dataset", "n_rho", "rank", "method") + tuple(f"avg_{m}" for m in METRICS)


def compare(reports):
    """Rows ordered by averaged reconstruction error within each ``n_rho``; ties by name."""
    reports = list(reports)
    if not reports:
        return []
    datasets = {r.dataset for r in reports}
    if len(datasets) > 1:
        raise ValueError(f"reports mix datasets: {sorted(datasets)}")

    def key(r):
        avg = r.average("reconstruction")
        return (r.n_rho, np.inf if avg is None else avg, r.label())

    rows, rank, prev = [], 0, None
    for r in sorted(reports, key=key):
        rank = 1 if r.n_rho != prev else rank + 1
        prev = r.n_rho
        avgs = r.averages
        rows.append({"dataset": r.dataset, "n_rho": r.n_rho, "rank": rank,
                     "method": r.label(), **{f"avg_{m}": avgs[m] for m in METRICS}})
    return rows


def ranking_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RANKING_COLUMNS)
    for row in rows:
        w.writerow([row[c] if not c.startswith("avg_") else fmt(row[c])
                    for c in RANKING_COLUMNS])
    return buf.getvalue()
