"""Reports on a trained model: per-output R^2, grouped source-energy
residuals, constraint audits and single-flame profiles. All reports are plain
row lists that :func:`write_csv` turns into CSV text."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import nn
from .dataset import FlameletDataset
from .errors import UsageError
from .model import ChemTabModel, correlation_matrix, dynamic_targets, model_encode, predict

GROUP_KEYS = {"flame_key": "flame_key", "flamekey": "flame_key", "x_pos": "x_pos", "xpos": "x_pos"}

# thresholds enforced by ``eval --strict``
STRICT_ORTH = 0.05
STRICT_CORR = 0.1


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "%.17g" % float(v)


def write_csv(header, rows, fh=None) -> str:
    """CSV text for ``rows`` (also written to ``fh`` when given)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def _truth_and_prediction(model: ChemTabModel, ds: FlameletDataset):
    se_hat, sdot_hat, dyn_hat = predict(model, ds.Y, ds.Zmix)
    names = model.output_names()
    truth = [ds.Se] + [ds.Sdot[:, i] for i in model.key_index()]
    pred = [se_hat] + [sdot_hat[:, j] for j in range(model.k)]
    if dyn_hat is not None:
        target = dynamic_targets(model.encoder, ds.Sdot)
        truth += [target[:, j] for j in range(model.p)]
        pred += [dyn_hat[:, j] for j in range(model.p)]
    return names, truth, pred


R2_HEADER = ("output", "r2")


def r2_report(model: ChemTabModel, ds: FlameletDataset) -> list[tuple[str, float]]:
    """R^2 per output in physical units; dynamic targets use the model's final W."""
    names, truth, pred = _truth_and_prediction(model, ds)
    return [(n, nn.r2(t, p)) for n, t, p in zip(names, truth, pred)]


RESIDUAL_HEADER = ("group", "count", "mean_abs_residual", "max_abs_residual")


def residual_report(model: ChemTabModel, ds: FlameletDataset, group_by: str = "flame_key"):
    """Mean and max absolute source-energy residual per flame or per position."""
    field = GROUP_KEYS.get(group_by.lower())
    if field is None:
        raise UsageError(f"unknown group key {group_by!r}; use flame_key or x_pos")
    resid = np.abs(predict(model, ds.Y, ds.Zmix)[0] - ds.Se)
    groups = getattr(ds, field)
    keys, inverse = np.unique(groups, return_inverse=True)
    rows = []
    for g, key in enumerate(keys):
        r = resid[inverse == g]
        rows.append((float(key), int(r.size), float(r.mean()), float(r.max())))
    return rows


@dataclass
class ConstraintAudit:
    W: np.ndarray
    WtW: np.ndarray
    corr: np.ndarray
    names: list  # labels of the correlation matrix rows

    @property
    def min_w(self) -> float:
        return float(self.W.min())

    @property
    def orth_offdiag_max(self) -> float:
        off = self.WtW - np.diag(np.diag(self.WtW))
        return float(np.abs(off).max())

    @property
    def orth_diag_dev_max(self) -> float:
        return float(np.abs(np.diag(self.WtW) - 1.0).max())

    @property
    def corr_offdiag_max(self) -> float:
        off = self.corr - np.diag(np.diag(self.corr))
        return float(np.abs(off).max())

    def summary(self) -> dict:
        return {
            "min_w": self.min_w,
            "orth_offdiag_max": self.orth_offdiag_max,
            "orth_diag_dev_max": self.orth_diag_dev_max,
            "corr_offdiag_max": self.corr_offdiag_max,
        }

    def violations(self, orth_tol: float = STRICT_ORTH, corr_tol: float = STRICT_CORR) -> list[str]:
        out = []
        if self.min_w < 0:
            out.append(f"negative encoder weight {self.min_w:.3g}")
        if self.orth_offdiag_max > orth_tol:
            out.append(f"max off-diagonal |W^T W| {self.orth_offdiag_max:.4g} > {orth_tol}")
        if self.orth_diag_dev_max > orth_tol:
            out.append(f"max |diag(W^T W) - 1| {self.orth_diag_dev_max:.4g} > {orth_tol}")
        if self.corr_offdiag_max > corr_tol:
            out.append(f"max off-diagonal |corr| {self.corr_offdiag_max:.4g} > {corr_tol}")
        return out

    def rows(self, species_names) -> list[tuple]:
        """Long-format rows (audit, row, col, value) for the three matrices and the summary."""
        out = [("summary", k, "", v) for k, v in self.summary().items()]
        cpv = [f"Cpv_{j + 1}" for j in range(self.W.shape[1])]
        for i, s in enumerate(species_names):
            for j, c in enumerate(cpv):
                out.append(("W", s, c, float(self.W[i, j])))
        for i, a in enumerate(cpv):
            for j, b in enumerate(cpv):
                out.append(("WtW", a, b, float(self.WtW[i, j])))
        for i, a in enumerate(self.names):
            for j, b in enumerate(self.names):
                out.append(("corr", a, b, float(self.corr[i, j])))
        return out


CONSTRAINT_HEADER = ("audit", "row", "col", "value")


def constraint_report(model: ChemTabModel, ds: FlameletDataset) -> ConstraintAudit:
    W = model.encoder.W.copy()
    X = np.column_stack([model_encode(model, ds.Y)[0], ds.Zmix])
    names = [f"Cpv_{j + 1}" for j in range(model.p)] + ["Zmix"]
    return ConstraintAudit(W, W.T @ W, correlation_matrix(X), names)


def flame_profile_report(model: ChemTabModel, ds: FlameletDataset, flame_key: float):
    """True and predicted outputs along one flame, sorted by position.

    Returns ``(header, rows)``; the header is ``x_pos`` followed by
    ``true_<output>`` and ``pred_<output>`` for every output.
    """
    keys = np.unique(ds.flame_key)
    hit = np.flatnonzero(np.isclose(keys, flame_key, rtol=1e-12, atol=0.0))
    if hit.size == 0:
        raise UsageError(f"flame key {flame_key!r} is not in the dataset")
    rows_idx = np.flatnonzero(ds.flame_key == keys[hit[0]])
    sub = ds.subset(rows_idx[np.argsort(ds.x_pos[rows_idx], kind="stable")])
    names, truth, pred = _truth_and_prediction(model, sub)
    header = ["x_pos"]
    for n in names:
        header += [f"true_{n}", f"pred_{n}"]
    rows = []
    for r in range(sub.n):
        row = [float(sub.x_pos[r])]
        for t, p in zip(truth, pred):
            row += [float(t[r]), float(p[r])]
        rows.append(row)
    return header, rows
