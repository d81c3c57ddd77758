"""Reference methods: PCA progress variables, unconstrained and non-linear
encoders, a fixed user projection, and tabulation with multilinear lookup."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import nn
from .dataset import FlameletDataset
from .errors import ShapeError, UsageError
from .model import (
    ChemTabModel,
    EncoderWeights,
    TrainConfig,
    _streams,
    build_model,
    predict_from_cpv,
    resolve_key_species,
    train,
)

BASELINE_KINDS = ("pca", "unconstrained", "nonlinear", "fixed")
NONLINEAR_ENCODER_WIDTH = 32


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True, eq=False)
class PcaBasis:
    components: np.ndarray  # (s, p), orthonormal columns
    mean: np.ndarray  # (s,)
    explained_variance: np.ndarray  # (p,), descending
    total_variance: float

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance

    def project(self, Y: np.ndarray) -> np.ndarray:
        return (np.asarray(Y) - self.mean) @ self.components

    def reconstruct(self, scores: np.ndarray) -> np.ndarray:
        return scores @ self.components.T + self.mean

    def reconstruction_error(self, Y: np.ndarray) -> float:
        """Mean squared reconstruction error per row."""
        Y = np.asarray(Y, dtype=np.float64)
        R = Y - self.reconstruct(self.project(Y))
        return float((R * R).sum(1).mean())


def fit_pca(Y, p: int) -> PcaBasis:
    """Mean-centered PCA via SVD.

    Each component is flipped so that its largest-magnitude entry is positive.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise ShapeError("PCA needs a 2-d matrix")
    n, s = Y.shape
    if p > s or p < 1:
        raise UsageError(f"need 1 <= p <= s, got p={p}, s={s}")
    if n < 2:
        raise UsageError("PCA needs at least two rows")
    mean = Y.mean(0)
    _, sv, Vt = np.linalg.svd(Y - mean, full_matrices=False)
    comps = Vt[:p].T.copy()
    for j in range(p):
        i = int(np.argmax(np.abs(comps[:, j])))
        if comps[i, j] < 0:
            comps[:, j] = -comps[:, j]
    var = sv**2 / (n - 1)
    return PcaBasis(comps, mean, var[:p].copy(), float(var.sum()))


# ---------------------------------------------------------------------------
# baseline training


def baseline_config(kind: str, cfg: TrainConfig) -> TrainConfig:
    """Training settings for a baseline: physics regressor only, no constraints."""
    if kind not in BASELINE_KINDS:
        raise UsageError(f"unknown baseline {kind!r}; valid kinds: {', '.join(BASELINE_KINDS)}")
    return cfg.replace(
        lambda_orth=0.0,
        lambda_cov=0.0,
        alpha_dyn=0.0,
        project_nonneg=False,
        train_encoder=kind in ("unconstrained", "nonlinear"),
    )


def build_baseline(kind: str, train_ds: FlameletDataset, cfg: TrainConfig, fixed_W=None) -> ChemTabModel:
    key = resolve_key_species(cfg, train_ds)
    bcfg = baseline_config(kind, cfg).replace(key_species=key)
    model = build_model(bcfg, train_ds.s, train_ds.species_names, with_dynamic=False)
    if kind == "pca":
        model.encoder = EncoderWeights(fit_pca(train_ds.Y, cfg.p).components, train_ds.species_names)
    elif kind == "fixed":
        if fixed_W is None:
            raise UsageError("the fixed baseline needs a projection matrix")
        W = np.asarray(fixed_W, dtype=np.float64)
        if W.shape != (train_ds.s, cfg.p):
            raise ShapeError(f"fixed projection must be {(train_ds.s, cfg.p)}, got {W.shape}")
        model.encoder = EncoderWeights(W.copy(), train_ds.species_names)
    elif kind == "nonlinear":
        rng = _streams(cfg.seed)["encoder_net"]
        h = NONLINEAR_ENCODER_WIDTH
        model.encoder_net = nn.MlpNetwork.build([train_ds.s, h, h, cfg.p], cfg.activation, 0.0, rng)
    model.metadata["kind"] = kind
    model.check_shapes()
    return model


def train_baseline(kind: str, train_ds: FlameletDataset, val_ds: FlameletDataset, cfg: TrainConfig,
                   fixed_W=None, progress=None):
    """Train one of the reference methods with the shared training loop.

    ``pca`` freezes a PCA projection, ``fixed`` freezes ``fixed_W``,
    ``unconstrained`` learns a free linear encoder and ``nonlinear`` a
    two-hidden-layer MLP encoder. All train the physics regressor only.
    """
    model = build_baseline(kind, train_ds, cfg, fixed_W)
    return train(model, train_ds, val_ds, model.config, progress)


# ---------------------------------------------------------------------------
# tabulation


@dataclass(frozen=True, eq=False)
class LookupTable:
    axes: tuple  # one strictly increasing grid per input dimension
    values: np.ndarray  # shape (*grid sizes, n_outputs)
    output_names: tuple = ()

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=np.float64) for a in self.axes)
        object.__setattr__(self, "axes", axes)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == len(axes):
            values = values[..., None]
        object.__setattr__(self, "values", values)
        for a in axes:
            if a.ndim != 1 or a.size < 2:
                raise ShapeError("every axis needs at least two grid points")
            if not (np.diff(a) > 0).all():
                raise ShapeError("grid axes must be strictly increasing")
        if values.shape[:-1] != tuple(a.size for a in axes):
            raise ShapeError(f"values {values.shape} do not match grid {[a.size for a in axes]}")

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def n_outputs(self) -> int:
        return self.values.shape[-1]

    @property
    def nbytes(self) -> int:
        return int(self.values.nbytes)


def table_nbytes(grid_sizes, n_outputs: int, itemsize: int = 8) -> int:
    """Storage for a dense table: prod(grid sizes) * outputs * itemsize."""
    return int(np.prod(grid_sizes, dtype=np.int64)) * n_outputs * itemsize


def _grid_points(axes) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def build_table(source, grids, inputs=None, outputs=None, output_names=()) -> LookupTable:
    """Tabulate a model or a dataset over the cross product of ``grids``.

    With a :class:`ChemTabModel`, the axes are (Cpv_1..Cpv_p, Zmix) and each
    node holds the model's physical-unit outputs. With a dataset, pass the
    input coordinates per row (``inputs``) and the values to tabulate
    (``outputs``); each node holds the mean of the rows nearest to it, or the
    nearest row's value when no row maps to it.
    """
    axes = [np.asarray(g, dtype=np.float64) for g in grids]
    if not axes or any(a.size == 0 for a in axes):
        raise UsageError("grid axes must be non-empty")
    pts = _grid_points(axes)
    shape = tuple(a.size for a in axes)
    if isinstance(source, ChemTabModel):
        if len(axes) != source.p + 1:
            raise ShapeError(f"model tables need p+1 = {source.p + 1} axes")
        se, sdot, dyn = predict_from_cpv(source, pts[:, :-1], pts[:, -1])
        cols = [se[:, None], sdot] + ([dyn] if dyn is not None else [])
        vals = np.hstack(cols)
        names = tuple(source.output_names())
    else:
        if inputs is None or outputs is None:
            raise UsageError("dataset tables need per-row inputs and outputs")
        X = np.asarray(inputs, dtype=np.float64)
        V = np.asarray(outputs, dtype=np.float64)
        if V.ndim == 1:
            V = V[:, None]
        if X.shape != (V.shape[0], len(axes)):
            raise ShapeError("inputs must have one column per axis and one row per output row")
        span = np.array([a[-1] - a[0] for a in axes])
        lo = np.array([a[0] for a in axes])
        tree_nodes = cKDTree((pts - lo) / span)
        _, nearest_node = tree_nodes.query((X - lo) / span)
        sums = np.zeros((pts.shape[0], V.shape[1]))
        counts = np.zeros(pts.shape[0])
        np.add.at(sums, nearest_node, V)
        np.add.at(counts, nearest_node, 1.0)
        vals = np.empty_like(sums)
        hit = counts > 0
        vals[hit] = sums[hit] / counts[hit, None]
        if (~hit).any():
            _, nearest_row = cKDTree((X - lo) / span).query((pts[~hit] - lo) / span)
            vals[~hit] = V[nearest_row]
        names = tuple(output_names)
    return LookupTable(tuple(axes), vals.reshape(*shape, vals.shape[1]), names)


def interpolate(table: LookupTable, q, return_flag: bool = False):
    """Multilinear interpolation at one query point.

    Queries outside the grid box are clamped to it; pass ``return_flag=True``
    to also get whether clamping happened.
    """
    q = np.asarray(q, dtype=np.float64).ravel()
    if q.size != table.ndim:
        raise ShapeError(f"query has {q.size} coordinates, table has {table.ndim} axes")
    if np.isnan(q).any():
        raise UsageError("NaN in interpolation query")
    clamped = False
    lower = []
    frac = []
    for x, axis in zip(q, table.axes):
        if x < axis[0] or x > axis[-1]:
            clamped = True
            x = min(max(x, axis[0]), axis[-1])
        i = int(np.searchsorted(axis, x, side="right")) - 1
        i = min(max(i, 0), axis.size - 2)
        lower.append(i)
        frac.append((x - axis[i]) / (axis[i + 1] - axis[i]))
    out = np.zeros(table.n_outputs)
    for corner in itertools.product((0, 1), repeat=table.ndim):
        weight = 1.0
        for c, t in zip(corner, frac):
            weight *= t if c else 1.0 - t
        if weight != 0.0:
            out += weight * table.values[tuple(i + c for i, c in zip(lower, corner))]
    return (out, clamped) if return_flag else out


def interpolate_many(table: LookupTable, Q) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    return np.vstack([interpolate(table, q) for q in Q])
