"""Flamelet data model, CSV ingestion/serialization and output scaling.

A dataset is a stack of flamelet solutions. Every row is one grid point of
one flame: species mass fractions ``Y``, species source terms ``Sdot``, the
source energy ``Se``, the mixture fraction ``Zmix`` and two row tags
(``flame_key`` for the strain level, ``x_pos`` for the position).
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParseError, SchemaError, UsageError, ValidationError

EPSILON_SCALE = 1e-12
ROW_SUM_TOL = 1e-6
NUMBER_FORMAT = "%.17g"


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ValidationError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FlameletDataset:
    species_names: tuple[str, ...]
    Y: np.ndarray
    Sdot: np.ndarray
    Se: np.ndarray
    Zmix: np.ndarray
    flame_key: np.ndarray
    x_pos: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "species_names", tuple(str(s) for s in self.species_names))
        for name, ndim in (("Y", 2), ("Sdot", 2), ("Se", 1), ("Zmix", 1), ("flame_key", 1), ("x_pos", 1)):
            object.__setattr__(self, name, _frozen(getattr(self, name), ndim))
        self.validate()

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def s(self) -> int:
        return len(self.species_names)

    def validate(self) -> None:
        s = self.s
        if s < 2:
            raise ValidationError(f"need at least 2 species, got {s}")
        if len(set(self.species_names)) != s:
            raise ValidationError("duplicate species names")
        n = self.Y.shape[0]
        if n < 1:
            raise ValidationError("dataset has no rows")
        for name in ("Y", "Sdot"):
            arr = getattr(self, name)
            if arr.shape != (n, s):
                raise ValidationError(f"{name} has shape {arr.shape}, expected {(n, s)}")
        for name in ("Se", "Zmix", "flame_key", "x_pos"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"{name} has length {getattr(self, name).shape[0]}, expected {n}")

        bad = []
        finite = np.isfinite(self.Y).all(1) & np.isfinite(self.Sdot).all(1)
        finite &= np.isfinite(self.Se) & np.isfinite(self.Zmix)
        finite &= np.isfinite(self.flame_key) & np.isfinite(self.x_pos)
        in_range = ((self.Y >= 0.0) & (self.Y <= 1.0)).all(1)
        sums_ok = np.abs(self.Y.sum(1) - 1.0) <= ROW_SUM_TOL
        z_ok = (self.Zmix >= 0.0) & (self.Zmix <= 1.0)
        ok = finite & in_range & sums_ok & z_ok
        if not ok.all():
            for i in np.flatnonzero(~ok)[:10]:
                reasons = []
                if not finite[i]:
                    reasons.append("non-finite value")
                if not in_range[i]:
                    reasons.append("Y outside [0, 1]")
                if not sums_ok[i]:
                    reasons.append(f"Y sums to {self.Y[i].sum():.17g}")
                if not z_ok[i]:
                    reasons.append(f"Zmix={self.Zmix[i]:.17g} outside [0, 1]")
                bad.append(f"row {i}: " + ", ".join(reasons))
            raise ValidationError(
                f"{int((~ok).sum())} invalid rows; first offenders:\n  " + "\n  ".join(bad)
            )

    def subset(self, rows) -> "FlameletDataset":
        rows = np.asarray(rows)
        return FlameletDataset(
            self.species_names,
            self.Y[rows],
            self.Sdot[rows],
            self.Se[rows],
            self.Zmix[rows],
            self.flame_key[rows],
            self.x_pos[rows],
        )

    def species_index(self, names: Sequence[str]) -> list[int]:
        lookup = {name: i for i, name in enumerate(self.species_names)}
        missing = [name for name in names if name not in lookup]
        if missing:
            raise UsageError(f"unknown species {missing}; dataset has {list(self.species_names)}")
        return [lookup[name] for name in names]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(",".join(self.species_names).encode())
        for arr in (self.Y, self.Sdot, self.Se, self.Zmix, self.flame_key, self.x_pos):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def concat(parts: Sequence[FlameletDataset]) -> FlameletDataset:
    if not parts:
        raise UsageError("nothing to concatenate")
    names = parts[0].species_names
    if any(p.species_names != names for p in parts):
        raise ValidationError("cannot concatenate datasets with different species")
    return FlameletDataset(
        names,
        np.vstack([p.Y for p in parts]),
        np.vstack([p.Sdot for p in parts]),
        np.concatenate([p.Se for p in parts]),
        np.concatenate([p.Zmix for p in parts]),
        np.concatenate([p.flame_key for p in parts]),
        np.concatenate([p.x_pos for p in parts]),
    )


# ---------------------------------------------------------------------------
# CSV layout


@dataclass(frozen=True)
class Schema:
    """Column names used by :func:`load_dataset` and :func:`save_dataset`.

    ``species`` may be left empty, in which case the species list is read off
    the header from every column that starts with ``y_prefix``.
    """

    flame_key: str = "flame_key"
    x_pos: str = "x_pos"
    zmix: str = "Zmix"
    souener: str = "souener"
    y_prefix: str = "Y_"
    source_prefix: str = "souspec_"
    species: tuple[str, ...] = field(default_factory=tuple)

    @classmethod
    def from_mapping(cls, mapping: dict | None) -> "Schema":
        if not mapping:
            return cls()
        mapping = dict(mapping)
        if "species" in mapping:
            mapping["species"] = tuple(mapping["species"])
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown schema keys {sorted(unknown)}")
        return cls(**mapping)

    def header(self, species: Sequence[str]) -> list[str]:
        return (
            [self.flame_key, self.x_pos, self.zmix]
            + [self.y_prefix + s for s in species]
            + [self.source_prefix + s for s in species]
            + [self.souener]
        )


def _cell(value: str, row: int, column: str) -> float:
    try:
        out = float(value)
    except ValueError:
        raise ParseError(f"non-numeric value {value!r} at data row {row}, column {column!r}") from None
    if not math.isfinite(out):
        raise ParseError(f"non-finite value {value!r} at data row {row}, column {column!r}")
    return out


def load_dataset(path, schema: Schema | dict | None = None) -> FlameletDataset:
    """Read a flamelet CSV file into a validated :class:`FlameletDataset`.

    Rows keep their file order. Raises :class:`SchemaError` for a missing
    column, :class:`ParseError` for a bad cell and :class:`ValidationError`
    when the data breaks a dataset invariant.
    """
    if not isinstance(schema, Schema):
        schema = Schema.from_mapping(schema)
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        rows = [r for r in reader if r]

    species = schema.species or tuple(
        h[len(schema.y_prefix):] for h in header if h.startswith(schema.y_prefix)
    )
    if not species:
        raise SchemaError(f"no species columns with prefix {schema.y_prefix!r} in {path}")
    position = {name: i for i, name in enumerate(header)}
    wanted = schema.header(species)
    for name in wanted:
        if name not in position:
            raise SchemaError(f"missing column {name!r} in {path}")
    cols = [position[name] for name in wanted]

    data = np.empty((len(rows), len(cols)))
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError(f"data row {r} has {len(row)} cells, header has {len(header)}")
        for c, j in enumerate(cols):
            data[r, c] = _cell(row[j], r, wanted[c])

    s = len(species)
    return FlameletDataset(
        species_names=species,
        Y=data[:, 3 : 3 + s],
        Sdot=data[:, 3 + s : 3 + 2 * s],
        Se=data[:, 3 + 2 * s],
        Zmix=data[:, 2],
        flame_key=data[:, 0],
        x_pos=data[:, 1],
    )


def save_dataset(ds: FlameletDataset, path, schema: Schema | None = None) -> None:
    schema = schema or Schema()
    table = np.column_stack([ds.flame_key, ds.x_pos, ds.Zmix, ds.Y, ds.Sdot, ds.Se])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(schema.header(ds.species_names))
        for row in table:
            writer.writerow([NUMBER_FORMAT % v for v in row])


# ---------------------------------------------------------------------------
# Output scaling


@dataclass(frozen=True, eq=False)
class OutputScaler:
    kind: str
    center: np.ndarray
    scale: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.center) / self.scale

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.scale + self.center

    @classmethod
    def identity(cls, width: int) -> "OutputScaler":
        return cls("identity", np.zeros(width), np.ones(width))


SCALER_KINDS = ("minmax", "robust")


def fit_scaler(kind: str, targets) -> OutputScaler:
    """Fit a per-column MinMax or Robust scaler.

    MinMax centers on the column minimum and divides by the range; Robust
    centers on the median and divides by the interquartile range (linear
    interpolation between order statistics). Scales below ``EPSILON_SCALE``
    are clamped to it.
    """
    kind = kind.lower()
    if kind not in SCALER_KINDS:
        raise UsageError(f"unknown scaler kind {kind!r}; choose from {SCALER_KINDS}")
    t = np.asarray(targets, dtype=np.float64)
    if t.ndim == 1:
        t = t[:, None]
    if t.size == 0:
        raise UsageError("cannot fit a scaler on an empty matrix")
    if kind == "minmax":
        center = t.min(0)
        scale = t.max(0) - center
    else:
        q25, center, q75 = np.percentile(t, [25.0, 50.0, 75.0], axis=0)
        scale = q75 - q25
    scale = np.maximum(scale, EPSILON_SCALE)
    return OutputScaler(kind, center, scale)


# ---------------------------------------------------------------------------
# Splitting


def split_indices(ds: FlameletDataset, fraction: float, seed: int, by_flame: bool = False):
    """Index sets for a seeded split; the first set holds ``floor(fraction * n)`` rows."""
    if not 0.0 < fraction < 1.0:
        raise UsageError(f"split fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    if by_flame:
        keys = np.unique(ds.flame_key)
        chosen = rng.permutation(keys)[: int(math.floor(fraction * keys.size))]
        mask = np.isin(ds.flame_key, chosen)
        return np.flatnonzero(mask), np.flatnonzero(~mask)
    perm = rng.permutation(ds.n)
    cut = int(math.floor(fraction * ds.n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def split_train_val(ds: FlameletDataset, fraction: float, seed: int, by_flame: bool = False):
    first, second = split_indices(ds, fraction, seed, by_flame)
    if first.size == 0 or second.size == 0:
        raise UsageError(f"split of {ds.n} rows at fraction {fraction} leaves an empty side")
    return ds.subset(first), ds.subset(second)
