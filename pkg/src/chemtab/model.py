"""ChemTab: a constrained linear encoder trained jointly with two regressors.

The encoder maps mass fractions to progress variables, ``Cpv = Y @ W``.
The physics regressor maps ``Cpv ⊕ Zmix`` to the source energy and the key
species source terms; the dynamic source-term regressor maps the same input
to ``Sdot @ W``, the progress variables' own source terms. Training
minimizes the negative mean R^2 of both regressors plus quadratic penalties
for column orthonormality of ``W`` and for correlation among the regressor
inputs, and projects ``W`` onto the non-negative orthant after every step.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .dataset import FlameletDataset, OutputScaler, fit_scaler
from .errors import ConfigError, LossError, ShapeError, TrainingError, UsageError

log = logging.getLogger(__name__)

N_HIDDEN = 9
CORR_EPS = 1e-150


@dataclass(frozen=True)
class TrainConfig:
    p: int = 3
    middle_width: int = 64
    key_species: tuple[str, ...] | None = None
    epochs: int = 300
    batch_size: int = 407
    lr: float = 0.001
    dropout: float = 0.01522
    activation: str = "relu"
    scaler: str = "robust"
    lambda_orth: float = 1.0
    lambda_cov: float = 0.1
    alpha_phy: float = 1.0
    alpha_dyn: float = 1.0
    patience: int = 50
    seed: int = 0
    split_fraction: float = 0.5
    split_by_flame: bool = False
    project_nonneg: bool = True
    train_encoder: bool = True

    def __post_init__(self):
        if self.key_species is not None:
            object.__setattr__(self, "key_species", tuple(self.key_species))
        if self.p < 1 or self.epochs < 1 or self.batch_size < 2 or self.patience < 1:
            raise ConfigError("p, epochs, patience must be >= 1 and batch_size >= 2")
        if self.lr <= 0 or not 0.0 <= self.dropout < 1.0:
            raise ConfigError("lr must be positive and dropout in [0, 1)")
        if min(self.alpha_phy, self.alpha_dyn, self.lambda_orth, self.lambda_cov) < 0:
            raise ConfigError("loss weights and penalties must be non-negative")
        if self.activation not in nn.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["key_species"] is not None:
            d["key_species"] = list(d["key_species"])
        return d

    def hash(self) -> str:
        text = json.dumps(self.as_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def load_train_config(path, **overrides) -> TrainConfig:
    """Read the ``[train]`` section of a key-value config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read(path, encoding="utf-8")
        sec = cp["train"]
    except (configparser.Error, KeyError) as exc:
        raise ConfigError(f"cannot read [train] from {path}: {exc}") from None
    kw = {}
    defaults = TrainConfig()
    for key, raw in sec.items():
        if key not in _TRAIN_KEYS:
            raise ConfigError(f"{path}: unknown train key {key!r}")
        if key == "key_species":
            kw[key] = tuple(raw.replace(",", " ").split()) or None
            continue
        default = getattr(defaults, key)
        try:
            if isinstance(default, bool):
                kw[key] = sec.getboolean(key)
            elif isinstance(default, int):
                kw[key] = int(raw)
            elif isinstance(default, float):
                kw[key] = float(raw)
            else:
                kw[key] = raw.strip()
        except ValueError as exc:
            raise ConfigError(f"{path}: bad value for {key}: {exc}") from None
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**kw)


def hidden_widths(middle_width: int) -> list[int]:
    """Symmetric pyramid of nine hidden layers halving away from the middle.

    Widths are floored, which reproduces 792 -> [49, 99, 198, 396, 792, ...].
    """
    if middle_width < 16:
        raise ConfigError(f"middle_width must be at least 16, got {middle_width}")
    return [middle_width // 2 ** abs(j - 4) for j in range(N_HIDDEN)]


# ---------------------------------------------------------------------------
# model containers


@dataclass(eq=False)
class EncoderWeights:
    W: np.ndarray  # (s, p)
    species_names: tuple[str, ...]

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.species_names = tuple(self.species_names)
        if self.W.ndim != 2 or self.W.shape[0] != len(self.species_names):
            raise ShapeError(f"encoder matrix {self.W.shape} does not match {len(self.species_names)} species")

    @property
    def p(self) -> int:
        return self.W.shape[1]

    @property
    def s(self) -> int:
        return self.W.shape[0]


@dataclass(eq=False)
class ChemTabModel:
    encoder: EncoderWeights
    physics_reg: nn.MlpNetwork
    dyn_reg: nn.MlpNetwork | None
    scalers: dict
    key_species: tuple[str, ...]
    config: TrainConfig = field(default_factory=TrainConfig)
    metadata: dict = field(default_factory=dict)
    # non-linear encoder used by one baseline; when set it replaces Y @ W
    encoder_net: nn.MlpNetwork | None = None

    def __post_init__(self):
        self.key_species = tuple(self.key_species)
        self.check_shapes()

    @property
    def species_names(self) -> tuple[str, ...]:
        return self.encoder.species_names

    @property
    def p(self) -> int:
        return self.encoder_net.out_width if self.encoder_net is not None else self.encoder.p

    @property
    def k(self) -> int:
        return len(self.key_species)

    def output_names(self) -> list[str]:
        names = ["Se"] + [f"Sdot_{s}" for s in self.key_species]
        if self.dyn_reg is not None:
            names += [f"Stilde_{i + 1}" for i in range(self.p)]
        return names

    def check_shapes(self) -> None:
        p, k = self.p, self.k
        if self.physics_reg.in_width != p + 1:
            raise ShapeError(f"physics regressor input {self.physics_reg.in_width} != p+1 = {p + 1}")
        if self.physics_reg.out_width != 1 + k:
            raise ShapeError(f"physics regressor output {self.physics_reg.out_width} != 1+k = {1 + k}")
        if self.dyn_reg is not None:
            if self.dyn_reg.in_width != p + 1 or self.dyn_reg.out_width != p:
                raise ShapeError("dynamic regressor must map p+1 inputs to p outputs")
        if self.encoder_net is not None and self.encoder_net.in_width != self.encoder.s:
            raise ShapeError("non-linear encoder input width must equal the species count")
        missing = set(self.key_species) - set(self.species_names)
        if missing:
            raise ShapeError(f"key species {sorted(missing)} are not model species")
        phys = self.scalers.get("physics")
        if phys is None or phys.center.shape != (1 + k,):
            raise ShapeError("physics scaler must have 1+k columns")
        dyn = self.scalers.get("dynamic")
        if self.dyn_reg is not None and (dyn is None or dyn.center.shape != (p,)):
            raise ShapeError("dynamic scaler must have p columns")

    def key_index(self) -> list[int]:
        lookup = {n: i for i, n in enumerate(self.species_names)}
        return [lookup[n] for n in self.key_species]

    def networks(self) -> list[tuple[str, nn.MlpNetwork]]:
        out = [("physics", self.physics_reg)]
        if self.dyn_reg is not None:
            out.append(("dynamic", self.dyn_reg))
        if self.encoder_net is not None:
            out.append(("encoder_net", self.encoder_net))
        return out

    def copy(self) -> "ChemTabModel":
        return ChemTabModel(
            EncoderWeights(self.encoder.W.copy(), self.species_names),
            self.physics_reg.copy(),
            None if self.dyn_reg is None else self.dyn_reg.copy(),
            {k: OutputScaler(v.kind, v.center.copy(), v.scale.copy()) for k, v in self.scalers.items()},
            self.key_species,
            self.config,
            dict(self.metadata),
            None if self.encoder_net is None else self.encoder_net.copy(),
        )


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("encoder", "physics", "dynamic", "shuffle", "physics_dropout", "dynamic_dropout", "encoder_net")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def build_model(cfg: TrainConfig, s: int, species_names: Sequence[str] | None = None,
                with_dynamic: bool = True) -> ChemTabModel:
    """Freshly initialized model for ``s`` species and ``cfg.key_species``.

    Both regressors get the nine-layer pyramid around ``cfg.middle_width``;
    the encoder starts Glorot-uniform clamped at zero. Scalers start as the
    identity until training fits them.
    """
    if cfg.p >= s:
        raise ConfigError(f"need p < s, got p={cfg.p}, s={s}")
    widths = hidden_widths(cfg.middle_width)
    names = tuple(species_names) if species_names is not None else tuple(f"Y{i}" for i in range(s))
    if len(names) != s:
        raise ConfigError("species_names length must equal s")
    key = tuple(cfg.key_species or ())
    rng = _streams(cfg.seed)
    W = np.maximum(nn.glorot_uniform_init(s, cfg.p, rng["encoder"]).T, 0.0)
    physics = nn.MlpNetwork.build([cfg.p + 1, *widths, 1 + len(key)], cfg.activation, cfg.dropout, rng["physics"])
    dyn = None
    scalers = {"physics": OutputScaler.identity(1 + len(key))}
    if with_dynamic:
        dyn = nn.MlpNetwork.build([cfg.p + 1, *widths, cfg.p], cfg.activation, cfg.dropout, rng["dynamic"])
        scalers["dynamic"] = OutputScaler.identity(cfg.p)
    return ChemTabModel(EncoderWeights(W, names), physics, dyn, scalers, key, cfg,
                        {"seed": cfg.seed, "config_hash": cfg.hash()})


# ---------------------------------------------------------------------------
# encoder maps


def _matrix(W) -> np.ndarray:
    return W.W if isinstance(W, EncoderWeights) else np.asarray(W, dtype=np.float64)


def encode(W, Y) -> np.ndarray:
    """Progress variables ``Y @ W`` (no bias, no activation)."""
    W = _matrix(W)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != W.shape[0]:
        raise ShapeError(f"Y of shape {Y.shape} does not match encoder with {W.shape[0]} species")
    return Y @ W


def dynamic_targets(W, Sdot) -> np.ndarray:
    """Progress-variable source terms ``Sdot @ W``, treated as constants by training."""
    W = _matrix(W)
    Sdot = np.asarray(Sdot, dtype=np.float64)
    if Sdot.ndim != 2 or Sdot.shape[1] != W.shape[0]:
        raise ShapeError(f"Sdot of shape {Sdot.shape} does not match encoder with {W.shape[0]} species")
    return Sdot @ W


def model_encode(model: ChemTabModel, Y, train=False, rng=None):
    if model.encoder_net is not None:
        return nn.forward(model.encoder_net, Y, train, rng)
    return encode(model.encoder, Y), None


# ---------------------------------------------------------------------------
# penalties


def orthogonality_penalty(W: np.ndarray):
    """||W^T W - I||_F^2 and its gradient."""
    G = W.T @ W - np.eye(W.shape[1])
    return float((G * G).sum()), 4.0 * W @ G


def correlation_matrix(X: np.ndarray) -> np.ndarray:
    Xc = X - X.mean(0)
    norms = np.sqrt((Xc * Xc).sum(0))
    U = Xc / np.maximum(norms, CORR_EPS)
    return U.T @ U


def correlation_penalty(X: np.ndarray):
    """Sum of squared off-diagonal Pearson correlations of the columns of ``X``, and d/dX."""
    Xc = X - X.mean(0)
    norms = np.maximum(np.sqrt((Xc * Xc).sum(0)), CORR_EPS)
    U = Xc / norms
    C = U.T @ U
    off = C - np.diag(np.diag(C))
    dU = 4.0 * U @ off
    dXc = (dU - U * (U * dU).sum(0)) / norms
    return float((off * off).sum()), dXc - dXc.mean(0)


# ---------------------------------------------------------------------------
# loss


@dataclass(eq=False)
class Batch:
    Y: np.ndarray
    Zmix: np.ndarray
    Se: np.ndarray
    Sdot: np.ndarray

    @classmethod
    def from_dataset(cls, ds: FlameletDataset, rows=None) -> "Batch":
        if rows is None:
            return cls(ds.Y, ds.Zmix, ds.Se, ds.Sdot)
        return cls(ds.Y[rows], ds.Zmix[rows], ds.Se[rows], ds.Sdot[rows])

    @property
    def n(self) -> int:
        return self.Y.shape[0]


def physics_targets(model: ChemTabModel, batch: Batch) -> np.ndarray:
    return np.column_stack([batch.Se, batch.Sdot[:, model.key_index()]])


def _loss_and_grads(model: ChemTabModel, batch: Batch, train=False, rngs=None, grad=False):
    """Joint loss, its terms and (optionally) gradients for every parameter block."""
    cfg = model.config
    if batch.n < 2:
        raise UsageError("joint loss needs a batch of at least 2 rows")
    rngs = rngs or {}
    W = model.encoder.W
    linear = model.encoder_net is None

    # targets: dynamic ones from the current W, no gradient path
    phys_t = model.scalers["physics"].transform(physics_targets(model, batch))
    cpv, enc_tape = model_encode(model, batch.Y, train, rngs.get("encoder_net"))
    X = np.column_stack([cpv, batch.Zmix])

    phys_out, phys_tape = nn.forward(model.physics_reg, X, train, rngs.get("physics"))
    r2_phys, d_phys = nn.r2_columns_grad(phys_t, phys_out)
    loss_phy = -cfg.alpha_phy * float(r2_phys.mean())
    terms = {"loss_phy": loss_phy, "r2_phys": r2_phys}

    loss_dyn = 0.0
    if model.dyn_reg is not None:
        dyn_t = model.scalers["dynamic"].transform(dynamic_targets(W, batch.Sdot))
        dyn_out, dyn_tape = nn.forward(model.dyn_reg, X, train, rngs.get("dynamic"))
        r2_dyn, d_dyn = nn.r2_columns_grad(dyn_t, dyn_out)
        loss_dyn = -cfg.alpha_dyn * float(r2_dyn.mean())
        terms["r2_dyn"] = r2_dyn
    terms["loss_dyn"] = loss_dyn

    pen_orth, g_orth = (0.0, None)
    if linear and cfg.lambda_orth > 0:
        pen_orth, g_orth = orthogonality_penalty(W)
        pen_orth *= cfg.lambda_orth
    pen_cov, g_cov = (0.0, None)
    if cfg.lambda_cov > 0:
        pen_cov, g_cov = correlation_penalty(X)
        pen_cov *= cfg.lambda_cov
    terms["pen_orth"] = pen_orth
    terms["pen_cov"] = pen_cov

    for name in ("loss_phy", "loss_dyn", "pen_orth", "pen_cov"):
        if not math.isfinite(terms[name]):
            raise LossError(f"non-finite loss term {name}")
    loss = loss_phy + loss_dyn + pen_orth + pen_cov
    terms["loss"] = loss
    if not grad:
        return loss, terms, None

    grads = {}
    k1 = r2_phys.size
    g_phys, dX = nn.backward(phys_tape, (-cfg.alpha_phy / k1) * d_phys)
    grads["physics"] = g_phys
    if model.dyn_reg is not None:
        g_dyn, dX_dyn = nn.backward(dyn_tape, (-cfg.alpha_dyn / model.p) * d_dyn)
        grads["dynamic"] = g_dyn
        dX = dX + dX_dyn
    if g_cov is not None:
        dX = dX + cfg.lambda_cov * g_cov
    d_cpv = dX[:, :-1]
    if linear:
        dW = batch.Y.T @ d_cpv
        if g_orth is not None:
            dW = dW + cfg.lambda_orth * g_orth
        grads["encoder"] = dW
    else:
        grads["encoder_net"], _ = nn.backward(enc_tape, d_cpv)
    return loss, terms, grads


def joint_loss(model: ChemTabModel, batch: Batch):
    """Eval-mode joint loss on a batch; returns ``(loss, report)``.

    loss = -[alpha_phy * mean R^2(Se, key Sdot) + alpha_dyn * mean R^2(Stilde)]
           + lambda_orth * ||W^T W - I||_F^2 + lambda_cov * sum_{i != j} corr_ij^2
    with R^2 on scaled targets over the batch and corr over ``Cpv ⊕ Zmix``.
    """
    loss, terms, _ = _loss_and_grads(model, batch)
    return loss, terms


def loss_gradients(model: ChemTabModel, batch: Batch):
    """Eval-mode loss together with gradients keyed by parameter block."""
    loss, terms, grads = _loss_and_grads(model, batch, grad=True)
    return loss, terms, grads


# ---------------------------------------------------------------------------
# training


@dataclass
class History:
    records: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    seconds: float = 0.0

    COLUMNS = (
        "epoch", "train_loss", "train_loss_phy", "train_loss_dyn", "train_pen_orth", "train_pen_cov",
        "train_r2_se", "val_loss", "val_loss_phy", "val_loss_dyn", "val_pen_orth", "val_pen_cov",
        "val_r2_se", "val_r2_dyn_mean", "min_w", "orth_offdiag_max", "orth_diag_dev_max", "corr_offdiag_max",
    )

    def append(self, rec: dict) -> None:
        self.records.append(rec)

    @property
    def final(self) -> dict:
        return self.records[self.best_epoch] if self.best_epoch >= 0 else self.records[-1]

    def write_csv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for rec in self.records:
                fh.write(",".join(_fmt(rec.get(c, float("nan"))) for c in self.COLUMNS) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "%.17g" % float(v)


def constraint_norms(model: ChemTabModel, Y: np.ndarray, Zmix: np.ndarray) -> dict:
    W = model.encoder.W
    G = W.T @ W
    off = G - np.diag(np.diag(G))
    X = np.column_stack([model_encode(model, Y)[0], Zmix])
    C = correlation_matrix(X)
    coff = C - np.diag(np.diag(C))
    return {
        "min_w": float(W.min()),
        "orth_offdiag_max": float(np.abs(off).max()) if W.shape[1] > 1 else 0.0,
        "orth_diag_dev_max": float(np.abs(np.diag(G) - 1.0).max()),
        "corr_offdiag_max": float(np.abs(coff).max()),
    }


def _batches(perm: np.ndarray, size: int) -> list[np.ndarray]:
    chunks = [perm[i : i + size] for i in range(0, perm.size, size)]
    if len(chunks) > 1 and chunks[-1].size < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def resolve_key_species(cfg: TrainConfig, ds: FlameletDataset) -> tuple[str, ...]:
    """Configured key species, or every species with a non-zero source term somewhere."""
    if cfg.key_species is not None:
        ds.species_index(cfg.key_species)
        return tuple(cfg.key_species)
    active = np.abs(ds.Sdot).max(0) > 0
    return tuple(n for n, a in zip(ds.species_names, active) if a)


def _fit_dynamic_scaler(model: ChemTabModel, Sdot: np.ndarray) -> None:
    if model.dyn_reg is not None:
        model.scalers["dynamic"] = fit_scaler(model.config.scaler, dynamic_targets(model.encoder, Sdot))


def _params(model: ChemTabModel, cfg: TrainConfig):
    params, names, owners = [], [], []
    for tag, net in model.networks():
        if tag == "encoder_net" and not cfg.train_encoder:
            continue
        params += net.params()
        names += net.param_names(tag + ".")
        owners += [tag] * len(net.params())
    if model.encoder_net is None and cfg.train_encoder:
        params.append(model.encoder.W)
        names.append("encoder.W")
        owners.append("encoder")
    return params, names, owners


def train(model: ChemTabModel, train_ds: FlameletDataset, val_ds: FlameletDataset,
          cfg: TrainConfig | None = None, progress=None):
    """Fit ``model`` in place and return ``(model, history)``.

    Each epoch shuffles the training rows with a seeded generator; every
    minibatch recomputes the dynamic targets from the current encoder, takes
    one Adam step on the joint loss and clamps the encoder at zero. The
    validation loss drives early stopping; the best epoch's parameters are
    restored at the end.
    """
    cfg = cfg or model.config
    model.config = cfg
    if train_ds.species_names != model.species_names or val_ds.species_names != model.species_names:
        raise ShapeError("dataset species do not match the model")
    t0 = time.perf_counter()
    rng = _streams(cfg.seed)
    model.scalers["physics"] = fit_scaler(cfg.scaler, physics_targets(model, Batch.from_dataset(train_ds)))
    _fit_dynamic_scaler(model, train_ds.Sdot)
    opt = nn.AdamState(lr=cfg.lr)
    params, names, owners = _params(model, cfg)
    full_train = Batch.from_dataset(train_ds)
    full_val = Batch.from_dataset(val_ds)
    drop_rngs = {"physics": rng["physics_dropout"], "dynamic": rng["dynamic_dropout"],
                 "encoder_net": rng["encoder_net"]}

    history = History()
    best = (math.inf, None)
    since_best = 0
    try:
        for epoch in range(cfg.epochs):
            if epoch > 0:
                _fit_dynamic_scaler(model, train_ds.Sdot)
            perm = rng["shuffle"].permutation(train_ds.n)
            for b, rows in enumerate(_batches(perm, cfg.batch_size)):
                batch = Batch.from_dataset(train_ds, rows)
                try:
                    loss, _, grads = _loss_and_grads(model, batch, train=True, rngs=drop_rngs, grad=True)
                except LossError as exc:
                    raise TrainingError(f"divergence at epoch {epoch}, batch {b}: {exc}") from None
                flat = []
                for tag, net in model.networks():
                    if tag == "encoder_net" and not cfg.train_encoder:
                        continue
                    flat += grads[tag]
                if model.encoder_net is None and cfg.train_encoder:
                    flat.append(grads["encoder"])
                try:
                    nn.adam_step(opt, params, flat, names)
                except TrainingError as exc:
                    raise TrainingError(f"divergence at epoch {epoch}, batch {b}: {exc}") from None
                if cfg.project_nonneg and model.encoder_net is None and cfg.train_encoder:
                    np.maximum(model.encoder.W, 0.0, out=model.encoder.W)
                for _, net in model.networks():
                    net.touch()

            tr_loss, tr = joint_loss(model, full_train)
            va_loss, va = joint_loss(model, full_val)
            if not math.isfinite(va_loss):
                raise TrainingError(f"divergence at epoch {epoch}: validation loss is not finite")
            rec = {"epoch": epoch, "train_loss": tr_loss, "val_loss": va_loss}
            for tag, terms in (("train", tr), ("val", va)):
                for name in ("loss_phy", "loss_dyn", "pen_orth", "pen_cov"):
                    rec[f"{tag}_{name}"] = terms[name]
                rec[f"{tag}_r2_se"] = float(terms["r2_phys"][0])
            rec["val_r2_dyn_mean"] = float(va["r2_dyn"].mean()) if "r2_dyn" in va else float("nan")
            rec.update(constraint_norms(model, val_ds.Y, val_ds.Zmix))
            history.append(rec)
            if progress is not None:
                progress(rec)

            if va_loss < best[0]:
                best = (va_loss, model.copy())
                history.best_epoch = epoch
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    history.stopped_early = True
                    break
    except LossError as exc:
        err = TrainingError(f"divergence while evaluating the epoch: {exc}")
        err.history = history
        raise err from None
    except TrainingError as exc:
        exc.history = history
        raise

    restored = best[1]
    model.encoder = restored.encoder
    model.physics_reg = restored.physics_reg
    model.dyn_reg = restored.dyn_reg
    model.encoder_net = restored.encoder_net
    model.scalers = restored.scalers
    model.metadata.update({
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "data_fingerprint": train_ds.fingerprint(),
        "best_epoch": history.best_epoch,
    })
    history.seconds = time.perf_counter() - t0
    return model, history


def fit(train_ds: FlameletDataset, val_ds: FlameletDataset, cfg: TrainConfig, progress=None):
    """Build a model sized for the data and train it."""
    key = resolve_key_species(cfg, train_ds)
    cfg = cfg.replace(key_species=key)
    model = build_model(cfg, train_ds.s, train_ds.species_names)
    model.metadata["kind"] = "chemtab"
    return train(model, train_ds, val_ds, cfg, progress)


# ---------------------------------------------------------------------------
# prediction


def predict(model: ChemTabModel, Y, Zmix):
    """Eval-mode outputs in physical units: ``(Se_hat, Sdot_hat, Stilde_hat)``.

    ``Sdot_hat`` holds the key species in ``model.key_species`` order;
    ``Stilde_hat`` is ``None`` for models without a dynamic regressor.
    """
    Y = np.asarray(Y, dtype=np.float64)
    Zmix = np.asarray(Zmix, dtype=np.float64).ravel()
    if Y.ndim != 2 or Y.shape[0] != Zmix.shape[0]:
        raise ShapeError(f"Y {Y.shape} and Zmix {Zmix.shape} disagree")
    cpv = model_encode(model, Y)[0]
    return predict_from_cpv(model, cpv, Zmix)


def predict_from_cpv(model: ChemTabModel, cpv, Zmix):
    X = np.column_stack([cpv, Zmix])
    phys = model.scalers["physics"].inverse(nn.predict(model.physics_reg, X))
    dyn = None
    if model.dyn_reg is not None:
        dyn = model.scalers["dynamic"].inverse(nn.predict(model.dyn_reg, X))
    return phys[:, 0], phys[:, 1:], dyn
