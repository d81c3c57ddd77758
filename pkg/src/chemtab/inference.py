"""Model persistence and the run-time lookup path.

Models are stored as one canonical JSON document: fixed key order, one
matrix row per line and every float written with 17 significant digits, so
``save -> load -> save`` reproduces the file byte for byte.

Lookups start after the encoder: a flow solver transports the progress
variables themselves, so :func:`lookup_batch` maps ``(Cpv, Zmix)`` straight
to the physical outputs. Small regressors run through a compiled kernel
(per-call overhead dominates there); large ones go through BLAS with
preallocated buffers.
"""

from __future__ import annotations

import json
import math
import threading
import time
import weakref
from pathlib import Path

import numba
import numpy as np

from . import nn
from .baselines import LookupTable
from .dataset import OutputScaler
from .errors import IntegrityError, ShapeError, UnsupportedVersionError, UsageError, ValidationError
from .model import ChemTabModel, EncoderWeights, TrainConfig, encode

MODEL_FORMAT = "chemtab-model"
TABLE_FORMAT = "chemtab-table"
FORMAT_VERSION = 1
# regressor pairs with fewer parameters than this use the compiled kernel
KERNEL_PARAM_LIMIT = 100_000


# ---------------------------------------------------------------------------
# canonical text emitter


def _num(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    if not math.isfinite(f):
        raise ValidationError(f"cannot store non-finite number {f!r}")
    return "%.17g" % f


def _emit(value, indent: int = 0) -> str:
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if value is None:
        return "null"
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, np.ndarray):
        value = value.tolist() if value.ndim else value.item()
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_emit(v, indent + 1)}" for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        if all(isinstance(v, (list, tuple)) and all(not isinstance(x, (list, tuple, dict, str)) for x in v)
               for v in value):
            rows = [inner + "[" + ", ".join(_num(x) for x in v) + "]" for v in value]
            return "[\n" + ",\n".join(rows) + "\n" + pad + "]"
        if all(not isinstance(v, (list, tuple, dict, np.ndarray)) for v in value):
            return "[" + ", ".join(_emit(v) if isinstance(v, str) or v is None else _num(v) for v in value) + "]"
        return "[\n" + ",\n".join(inner + _emit(v, indent + 1) for v in value) + "\n" + pad + "]"
    return _num(value)


def canonical_text(document: dict) -> str:
    return _emit(document) + "\n"


# ---------------------------------------------------------------------------
# model <-> document


def _net_doc(net: nn.MlpNetwork | None):
    if net is None:
        return None
    return {"layers": [
        {"activation": l.activation, "dropout": l.dropout, "W": l.W, "b": l.b} for l in net.layers
    ]}


def _scaler_doc(sc: OutputScaler | None):
    if sc is None:
        return None
    return {"kind": sc.kind, "center": sc.center, "scale": sc.scale}


def model_document(model: ChemTabModel) -> dict:
    model.check_shapes()
    for tag, net in model.networks():
        net.check_finite()
    meta = {str(k): model.metadata[k] for k in sorted(model.metadata)}
    return {
        "format": MODEL_FORMAT,
        "format_version": FORMAT_VERSION,
        "kind": str(model.metadata.get("kind", "chemtab")),
        "species": list(model.species_names),
        "p": model.p,
        "k": model.k,
        "key_species": list(model.key_species),
        "encoder": {"W": model.encoder.W},
        "encoder_net": _net_doc(model.encoder_net),
        "physics": _net_doc(model.physics_reg),
        "dynamic": _net_doc(model.dyn_reg),
        "scalers": {
            "physics": _scaler_doc(model.scalers["physics"]),
            "dynamic": _scaler_doc(model.scalers.get("dynamic")),
        },
        "config": model.config.as_dict(),
        "metadata": meta,
    }


def save_model(model: ChemTabModel, path) -> None:
    text = canonical_text(model_document(model))
    Path(path).write_text(text, encoding="utf-8")


def _matrix(value, rows=None, cols=None, what="matrix") -> np.ndarray:
    a = np.array(value, dtype=np.float64)
    if a.ndim != 2 or (rows is not None and a.shape[0] != rows) or (cols is not None and a.shape[1] != cols):
        raise IntegrityError(f"{what} has shape {a.shape}, expected ({rows}, {cols})")
    if not np.isfinite(a).all():
        raise IntegrityError(f"{what} contains non-finite values")
    return a


def _vector(value, size, what) -> np.ndarray:
    a = np.array(value, dtype=np.float64)
    if a.shape != (size,):
        raise IntegrityError(f"{what} has shape {a.shape}, expected ({size},)")
    if not np.isfinite(a).all():
        raise IntegrityError(f"{what} contains non-finite values")
    return a


def _net_from(doc, what: str) -> nn.MlpNetwork | None:
    if doc is None:
        return None
    layers = []
    for i, ld in enumerate(doc["layers"]):
        W = _matrix(ld["W"], what=f"{what} layer {i} weights")
        b = _vector(ld["b"], W.shape[0], f"{what} layer {i} bias")
        layers.append(nn.Layer(W, b, str(ld["activation"]), float(ld["dropout"])))
    return nn.MlpNetwork(layers)


def _scaler_from(doc, width: int, what: str) -> OutputScaler | None:
    if doc is None:
        return None
    scale = _vector(doc["scale"], width, f"{what} scaler scale")
    if (scale <= 0).any():
        raise IntegrityError(f"{what} scaler has non-positive scale")
    return OutputScaler(str(doc["kind"]), _vector(doc["center"], width, f"{what} scaler center"), scale)


def _config_from(doc: dict) -> TrainConfig:
    defaults = TrainConfig()
    kw = {}
    for key, value in doc.items():
        if not hasattr(defaults, key):
            raise IntegrityError(f"unknown config key {key!r}")
        default = getattr(defaults, key)
        if key == "key_species":
            kw[key] = None if value is None else tuple(value)
        elif isinstance(default, bool):
            kw[key] = bool(value)
        elif isinstance(default, int):
            kw[key] = int(value)
        elif isinstance(default, float):
            kw[key] = float(value)
        else:
            kw[key] = value
    return TrainConfig(**kw)


def model_from_document(doc: dict) -> ChemTabModel:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise IntegrityError("not a ChemTab model document")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"model format version {version!r} is not supported (this build reads version {FORMAT_VERSION})"
        )
    try:
        species = tuple(doc["species"])
        p, k = int(doc["p"]), int(doc["k"])
        key = tuple(doc["key_species"])
        if len(key) != k:
            raise IntegrityError(f"k={k} but {len(key)} key species listed")
        W = _matrix(doc["encoder"]["W"], len(species), what="encoder W")
        physics = _net_from(doc["physics"], "physics")
        dynamic = _net_from(doc["dynamic"], "dynamic")
        enc_net = _net_from(doc["encoder_net"], "encoder_net")
        scalers = {"physics": _scaler_from(doc["scalers"]["physics"], 1 + k, "physics")}
        dyn_sc = _scaler_from(doc["scalers"]["dynamic"], p, "dynamic")
        if dyn_sc is not None:
            scalers["dynamic"] = dyn_sc
        model = ChemTabModel(EncoderWeights(W, species), physics, dynamic, scalers, key,
                             _config_from(doc["config"]), dict(doc["metadata"]), enc_net)
    except IntegrityError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise IntegrityError(f"malformed model document: {exc}") from None
    if model.p != p:
        raise IntegrityError(f"document says p={p}, networks imply p={model.p}")
    return model


def load_model(path) -> ChemTabModel:
    """Read and fully validate a model file.

    Raises :class:`UnsupportedVersionError` for an unknown format version and
    :class:`IntegrityError` for anything truncated or inconsistent.
    """
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"no such model file: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise IntegrityError(f"{path}: unreadable model file ({exc})") from None
    try:
        return model_from_document(doc)
    except ShapeError as exc:
        raise IntegrityError(f"{path}: {exc}") from None


def save_table(table: LookupTable, path) -> None:
    doc = {
        "format": TABLE_FORMAT,
        "format_version": FORMAT_VERSION,
        "output_names": list(table.output_names),
        "axes": [a for a in table.axes],
        "shape": list(table.values.shape),
        "values": table.values.reshape(-1, table.n_outputs),
    }
    Path(path).write_text(canonical_text(doc), encoding="utf-8")


def load_table(path) -> LookupTable:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise IntegrityError(f"{path}: unreadable table file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != TABLE_FORMAT:
        raise IntegrityError("not a lookup-table document")
    if doc.get("format_version") != FORMAT_VERSION:
        raise UnsupportedVersionError(f"table format version {doc.get('format_version')!r} is not supported")
    try:
        values = np.array(doc["values"], dtype=np.float64).reshape(doc["shape"])
        return LookupTable(tuple(np.array(a, dtype=np.float64) for a in doc["axes"]), values,
                           tuple(doc["output_names"]))
    except (KeyError, TypeError, ValueError, ShapeError) as exc:
        raise IntegrityError(f"malformed table document: {exc}") from None


# ---------------------------------------------------------------------------
# footprint


def model_nbytes(model: ChemTabModel) -> int:
    """In-memory size of every numeric array the model holds."""
    total = model.encoder.W.nbytes
    for _, net in model.networks():
        total += sum(p.nbytes for p in net.params())
    for sc in model.scalers.values():
        total += sc.center.nbytes + sc.scale.nbytes
    return int(total)


def parameter_count(model: ChemTabModel) -> int:
    n = model.encoder.W.size
    for _, net in model.networks():
        n += sum(p.size for p in net.params())
    return int(n)


# ---------------------------------------------------------------------------
# lookup


_ACT_CODES = {"linear": 0, "relu": 1, "tanh": 2, "selu": 3}


@numba.njit(cache=True, fastmath=True, nogil=True)
def _run_net(Wf, bf, woff, boff, shapes, acts, center, scale, X, buf_a, buf_b, out):
    m = X.shape[0]
    nl = shapes.shape[0]
    for r in range(m):
        for i in range(X.shape[1]):
            buf_a[i] = X[r, i]
        cur = buf_a
        nxt = buf_b
        for l in range(nl):
            n_out = shapes[l, 0]
            n_in = shapes[l, 1]
            wo = woff[l]
            bo = boff[l]
            act = acts[l]
            for j in range(n_out):
                acc = 0.0
                base = wo + j * n_in
                for i in range(n_in):
                    acc += Wf[base + i] * cur[i]
                acc += bf[bo + j]
                if act == 1:
                    if acc < 0.0:
                        acc = 0.0
                elif act == 2:
                    acc = math.tanh(acc)
                elif act == 3:
                    if acc <= 0.0:
                        acc = 1.0507009873554805 * 1.6732632423543772 * math.expm1(acc)
                    else:
                        acc = 1.0507009873554805 * acc
                nxt[j] = acc
            tmp = cur
            cur = nxt
            nxt = tmp
        for j in range(out.shape[1]):
            out[r, j] = cur[j] * scale[j] + center[j]


class _PackedNet:
    def __init__(self, net: nn.MlpNetwork, scaler: OutputScaler):
        self.Wf = np.ascontiguousarray(np.concatenate([l.W.ravel() for l in net.layers]))
        self.bf = np.ascontiguousarray(np.concatenate([l.b for l in net.layers]))
        self.woff = np.cumsum([0] + [l.W.size for l in net.layers[:-1]]).astype(np.int64)
        self.boff = np.cumsum([0] + [l.b.size for l in net.layers[:-1]]).astype(np.int64)
        self.shapes = np.array([l.W.shape for l in net.layers], dtype=np.int64)
        self.acts = np.array([_ACT_CODES[l.activation] for l in net.layers], dtype=np.int64)
        self.center = np.ascontiguousarray(scaler.center, dtype=np.float64)
        self.scale = np.ascontiguousarray(scaler.scale, dtype=np.float64)
        self.width = int(max(net.widths))
        self.out_width = net.out_width

    def run(self, X, buf_a, buf_b, out):
        _run_net(self.Wf, self.bf, self.woff, self.boff, self.shapes, self.acts,
                 self.center, self.scale, X, buf_a, buf_b, out)


class _BlasNet:
    def __init__(self, net: nn.MlpNetwork, scaler: OutputScaler):
        self.WT = [np.ascontiguousarray(l.W.T) for l in net.layers]
        self.b = [l.b.copy() for l in net.layers]
        self.acts = [l.activation for l in net.layers]
        self.center = scaler.center.copy()
        self.scale = scaler.scale.copy()
        self.out_width = net.out_width

    def buffers(self, m: int):
        return [np.empty((m, WT.shape[1])) for WT in self.WT]

    def run(self, X, bufs, out):
        h = X
        for WT, b, act, buf in zip(self.WT, self.b, self.acts, bufs):
            np.dot(h, WT, out=buf)
            buf += b
            if act == "relu":
                np.maximum(buf, 0.0, out=buf)
            elif act != "linear":
                buf[...] = nn.activate(act, buf)
            h = buf
        np.multiply(h, self.scale, out=out)
        out += self.center


class LookupEngine:
    """Eval-mode evaluator of a model's regressors from ``(Cpv, Zmix)``.

    The engine snapshots the regressor parameters when built. Scratch buffers
    live per thread and per batch size, so repeated equal-size calls of
    :meth:`lookup_into` allocate nothing and concurrent threads never share
    scratch space.
    """

    def __init__(self, model: ChemTabModel):
        model.check_shapes()
        self.p = model.p
        self.k = model.k
        self.has_dynamic = model.dyn_reg is not None
        nets = [(model.physics_reg, model.scalers["physics"])]
        if self.has_dynamic:
            nets.append((model.dyn_reg, model.scalers["dynamic"]))
        n_params = sum(sum(p.size for p in net.params()) for net, _ in nets)
        self.backend = "kernel" if n_params < KERNEL_PARAM_LIMIT else "blas"
        cls = _PackedNet if self.backend == "kernel" else _BlasNet
        self._nets = [cls(net, sc) for net, sc in nets]
        self._local = threading.local()

    def _scratch(self, m: int):
        cache = getattr(self._local, "cache", None)
        if cache is None:
            cache = self._local.cache = {}
        s = cache.get(m)
        if s is None:
            X = np.empty((m, self.p + 1))
            if self.backend == "kernel":
                width = max(max(n.width for n in self._nets), self.p + 1)
                extra = (np.empty(width), np.empty(width))
            else:
                extra = [n.buffers(m) for n in self._nets]
            s = cache[m] = (X, extra)
        return s

    def allocate(self, m: int):
        """Output arrays for a batch of ``m`` rows: (Se, key Sdot, Stilde or None)."""
        phys = np.empty((m, 1 + self.k))
        dyn = np.empty((m, self.p)) if self.has_dynamic else None
        return phys, dyn

    def lookup_into(self, Cpv: np.ndarray, Zmix: np.ndarray, phys_out: np.ndarray, dyn_out=None) -> None:
        """Evaluate into caller-owned arrays: ``phys_out`` (m, 1+k) and ``dyn_out`` (m, p)."""
        m = Cpv.shape[0]
        if Cpv.ndim != 2 or Cpv.shape[1] != self.p:
            raise ShapeError(f"Cpv must be (m, {self.p}), got {Cpv.shape}")
        if Zmix.shape[0] != m:
            raise ShapeError(f"Zmix has {Zmix.shape[0]} rows, Cpv has {m}")
        if phys_out.shape != (m, 1 + self.k):
            raise ShapeError(f"physics output buffer must be {(m, 1 + self.k)}")
        X, extra = self._scratch(m)
        X[:, : self.p] = Cpv
        X[:, self.p] = Zmix
        if self.backend == "kernel":
            self._nets[0].run(X, extra[0], extra[1], phys_out)
            if self.has_dynamic and dyn_out is not None:
                self._nets[1].run(X, extra[0], extra[1], dyn_out)
        else:
            self._nets[0].run(X, extra[0], phys_out)
            if self.has_dynamic and dyn_out is not None:
                self._nets[1].run(X, extra[1], dyn_out)

    def lookup(self, Cpv, Zmix):
        Cpv = np.atleast_2d(np.asarray(Cpv, dtype=np.float64))
        Zmix = np.asarray(Zmix, dtype=np.float64).ravel()
        if np.isnan(Cpv).any() or np.isnan(Zmix).any():
            raise UsageError("NaN in lookup input")
        phys, dyn = self.allocate(Cpv.shape[0])
        self.lookup_into(Cpv, Zmix, phys, dyn)
        return phys[:, 0], phys[:, 1:], dyn


_ENGINES: "weakref.WeakKeyDictionary[ChemTabModel, tuple]" = weakref.WeakKeyDictionary()
_ENGINE_LOCK = threading.Lock()


def _engine_key(model: ChemTabModel):
    key = [id(model.physics_reg), model.physics_reg.version, id(model.scalers["physics"])]
    if model.dyn_reg is not None:
        key += [id(model.dyn_reg), model.dyn_reg.version, id(model.scalers["dynamic"])]
    return tuple(key)


def engine_for(model: ChemTabModel) -> LookupEngine:
    """Cached :class:`LookupEngine` for ``model``; rebuilt if the regressors changed."""
    key = _engine_key(model)
    with _ENGINE_LOCK:
        hit = _ENGINES.get(model)
        if hit is not None and hit[0] == key:
            return hit[1]
        engine = LookupEngine(model)
        _ENGINES[model] = (key, engine)
        return engine


def lookup_batch(model: ChemTabModel, Cpv, Zmix):
    """Physical outputs ``(Se, key Sdot, Stilde)`` for transported progress variables."""
    return engine_for(model).lookup(Cpv, Zmix)


def encode_only(model: ChemTabModel, Y) -> np.ndarray:
    """Initial progress variables from mass fractions, ``Y @ W``."""
    if model.encoder_net is not None:
        return nn.predict(model.encoder_net, np.asarray(Y, dtype=np.float64))
    return encode(model.encoder, Y)


# ---------------------------------------------------------------------------
# benchmark


BENCH_COLUMNS = ("backend", "batch", "reps", "ns_per_lookup", "lookups_per_sec",
                 "p50_ns_per_lookup", "p90_ns_per_lookup", "p99_ns_per_lookup", "model_bytes")


def bench(model: ChemTabModel, batch: int = 1, reps: int = 1000, seed: int = 0, warmup: int | None = None) -> dict:
    """Time repeated equal-size lookups after a warm-up.

    Inputs are drawn once from a seeded generator inside the range the
    physics scaler saw. Per-lookup numbers divide call time by ``batch``.
    """
    if batch < 1 or reps < 1:
        raise UsageError("batch and reps must be >= 1")
    engine = LookupEngine(model)
    rng = np.random.default_rng(seed)
    Cpv = rng.uniform(0.0, 1.0, size=(batch, model.p))
    Zmix = rng.uniform(0.0, 1.0, size=batch)
    phys, dyn = engine.allocate(batch)
    for _ in range(warmup if warmup is not None else max(10, reps // 10)):
        engine.lookup_into(Cpv, Zmix, phys, dyn)
    times = np.empty(reps)
    clock = time.perf_counter_ns
    for i in range(reps):
        t0 = clock()
        engine.lookup_into(Cpv, Zmix, phys, dyn)
        times[i] = clock() - t0
    per = times / batch
    mean = float(per.mean())
    return {
        "backend": engine.backend,
        "batch": batch,
        "reps": reps,
        "ns_per_lookup": mean,
        "lookups_per_sec": 1e9 / mean,
        "p50_ns_per_lookup": float(np.percentile(per, 50)),
        "p90_ns_per_lookup": float(np.percentile(per, 90)),
        "p99_ns_per_lookup": float(np.percentile(per, 99)),
        "model_bytes": model_nbytes(model),
    }
