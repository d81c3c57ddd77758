"""Command-line entry point: ``chemtab generate|train|eval|bench|search``.

Exit codes: 0 success, 1 usage error, 2 invalid input or failed strict
audit, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BASELINE_KINDS, train_baseline
from .dataset import load_dataset, split_train_val
from .errors import ChemTabError, ConfigError, UsageError
from .evaluation import (
    CONSTRAINT_HEADER,
    R2_HEADER,
    RESIDUAL_HEADER,
    constraint_report,
    flame_profile_report,
    r2_report,
    residual_report,
    write_csv,
)
from .flamelet import generate, load_generator_config, load_mechanism
from .inference import BENCH_COLUMNS, bench, load_model, save_model
from .model import TrainConfig, fit, load_train_config

log = logging.getLogger("chemtab")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def packaged_config(name: str) -> Path:
    """Path of a config file shipped with the package (e.g. ``desk_mech.cfg``)."""
    return Path(str(resources.files("chemtab") / "configs" / name))


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    mech = load_mechanism(args.mech or packaged_config("desk6_mech.cfg"))
    overrides = {"max_flames": args.max_flames, "grid_points": args.grid_points}
    cfg = load_generator_config(args.config or packaged_config("desk6_gen.cfg"), **overrides)
    result = generate(mech, cfg, args.out)
    ext = "none" if result.extinction_index is None else str(result.extinction_index)
    print(f"flames={len(result.solutions)} rows={result.dataset.n} extinction_index={ext}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _train_config(args) -> TrainConfig:
    path = args.config or packaged_config("desk_train.cfg")
    return load_train_config(path, seed=args.seed, epochs=args.epochs)


def _read_matrix(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read projection matrix {path}: {exc}") from None


def cmd_train(args) -> int:
    if args.baseline is not None and args.baseline not in BASELINE_KINDS:
        raise UsageError(f"unknown baseline {args.baseline!r}; valid kinds: {', '.join(BASELINE_KINDS)}")
    cfg = _train_config(args)
    ds = load_dataset(args.data)
    train_ds, val_ds = split_train_val(ds, cfg.split_fraction, cfg.seed, cfg.split_by_flame)
    history_path = Path(args.history) if args.history else Path(args.out).with_suffix(".history.csv")

    def progress(rec):
        log.info("epoch %d  val_loss %.5f  val_r2_se %.4f  corr %.3f",
                 rec["epoch"], rec["val_loss"], rec["val_r2_se"], rec["corr_offdiag_max"])

    try:
        if args.baseline is None:
            model, history = fit(train_ds, val_ds, cfg, progress)
        else:
            fixed = _read_matrix(args.fixed_w) if args.fixed_w else None
            model, history = train_baseline(args.baseline, train_ds, val_ds, cfg, fixed, progress)
    except ChemTabError as exc:
        partial = getattr(exc, "history", None)
        if partial is not None:
            partial.write_csv(history_path)
            print(f"partial history written to {history_path}", file=sys.stderr)
        raise
    save_model(model, args.out)
    history.write_csv(history_path)

    final = history.final
    kind = model.metadata.get("kind", "chemtab")
    print(f"model={args.out} kind={kind} best_epoch={history.best_epoch} epochs_run={len(history.records)} "
          f"seconds={history.seconds:.1f}")
    dyn = final["val_r2_dyn_mean"]
    print(f"val_r2_se={final['val_r2_se']:.6f} val_r2_dyn_mean={dyn:.6f} val_loss={final['val_loss']:.6f}")
    audit = constraint_report(model, val_ds).summary()
    print(" ".join(f"{k}={v:.6g}" for k, v in audit.items()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _output(args):
    return open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout


def cmd_eval(args) -> int:
    report = args.report
    if report not in ("r2", "constraints") and not report.startswith(("residuals", "flame:")):
        raise UsageError(f"unknown report {report!r}; use r2, residuals[:flame_key|:x_pos], constraints "
                         "or flame:<key>")
    model = load_model(args.model)
    ds = load_dataset(args.data)
    status = EXIT_OK
    fh = _output(args)
    try:
        if report == "r2":
            write_csv(R2_HEADER, r2_report(model, ds), fh)
        elif report.startswith("residuals"):
            group = report.partition(":")[2] or "flame_key"
            write_csv(RESIDUAL_HEADER, residual_report(model, ds, group), fh)
        elif report == "constraints":
            audit = constraint_report(model, ds)
            write_csv(CONSTRAINT_HEADER, audit.rows(model.species_names), fh)
        else:
            try:
                key = float(report.partition(":")[2])
            except ValueError:
                raise UsageError(f"bad flame key in {report!r}") from None
            header, rows = flame_profile_report(model, ds, key)
            write_csv(header, rows, fh)
    finally:
        if fh is not sys.stdout:
            fh.close()
    if args.strict:
        problems = constraint_report(model, ds).violations()
        for p in problems:
            print(f"constraint violation: {p}", file=sys.stderr)
        if problems:
            status = EXIT_VALIDATION
    return status


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    model = load_model(args.model)
    res = bench(model, args.batch, args.reps, args.seed)
    fh = _output(args)
    try:
        write_csv(BENCH_COLUMNS, [[res[c] for c in BENCH_COLUMNS]], fh)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# search

_SEARCHABLE = ("p", "middle_width", "batch_size", "lr", "dropout", "activation", "scaler",
               "lambda_orth", "lambda_cov", "epochs", "patience")


def read_search_grid(path) -> tuple[dict, dict]:
    """``[search]`` lists candidate values per parameter; ``[train]`` holds fixed settings."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        if not cp.read(path, encoding="utf-8"):
            raise ConfigError(f"no such grid file: {path}")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    grid = {}
    if cp.has_section("search"):
        for key, raw in cp["search"].items():
            if key not in _SEARCHABLE:
                raise ConfigError(f"{path}: parameter {key!r} is not searchable; choose from {_SEARCHABLE}")
            values = [v for v in raw.replace(",", " ").split() if v]
            if values:
                grid[key] = values
    if not grid:
        raise UsageError(f"{path}: the search grid is empty")
    base = dict(cp["train"].items()) if cp.has_section("train") else {}
    return grid, base


def _coerce(key: str, raw: str):
    default = getattr(TrainConfig(), key)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _config_file_text(cfg: TrainConfig) -> str:
    lines = ["[train]"]
    for key, value in cfg.as_dict().items():
        if value is None:
            continue
        if isinstance(value, list):
            value = " ".join(value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def cmd_search(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    grid, base = read_search_grid(args.grid)
    base_cfg = TrainConfig(**{k: _coerce(k, v) for k, v in base.items() if k != "key_species"})
    ds = load_dataset(args.data)
    rng = np.random.default_rng(args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    keys = sorted(grid)
    rows = []
    best = None
    for trial in range(args.trials):
        choice = {k: _coerce(k, grid[k][int(rng.integers(len(grid[k])))]) for k in keys}
        cfg = base_cfg.replace(seed=args.seed, **choice)
        if cfg.p >= ds.s:
            raise UsageError(f"search grid allows p={cfg.p} but the data has only {ds.s} species")
        train_ds, val_ds = split_train_val(ds, cfg.split_fraction, cfg.seed, cfg.split_by_flame)
        try:
            _, history = fit(train_ds, val_ds, cfg)
            val_loss = history.final["val_loss"]
        except ChemTabError as exc:
            log.warning("trial %d failed: %s", trial, exc)
            val_loss = float("inf")
        rows.append([trial] + [choice[k] for k in keys] + [val_loss])
        print(f"trial {trial}: " + " ".join(f"{k}={choice[k]}" for k in keys) + f" val_loss={val_loss:.6f}")
        if best is None or val_loss < best[0]:
            best = (val_loss, cfg)
    with (out_dir / "trials.csv").open("w", newline="", encoding="utf-8") as fh:
        write_csv(["trial", *keys, "val_loss"], rows, fh)
    (out_dir / "best.cfg").write_text(_config_file_text(best[1]), encoding="utf-8")
    print(f"best val_loss={best[0]:.6f} config={out_dir / 'best.cfg'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chemtab", description="Constrained progress-variable learning for tabulated chemistry.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="solve a strain sweep of flamelets and write the dataset CSV")
    g.add_argument("--mech", help="mechanism config (default: packaged desk6_mech.cfg)")
    g.add_argument("--config", help="generator config (default: packaged desk6_gen.cfg)")
    g.add_argument("--out", required=True, help="output CSV path")
    g.add_argument("--max-flames", type=int, help="override the flame cap")
    g.add_argument("--grid-points", type=int, help="override the grid size")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train ChemTab or a baseline on a dataset CSV")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="[train] config file (default: packaged desk_train.cfg)")
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--baseline", help=f"train a baseline instead: {', '.join(BASELINE_KINDS)}")
    t.add_argument("--fixed-w", help="CSV matrix (s rows, p columns) for the fixed baseline")
    t.add_argument("--history", help="history CSV path (default: <out>.history.csv)")
    t.add_argument("--seed", type=int, help="seed for initialization, split, shuffling and dropout "
                                            "(overrides the config; config default 0)")
    t.add_argument("--epochs", type=int, help="override the epoch budget")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="write an evaluation report as CSV")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", default="r2",
                   help="r2 | residuals[:flame_key|:x_pos] | constraints | flame:<key> (default r2)")
    e.add_argument("--strict", action="store_true",
                   help="exit 2 if W < 0, |W^T W - I| > 0.05 or |corr| > 0.1 off the diagonal")
    e.add_argument("--out", help="CSV path (default stdout)")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="time batched lookups")
    b.add_argument("--model", required=True)
    b.add_argument("--batch", type=int, default=1)
    b.add_argument("--reps", type=int, default=10000)
    b.add_argument("--seed", type=int, default=0, help="seed for the random query points (default 0)")
    b.add_argument("--out", help="CSV path (default stdout)")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("search", help="seeded random search over a hyper-parameter grid")
    s.add_argument("--data", required=True)
    s.add_argument("--grid", required=True, help="config with a [search] section of candidate values")
    s.add_argument("--trials", type=int, default=10)
    s.add_argument("--seed", type=int, default=0, help="seed for trial sampling and for every trial's training")
    s.add_argument("--out-dir", default="search", help="directory for trials.csv and best.cfg")
    s.set_defaults(func=cmd_search)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ChemTabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
