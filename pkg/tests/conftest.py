from __future__ import annotations

import time

import numpy as np
import pytest

from chemtab.cli import packaged_config
from chemtab.dataset import FlameletDataset, split_train_val
from chemtab.flamelet import generate, load_generator_config, load_mechanism
from chemtab.model import fit, load_train_config

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}

# wall-clock seconds of the session-scoped desk steps
TIMINGS: dict[str, float] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


def random_dataset(n: int, s: int, seed: int = 0, n_flames: int = 4) -> FlameletDataset:
    """Small valid dataset with random compositions and sources."""
    rng = np.random.default_rng(seed)
    Y = rng.dirichlet(np.ones(s), size=n)
    Sdot = rng.normal(size=(n, s))
    h = rng.normal(size=s)
    Se = -(Sdot * h).sum(1)
    Z = rng.uniform(size=n)
    keys = np.repeat(np.arange(1, n_flames + 1, dtype=float), -(-n // n_flames))[:n]
    x = np.tile(np.linspace(0, 1, -(-n // n_flames)), n_flames)[:n]
    return FlameletDataset(tuple(f"S{i}" for i in range(s)), Y, Sdot, Se, Z, keys, x)


@pytest.fixture
def tiny_ds():
    return random_dataset(40, 5, seed=3)


@pytest.fixture(scope="session")
def desk_mech():
    return load_mechanism(packaged_config("desk6_mech.cfg"))


@pytest.fixture(scope="session")
def desk_gen_cfg():
    return load_generator_config(packaged_config("desk6_gen.cfg"))


@pytest.fixture(scope="session")
def desk_sweep(desk_mech, desk_gen_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("desk") / "desk.csv"
    t0 = time.perf_counter()
    result = generate(desk_mech, desk_gen_cfg, out)
    TIMINGS["generate"] = time.perf_counter() - t0
    return result, out


@pytest.fixture(scope="session")
def desk_ds(desk_sweep):
    return desk_sweep[0].dataset


@pytest.fixture(scope="session")
def desk_train_cfg():
    return load_train_config(packaged_config("desk_train.cfg"))


@pytest.fixture(scope="session")
def desk_split(desk_ds, desk_train_cfg):
    return split_train_val(desk_ds, desk_train_cfg.split_fraction, desk_train_cfg.seed)


@pytest.fixture(scope="session")
def desk_run(desk_split, desk_train_cfg):
    """The reference desk training run: (model, history, seconds)."""
    train_ds, val_ds = desk_split
    t0 = time.perf_counter()
    model, history = fit(train_ds, val_ds, desk_train_cfg)
    return model, history, time.perf_counter() - t0


MISALIGNED_SPECIES = "N"


def misaligned_projection(ds: FlameletDataset, p: int) -> np.ndarray:
    """Every progress variable reads only the inert species, which carries no reaction information."""
    W = np.zeros((ds.s, p))
    W[ds.species_names.index(MISALIGNED_SPECIES), :] = 1.0
    return W


@pytest.fixture(scope="session")
def desk_baselines(desk_split, desk_train_cfg):
    """Trained desk baselines, built on first request: kind -> (model, history)."""
    from chemtab.baselines import train_baseline

    cache: dict = {}

    def get(kind: str, fixed_W=None, tag: str | None = None):
        name = tag or kind
        if name not in cache:
            train_ds, val_ds = desk_split
            cache[name] = train_baseline(kind, train_ds, val_ds, desk_train_cfg, fixed_W=fixed_W)
        return cache[name]

    return get
