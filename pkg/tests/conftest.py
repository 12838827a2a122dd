import dataclasses
import time

import numpy as np
import pytest

from tactile_prior import contrastive, prior
from tactile_prior.config import DataConfig, PriorConfig, RunConfig, TactileConfig
from tactile_prior.synth import build_dataset

# Lines collected by the acceptance module and echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []
# Wall-clock seconds of shared fixtures, for runtime budgets.
TIMINGS: dict[str, float] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def small_run(seed: int = 3, **tactile) -> RunConfig:
    """A toy configuration that trains in a couple of seconds."""
    data = DataConfig(categories=["checker", "brushed_metal", "fabric_weave"],
                      instances_per_category=5, touches_per_instance=2, split=[3, 1, 1],
                      library_entries_per_category=2, adapt_pool_per_category=3)
    pri = PriorConfig(feature_dim=16, trunk_hidden=32, head_hidden=16, steps=40, batch_size=8,
                      renders_per_material=2)
    tac = dataclasses.replace(TactileConfig(dim_d=8, hidden=16, filters=8, batch_size=8,
                                            steps=30), **tactile)
    return RunConfig(seed=seed, data=data, prior=pri, tactile=tac)


@pytest.fixture(scope="session")
def toy():
    run = small_run()
    ds = build_dataset(run.data, run.seed)
    ckpt, log = prior.train_prior(ds, run, run.seed)
    return run, ds, ckpt, log


@pytest.fixture(scope="session")
def toy_tactile(toy):
    run, ds, pck, _ = toy
    ckpt, rows = contrastive.train_tactile(ds, pck, run, run.seed)
    return ckpt, rows


@pytest.fixture(scope="session")
def bench():
    """The default benchmark at master seed 17 with its trained prior."""
    start = time.perf_counter()
    run = RunConfig(seed=17)
    ds = build_dataset(run.data, run.seed)
    ckpt, log = prior.train_prior(ds, run, run.seed)
    TIMINGS["bench"] = time.perf_counter() - start
    return run, ds, ckpt, log


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
