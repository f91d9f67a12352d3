from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from stresspath.dgp import DgpConfig, Panel, replication_rng, simulate

FIXTURES = Path(__file__).parent / "fixtures"
UNRATE = FIXTURES / "unrate.csv"
PAPER = Path(__file__).resolve().parents[1] / "paper.md"


@pytest.fixture
def rng():
    return replication_rng(1234)


@pytest.fixture(scope="session")
def small_panel():
    cfg = DgpConfig(n_units=300)
    return cfg, simulate(cfg, replication_rng(7))


def hand_panel(n_units=2, n_periods=3, t0=2, y=None, x=None, a=None) -> Panel:
    tt = n_periods + 1
    y = np.arange(n_units * tt, dtype=float).reshape(n_units, tt) if y is None else y
    x = np.linspace(0.1, 0.2, n_units) if x is None else x
    a = np.arange(tt, dtype=float) * 0.5 if a is None else a
    return Panel(outcomes=y, covariates=x, macro=a, t0=t0)
