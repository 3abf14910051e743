import sys

import numpy as np
import pytest

from mqnmr import coherence, engine
from mqnmr.sectors import SpinSystem


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # One line per acceptance criterion, also for passing ones (their
    # captured stdout would otherwise stay hidden).
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "REPORT_LINES", None) if module else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


# Session-scoped caches for the expensive shared computations; every value
# is deterministic, so sharing them across tests changes nothing.


@pytest.fixture(scope="session")
def averaged_tables():
    cache = {}

    def get(n_spins: int):
        if n_spins not in cache:
            cache[n_spins] = coherence.averaged_table(SpinSystem(n_spins))
        return cache[n_spins]

    return get


@pytest.fixture(scope="session")
def perturbed_sweeps():
    cache = {}

    def get(n_spins: int, p: float, stop: float, step: float = 0.01):
        key = (n_spins, p, stop, step)
        if key not in cache:
            taus = step * np.arange(int(round(stop / step)) + 1)
            cache[key] = (taus, engine.perturbed_sweep(SpinSystem(n_spins), p, taus))
        return cache[key]

    return get


@pytest.fixture(scope="session")
def standard_tables():
    cache = {}

    def get(n_spins: int, tau: float):
        key = (n_spins, tau)
        if key not in cache:
            cache[key] = engine.coherence_table_at(SpinSystem(n_spins), tau)
        return cache[key]

    return get
