"""Shared chain builders used across the test modules."""

import numpy as np
import pytest

from quasistat import build_from_entries

# one line per acceptance criterion, replayed after the run so the
# verdicts are visible even under pytest's output capture
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def catastrophe_chain(n_states=8, birth=1.0, drop=3.0, absorb=1.0):
    """Upward drift by 1, collapse to state 1 at a fixed rate, absorption
    only out of state 1.  The closed-form moment ceiling for K={1} at
    rate C=absorb is drop/(drop-absorb)."""
    entries = []
    n = n_states - 1
    for x in range(1, n + 1):
        if x < n:
            entries.append((x, x + 1, birth))
        if x >= 2:
            entries.append((x, 1, drop))
    entries.append((1, 0, absorb))
    return build_from_entries(entries, n_states)


def alternating_catastrophe_chain(n_states=12, birth=1.0, drop=3.0, absorb=1.0):
    """Collapses land on 1 from odd states and on 2 from even states, so
    no single target state has a uniform inbound floor, but the pair
    {1, 2} does."""
    entries = []
    n = n_states - 1
    for x in range(1, n + 1):
        if x < n:
            entries.append((x, x + 1, birth))
        if x >= 3:
            entries.append((x, 1 if x % 2 == 1 else 2, drop))
    entries.append((1, 0, absorb))
    entries.append((2, 1, 1.0))
    return build_from_entries(entries, n_states)


def high_column_chain(n_states=6, col_rate=3.0, absorb=1.0, trickle=0.1):
    """Every state feeds the top transient state fast, which leaks back
    slowly.  The uniform-rates test passes yet no prefix core can,
    because the heavy column targets the top of the window."""
    entries = []
    n = n_states - 1
    for x in range(1, n + 1):
        if x != n:
            entries.append((x, n, col_rate))
        if x < n - 1:
            entries.append((x, x + 1, 0.3))
    entries.append((n, n - 1, trickle))
    entries.append((1, 0, absorb))
    return build_from_entries(entries, n_states)


def random_return_chain(seed: int):
    """Random bounded-rate chain built so the uniform-rates test has a
    real chance to hold: full inbound columns only on low states, sparse
    noise elsewhere, absorption from a few low states."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 16))  # transient states 1..n
    entries = []
    # sparse background rates
    for x in range(1, n + 1):
        for _ in range(int(rng.integers(1, 4))):
            y = int(rng.integers(1, n + 1))
            if y != x:
                entries.append((x, y, float(rng.uniform(0.05, 1.0))))
        if x < n:
            entries.append((x, x + 1, float(rng.uniform(0.1, 0.8))))
    # full return columns into 1..m with per-source floors
    m = int(rng.integers(1, 4))
    floors = rng.uniform(0.3, 1.5, size=m)
    for target in range(1, m + 1):
        for x in range(1, n + 1):
            if x != target:
                entries.append((x, target, float(floors[target - 1])))
    # absorption out of a couple of low states
    for x in range(1, int(rng.integers(2, 4))):
        entries.append((x, 0, float(rng.uniform(0.2, 1.2))))
    return build_from_entries(entries, n + 1)


def random_small_absorbed_chain(seed: int, max_transient=7):
    """Dense-ish random chain on few states for exact-oracle comparisons."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_transient + 1))
    entries = []
    for x in range(1, n + 1):
        for y in range(0, n + 1):
            if y != x and rng.random() < 0.6:
                entries.append((x, y, float(rng.uniform(0.05, 2.0))))
    # guarantee some absorption exists somewhere
    entries.append((1, 0, float(rng.uniform(0.1, 1.0))))
    return build_from_entries(entries, n + 1)


def bd_region_chain(spec, z: int, m: int):
    """Window chain for the region z+1..m with absorption at level z.

    Relabels level z+i as window state i, so hitting {<= z} in the full
    chain is absorption in the window.  Assembled through the public
    entry constructor on purpose: oracles built here share no code with
    the series/banded implementations they check.
    """
    entries = []
    n = m - z
    for i in range(1, n + 1):
        up, down = spec.rates_at(z + i)
        if i < n and up > 0:
            entries.append((i, i + 1, up))
        if down > 0:
            entries.append((i, i - 1, down))  # i=1 -> 0 is the absorption
    return build_from_entries(entries, n + 1)


def bd_hitting_oracle(spec, z: int, m: int) -> np.ndarray:
    """E_x(time to reach z) for x = z+1..m via a sparse linear solve."""
    from scipy.sparse.linalg import spsolve

    chain = bd_region_chain(spec, z, m)
    Q = chain.sub_generator.tocsc()
    return spsolve(-Q, np.ones(chain.n_transient))


def bd_moment_oracle(spec, z: int, lam: float, m: int) -> np.ndarray:
    """E_x exp(lam * time to reach z) for x = z+1..m, dense solve."""
    chain = bd_region_chain(spec, z, m)
    Q = chain.sub_generator.toarray()
    n = chain.n_transient
    A = -(Q + lam * np.eye(n))
    return np.linalg.solve(A, chain.absorption_rates)


@pytest.fixture
def tmp_chain_file(tmp_path):
    def write(text: str, name: str = "chain.txt"):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return str(p)

    return write
