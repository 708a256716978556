"""Exact transient analysis of absorbed chains via uniformization.

All evolution under the sub-generator is computed as a Poisson-weighted
power series of the uniformized sub-stochastic step M = I + Q/L, with L
the largest exit rate.  The series is truncated when the remaining
Poisson tail mass drops below ``series_tol``; every term of M is
non-negative, so the truncation error in any computed vector is bounded
by series_tol times its input mass.  No matrix exponentials are formed.

Measures (row vectors) and functions (column vectors) evolve through the
same series; measures push forward, functions pull back.  Conditioning
on survival is always a final normalization step, never baked into the
operator, so unnormalized survival mass stays available to callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.stats import poisson

from .chain import REFLECT, AbsorbedChain, BirthDeathSpec, DistributionOnStates, truncate
from .errors import ComputationError, NonConvergenceError, ValidationError
from .textio import fmt, write_csv

SERIES_TOL = 1e-13

# Below this size a dense operator is faster than CSR matvecs.
_DENSE_CUTOFF = 64

# Unnormalized mass below this is treated as a numerically null event.
_NULL_MASS = 1e-300


class _Uniformized:
    """Cached uniformized step for one chain: L, M (function side), M^T."""

    __slots__ = ("lam", "func_op", "meas_op", "dense")

    def __init__(self, chain: AbsorbedChain):
        self.lam = chain.uniformization_rate()
        n = chain.n_transient
        lam = self.lam if self.lam > 0 else 1.0
        M = sparse.eye(n, format="csr") + chain.sub_generator / lam
        self.dense = n < _DENSE_CUTOFF
        if self.dense:
            Md = M.toarray()
            self.func_op = Md
            self.meas_op = Md.T.copy()
        else:
            self.func_op = M.tocsr()
            self.meas_op = M.T.tocsr()

    def step_measure(self, v: np.ndarray) -> np.ndarray:
        return self.meas_op @ v

    def step_function(self, u: np.ndarray) -> np.ndarray:
        return self.func_op @ u


def _uniformized(chain: AbsorbedChain) -> _Uniformized:
    op = chain._cache.get("uniformized")
    if op is None:
        op = _Uniformized(chain)
        chain._cache["uniformized"] = op
    return op


def _poisson_weights(mu: float, series_tol: float) -> np.ndarray:
    """Poisson(mu) pmf from 0 up to the point where the tail < series_tol."""
    if not 0 < series_tol < 1:
        raise ValidationError(f"series_tol must lie in (0, 1), got {series_tol}")
    kmax = int(poisson.isf(series_tol, mu)) + 1
    return poisson.pmf(np.arange(kmax + 1), mu)


def _evolve(chain: AbsorbedChain, vec: np.ndarray, t: float, series_tol: float, side: str) -> np.ndarray:
    if t < 0 or not math.isfinite(t):
        raise ValidationError(f"time must be finite and >= 0, got {t}")
    v = np.asarray(vec, dtype=np.float64)
    if v.shape != (chain.n_transient,):
        raise ValidationError(
            f"vector length {v.shape} does not match the {chain.n_transient} transient states"
        )
    op = _uniformized(chain)
    mu = op.lam * t
    if mu == 0.0:
        return v.copy()
    w = _poisson_weights(mu, series_tol)
    step = op.step_measure if side == "measure" else op.step_function
    out = w[0] * v
    vk = v
    for k in range(1, w.size):
        vk = step(vk)
        wk = w[k]
        if wk > 0.0:
            out = out + wk * vk
    return out


def evolve_measure(chain: AbsorbedChain, v, t: float, series_tol: float = SERIES_TOL) -> np.ndarray:
    """Push a (possibly unnormalized) mass vector forward for time t."""
    return _evolve(chain, v, t, series_tol, "measure")


def evolve_function(chain: AbsorbedChain, u, t: float, series_tol: float = SERIES_TOL) -> np.ndarray:
    """Pull a function on transient states back for time t."""
    return _evolve(chain, u, t, series_tol, "function")


def _as_weights(chain: AbsorbedChain, mu) -> np.ndarray:
    if isinstance(mu, DistributionOnStates):
        if mu.n_states != chain.n_states:
            raise ValidationError(
                f"distribution lives on {mu.n_states} states but chain has {chain.n_states}"
            )
        return mu.weights
    return np.asarray(mu, dtype=np.float64)


# -- public evolution API --------------------------------------------------


def transition_operator(chain: AbsorbedChain, mu, t: float, series_tol: float = SERIES_TOL) -> np.ndarray:
    """Unnormalized sub-probability vector: mass still alive per state at t.

    The total of the returned vector is the survival probability of the
    input law; it is strictly less than 1 for t > 0 whenever absorption
    is reachable.
    """
    return evolve_measure(chain, _as_weights(chain, mu), t, series_tol)


def survival_vector(chain: AbsorbedChain, t: float, series_tol: float = SERIES_TOL) -> np.ndarray:
    """P_x(T_0 and top-kill both after t) for every transient x."""
    ones = np.ones(chain.n_transient)
    return evolve_function(chain, ones, t, series_tol)


def survival_probability(chain: AbsorbedChain, x: int, t: float, series_tol: float = SERIES_TOL) -> float:
    if not 1 <= x <= chain.n_transient:
        raise ValidationError(f"state {x} outside transient range 1..{chain.n_transient}")
    return float(survival_vector(chain, t, series_tol)[x - 1])


def tv_distance(mu, nu) -> float:
    """Total variation as the full L1 difference, in [0, 2]."""
    a = mu.weights if isinstance(mu, DistributionOnStates) else np.asarray(mu, dtype=np.float64)
    b = nu.weights if isinstance(nu, DistributionOnStates) else np.asarray(nu, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"distributions live on different windows: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


def _normalize_mass(v: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    total = float(v.sum())
    if not math.isfinite(total) or total < _NULL_MASS:
        raise ComputationError(
            f"{what}: surviving mass {total:.3e} is numerically null; "
            f"the conditioning event is too rare for this window or horizon"
        )
    return v / total, total


def conditional_distribution(
    chain: AbsorbedChain, mu, t: float, series_tol: float = SERIES_TOL
) -> DistributionOnStates:
    """Law at time t conditioned on not yet being absorbed (nor killed)."""
    v = transition_operator(chain, mu, t, series_tol)
    law, _ = _normalize_mass(v, f"conditional law at t={t}")
    return DistributionOnStates(law, _skip_checks=True)


def conditional_propagator(
    chain: AbsorbedChain,
    mu,
    s: float,
    t: float,
    horizon: float,
    series_tol: float = SERIES_TOL,
) -> DistributionOnStates:
    """Propagate a time-s law to time t under conditioning on survival
    up to the fixed later horizon.

    This is the linear action on measures obtained by tilting with the
    survival function of the remaining time: weight the input by
    1/P(survive horizon - s), run the unconditioned dynamics for t - s,
    then weight by P(survive horizon - t) and normalize.  Composing the
    map over [s, u] with the map over [u, t] reproduces the map over
    [s, t] exactly; at s == t it returns the input law unchanged.
    """
    if not (0 <= s <= t <= horizon) or not math.isfinite(horizon):
        raise ValidationError(
            f"need 0 <= s <= t <= horizon finite, got s={s}, t={t}, horizon={horizon}"
        )
    w = _as_weights(chain, mu).copy()
    ones = np.ones(chain.n_transient)
    h_after_t = evolve_function(chain, ones, horizon - t, series_tol)
    # survival from time s = survival from t pulled back another t - s;
    # both are only needed up to scale, so renormalize to dodge underflow
    m = float(h_after_t.max())
    if m < _NULL_MASS:
        raise ComputationError("survival to the horizon is numerically null from every state")
    h_after_t = h_after_t / m
    h_after_s = evolve_function(chain, h_after_t, t - s, series_tol)

    alive = w > 0
    if np.any(alive & (h_after_s < _NULL_MASS)):
        raise ComputationError(
            "input law charges states that cannot survive to the horizon; "
            "conditioning event is null"
        )
    tilted = np.zeros_like(w)
    tilted[alive] = w[alive] / h_after_s[alive]
    moved = evolve_measure(chain, tilted, t - s, series_tol)
    out = moved * h_after_t
    law, _ = _normalize_mass(out, f"conditioned propagation to t={t} under horizon {horizon}")
    return DistributionOnStates(law, _skip_checks=True)


# -- quasi-stationary distribution ------------------------------------------


@dataclass
class ConvergenceTrace:
    """Times and total-variation gaps recorded during an iteration."""

    times: np.ndarray
    tv_to_limit: np.ndarray
    tv_between_pair: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.tv_to_limit = np.asarray(self.tv_to_limit, dtype=np.float64)
        if self.times.shape != self.tv_to_limit.shape:
            raise ValidationError("trace arrays must have matching lengths")
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError("trace times must be strictly increasing")
        if np.any(self.tv_to_limit < 0) or np.any(self.tv_to_limit > 2 + 1e-12):
            raise ValidationError("TV values must lie in [0, 2]")
        if self.tv_between_pair is not None:
            self.tv_between_pair = np.asarray(self.tv_between_pair, dtype=np.float64)
            if self.tv_between_pair.shape != self.times.shape:
                raise ValidationError("trace arrays must have matching lengths")


@dataclass
class QsdResult:
    """Quasi-stationary law of a window plus its absorption spectrum.

    decay_rate is the total loss rate under the QSD (absorption into 0
    plus any truncation killing); for reflecting windows it equals
    absorption_rate.  eigen_residual is the max-norm defect of the
    left-eigenvector identity rho Q = -decay_rate * rho.
    """

    qsd: DistributionOnStates
    absorption_rate: float
    kill_rate: float
    decay_rate: float
    eigen_residual: float
    iterations: int
    truncation_n: int
    top_mass: float
    chain: AbsorbedChain = field(repr=False)


def _require_irreducible(chain: AbsorbedChain) -> None:
    n = chain.n_transient
    if n == 1:
        return
    ncomp, _ = connected_components(chain.sub_generator, directed=True, connection="strong")
    if ncomp != 1:
        raise ValidationError(
            f"transient states are not strongly connected ({ncomp} classes); "
            f"the quasi-stationary law is not unique on this window"
        )


def compute_qsd(
    chain: AbsorbedChain,
    tol: float = 1e-12,
    max_iters: int = 100000,
    step: float = 1.0,
    series_tol: float = SERIES_TOL,
) -> QsdResult:
    """Power iteration of the conditioned unit-time step from uniform.

    Stops when the TV increment between successive normalized iterates
    falls below tol; raises NonConvergenceError carrying the increment
    history otherwise.
    """
    if tol <= 0:
        raise ValidationError("tol must be > 0")
    if step <= 0:
        raise ValidationError("step must be > 0")
    _require_irreducible(chain)
    v = np.full(chain.n_transient, 1.0 / chain.n_transient)
    times, incs = [], []
    converged = False
    its = 0
    for k in range(1, max_iters + 1):
        raw = evolve_measure(chain, v, step, series_tol)
        w, _ = _normalize_mass(raw, "QSD power iteration")
        inc = float(np.abs(w - v).sum())
        v = w
        times.append(k * step)
        incs.append(inc)
        its = k
        if inc < tol and k >= 3:
            converged = True
            break
    if not converged:
        raise NonConvergenceError(
            f"QSD iteration did not reach tol={tol} in {max_iters} steps "
            f"(last increment {incs[-1]:.3e})",
            trace=ConvergenceTrace(np.array(times), np.array(incs)),
        )
    rho = v
    absorb = float(rho @ chain.absorption_rates)
    kill = float(rho @ chain.kill_rates)
    decay = absorb + kill
    resid = chain.sub_generator.T @ rho + decay * rho
    return QsdResult(
        qsd=DistributionOnStates(rho, _skip_checks=True),
        absorption_rate=absorb,
        kill_rate=kill,
        decay_rate=decay,
        eigen_residual=float(np.abs(resid).max()),
        iterations=its,
        truncation_n=chain.n_states,
        top_mass=float(rho[-1]),
        chain=chain,
    )


def check_qsd(chain: AbsorbedChain, rho, t_grid, tol: float) -> tuple[bool, float]:
    """Verify the fixed-point property of a candidate QSD on a time grid.

    Returns (all within tol, worst TV deviation).  Evolution along the
    grid is incremental, so later grid points reuse earlier work.
    """
    w = _as_weights(chain, rho)
    ts = sorted(float(t) for t in t_grid)
    if any(t < 0 for t in ts):
        raise ValidationError("grid times must be >= 0")
    worst = 0.0
    cur = w.copy()
    t_cur = 0.0
    for t in ts:
        cur = evolve_measure(chain, cur, t - t_cur, SERIES_TOL)
        cur, _ = _normalize_mass(cur, f"conditional law at t={t}")
        t_cur = t
        worst = max(worst, float(np.abs(cur - w).sum()))
    return worst < tol, worst


def compute_qsd_auto(
    source,
    tol: float = 1e-10,
    boundary_mode: str = REFLECT,
    n_start: int = 32,
    n_max: int = 16384,
    qsd_tol: float | None = None,
) -> QsdResult:
    """Grow the window until the computed QSD stops moving in TV.

    The window size doubles from n_start; two consecutive windows whose
    QSDs differ by less than tol (smaller embedded into larger) end the
    search.  The result on the larger window is returned.
    """
    if isinstance(source, AbsorbedChain):
        if source.source_spec is None:
            raise ValidationError("automatic window sizing needs a parametric chain")
        spec = source.source_spec
    elif isinstance(source, BirthDeathSpec):
        spec = source
    else:
        raise ValidationError(f"cannot auto-size a window for {type(source).__name__}")
    inner_tol = qsd_tol if qsd_tol is not None else min(tol * 1e-2, 1e-12)
    n = max(4, n_start)
    prev = compute_qsd(truncate(spec, n, boundary_mode), tol=inner_tol)
    gap = math.inf
    while n * 2 <= n_max:
        n *= 2
        cur = compute_qsd(truncate(spec, n, boundary_mode), tol=inner_tol)
        gap = tv_distance(prev.qsd.embed(cur.qsd.n_states), cur.qsd)
        if gap < tol:
            return cur
        prev = cur
    raise NonConvergenceError(
        f"QSD did not stabilize below window size {n_max} (last change {gap:.3e})"
    )


# -- long-time conditioned behaviour ----------------------------------------


def yaglom_limit(
    chain: AbsorbedChain,
    mu,
    tol: float = 1e-10,
    t0: float = 1.0,
    ratio: float = 2.0,
    max_steps: int = 200,
    crosscheck: bool = True,
) -> tuple[DistributionOnStates, ConvergenceTrace]:
    """Limit of the conditional law from mu along a geometric time grid.

    Convergence is declared when the TV step between consecutive grid
    points falls below tol twice in a row.  The limit is cross-checked
    against the power-iteration QSD of the same window; disagreement
    points at a window too small for the starting law and raises.
    """
    if ratio <= 1:
        raise ValidationError("grid ratio must exceed 1")
    w = _as_weights(chain, mu)
    cur = w / w.sum()
    t_cur = 0.0
    times, laws = [], []
    small_streak = 0
    prev = cur
    t = t0
    for _ in range(max_steps):
        cur = evolve_measure(chain, cur, t - t_cur, SERIES_TOL)
        cur, _ = _normalize_mass(cur, f"conditional law at t={t}")
        t_cur = t
        times.append(t)
        laws.append(cur)
        inc = float(np.abs(cur - prev).sum())
        prev = cur
        small_streak = small_streak + 1 if inc < tol else 0
        if small_streak >= 2:
            break
        t *= ratio
    else:
        raise NonConvergenceError(
            f"conditional law still moving after {max_steps} geometric steps",
            trace=ConvergenceTrace(
                np.array(times), np.abs(np.array(laws) - cur).sum(axis=1)
            ),
        )
    limit = laws[-1]
    trace = ConvergenceTrace(
        times=np.array(times),
        tv_to_limit=np.abs(np.array(laws) - limit).sum(axis=1),
    )
    if crosscheck:
        try:
            ref = compute_qsd(chain, tol=min(tol, 1e-10))
        except ValidationError:
            ref = None  # reducible window: no unique QSD to compare against
        if ref is not None:
            gap = tv_distance(limit, ref.qsd.weights)
            if gap > 10 * tol:
                raise ComputationError(
                    f"long-time conditional law disagrees with the QSD by TV {gap:.3e}; "
                    f"the window (n_states={chain.n_states}) is likely too small"
                )
    return DistributionOnStates(limit, _skip_checks=True), trace


# -- decay tables ------------------------------------------------------------


@dataclass
class DecayRow:
    t: float
    tv_mu_to_qsd: float
    tv_nu_to_qsd: float
    tv_pair: float
    certified_bound: float  # nan when no certificate was supplied


def decay_table(
    chain: AbsorbedChain,
    mu,
    nu,
    t_grid,
    certificate=None,
    rho: DistributionOnStates | None = None,
) -> list[DecayRow]:
    """Tabulate conditional-law TV gaps (to the QSD and pairwise) over time.

    certificate, when given, must expose .bound(t); its value lands in
    the last column so tables are directly checkable against the bound.
    """
    ts = sorted(float(t) for t in t_grid)
    if any(t < 0 for t in ts):
        raise ValidationError("grid times must be >= 0")
    if rho is None:
        rho = compute_qsd(chain).qsd
    r = _as_weights(chain, rho)
    a = _as_weights(chain, mu).copy()
    b = _as_weights(chain, nu).copy()
    a = a / a.sum()
    b = b / b.sum()
    rows = []
    t_cur = 0.0
    for t in ts:
        dt = t - t_cur
        a = evolve_measure(chain, a, dt, SERIES_TOL)
        b = evolve_measure(chain, b, dt, SERIES_TOL)
        a, _ = _normalize_mass(a, f"conditional law at t={t}")
        b, _ = _normalize_mass(b, f"conditional law at t={t}")
        t_cur = t
        rows.append(
            DecayRow(
                t=t,
                tv_mu_to_qsd=float(np.abs(a - r).sum()),
                tv_nu_to_qsd=float(np.abs(b - r).sum()),
                tv_pair=float(np.abs(a - b).sum()),
                certified_bound=float(certificate.bound(t)) if certificate is not None else math.nan,
            )
        )
    return rows


def geometric_grid(t_min: float, t_max: float, ratio: float = 1.5) -> list[float]:
    """Strictly increasing geometric times from t_min up to and incl. t_max."""
    if not (0 < t_min <= t_max) or ratio <= 1:
        raise ValidationError("need 0 < t_min <= t_max and ratio > 1")
    ts = []
    t = t_min
    while t < t_max:
        ts.append(t)
        t *= ratio
    ts.append(t_max)
    return ts


# -- text output -------------------------------------------------------------


def distribution_to_csv(dist, target) -> None:
    w = dist.weights if isinstance(dist, DistributionOnStates) else np.asarray(dist)
    rows = ([str(i + 1), fmt(x)] for i, x in enumerate(w))
    write_csv(target, ["state", "weight"], rows)


def decay_to_csv(rows: list[DecayRow], target) -> None:
    write_csv(
        target,
        ["t", "tv_mu_to_qsd", "tv_nu_to_qsd", "tv_pair", "certified_bound"],
        (
            [fmt(r.t), fmt(r.tv_mu_to_qsd), fmt(r.tv_nu_to_qsd), fmt(r.tv_pair), fmt(r.certified_bound)]
            for r in rows
        ),
    )
