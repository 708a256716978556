"""Certified constants for conditional mixing of absorbed chains.

The certificate consists of four constants tied to a core set K and an
anchor state x0 in K:

  c1  floor on the one-step conditional law reaching x0 from anywhere,
  c2  floor on survival-probability ratios inside K, uniform in time,
  c3, lambda0  occupancy floor: P_x0(X_t in K) >= c3 * exp(-lambda0 t),
  c4  ceiling on the exponential moment of the entry time into K (or
      absorption), at rate lambda0, from the worst state.

Together they give the contraction coefficient
gamma = c1*c2*c3 / (2*c4) and the mixing bound 2*(1-gamma)^floor(t) on
the TV distance between any two conditioned laws.  Each constant tracks
whether it is a proved bound for the window (certified) or a numerical
observation (empirical).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .chain import AbsorbedChain
from .engine import (
    SERIES_TOL,
    evolve_function,
    geometric_grid,
    survival_vector,
)
from .errors import (
    CertificationError,
    ComputationError,
    DivergentMomentError,
    ValidationError,
)
from .textio import fmt

CERTIFIED = "certified_bound"
EMPIRICAL = "empirical_estimate"

SOJOURN = "sojourn"
ABSORPTION_RATE = "absorption_rate"
BEST = "best"

# Relative agreement under window doubling required before an estimate
# computed on a finite window is promoted to a certified bound.
_DOUBLING_RTOL = 1e-9


def _check_core(chain: AbsorbedChain, K) -> tuple[int, ...]:
    core = tuple(sorted({int(x) for x in K}))
    if not core:
        raise ValidationError("core set K must be non-empty")
    if core[0] < 1 or core[-1] > chain.n_transient:
        raise ValidationError(
            f"core set {core} must lie inside the transient states 1..{chain.n_transient}"
        )
    return core


def _doubled(chain: AbsorbedChain) -> AbsorbedChain | None:
    if chain.source_spec is None:
        return None
    return chain.regrow(2 * chain.n_transient + 1)


@dataclass
class ConstantEstimate:
    value: float
    provenance: str
    window_limited: bool = False
    attained_at: int | None = None
    failed: bool = False
    failure_reason: str | None = None


@dataclass
class C2Bounds:
    """Survival-ratio floor over K: a proved bound and a grid observation.

    certified = min(hold_floor, step_floor) where hold_floor covers
    t <= 1 (probability of just sitting still) and step_floor covers
    t >= 1 (worst one-step transition probability within K).  The
    observed grid minimum can only be larger.
    """

    certified: float
    empirical: float
    hold_floor: float
    step_floor: float
    t_max: float
    empirical_argmin_t: float


@dataclass
class C3Result:
    c3: float
    lambda0: float
    strategy: str
    provenance: str
    window_limited: bool = False
    failed: bool = False
    failure_reason: str | None = None
    c4: ConstantEstimate | None = None


def compute_c1(chain: AbsorbedChain, x0: int, doubling: bool = True) -> ConstantEstimate:
    """Floor of P_x(X_1 = x0 | alive at 1) over all transient x.

    Empirical on a bare window; promoted to certified (for the window)
    when the value is stable under doubling a parametric window.
    """
    if not 1 <= x0 <= chain.n_transient:
        raise ValidationError(f"x0={x0} outside transient states 1..{chain.n_transient}")

    def floor_on(ch: AbsorbedChain, anchor: int) -> tuple[float, int]:
        e = np.zeros(ch.n_transient)
        e[anchor - 1] = 1.0
        reach = evolve_function(ch, e, 1.0)
        alive = survival_vector(ch, 1.0)
        ratios = reach / alive
        i = int(np.argmin(ratios))
        return float(ratios[i]), i + 1

    value, argmin = floor_on(chain, x0)
    if value <= 0.0:
        return ConstantEstimate(
            value=0.0,
            provenance=EMPIRICAL,
            attained_at=argmin,
            failed=True,
            failure_reason=f"state {argmin} cannot reach {x0} within unit time on this window",
        )
    est = ConstantEstimate(value=value, provenance=EMPIRICAL, attained_at=argmin)
    if doubling:
        big = _doubled(chain)
        if big is not None:
            v2, _ = floor_on(big, x0)
            if abs(v2 - value) <= _DOUBLING_RTOL * max(abs(value), abs(v2)):
                est.provenance = CERTIFIED
                est.window_limited = True
    return est


def compute_c2(
    chain: AbsorbedChain,
    K,
    t_max: float = 20.0,
    grid_ratio: float = 1.5,
) -> C2Bounds:
    """Floor on min/max survival probability across the core K.

    Two proved floors, each uniform in t on its regime: a holding bound
    exp(-max exit rate on K) for t <= 1, and the worst K-to-K one-step
    probability for t >= 1.  The empirical column scans a geometric grid
    and upper-bounds what any certified floor can be.
    """
    core = _check_core(chain, K)
    idx = np.array([x - 1 for x in core])
    if len(core) == 1:
        # a single-state core compares survival only with itself
        return C2Bounds(
            certified=1.0, empirical=1.0, hold_floor=1.0, step_floor=1.0,
            t_max=t_max, empirical_argmin_t=0.0,
        )
    q_max = float(np.max(chain.total_exit_rates()[idx]))
    hold_floor = math.exp(-q_max)

    step_floor = math.inf
    for y in core:
        e = np.zeros(chain.n_transient)
        e[y - 1] = 1.0
        reach = evolve_function(chain, e, 1.0)
        step_floor = min(step_floor, float(np.min(reach[idx])))
    certified = min(hold_floor, step_floor)

    empirical = 1.0
    argmin_t = 0.0
    h = np.ones(chain.n_transient)
    t_cur = 0.0
    for t in geometric_grid(min(0.125, t_max), t_max, grid_ratio):
        h = evolve_function(chain, h, t - t_cur, SERIES_TOL)
        t_cur = t
        hk = h[idx]
        ratio = float(hk.min() / hk.max())
        if ratio < empirical:
            empirical = ratio
            argmin_t = t
    return C2Bounds(
        certified=certified,
        empirical=empirical,
        hold_floor=hold_floor,
        step_floor=step_floor,
        t_max=t_max,
        empirical_argmin_t=argmin_t,
    )


def compute_c4(
    chain: AbsorbedChain,
    K,
    lambda0: float,
    doubling: bool = True,
) -> ConstantEstimate:
    """Ceiling on sup_x E_x exp(lambda0 * (time to hit K or 0)).

    Computed on the reflecting twin of the window by solving the linear
    system the moment satisfies off K.  A singular or sign-violating
    solution means the moment is infinite at this rate and raises
    DivergentMomentError.  Always >= 1; equals 1 when K covers the
    window.
    """
    core = _check_core(chain, K)
    if not (lambda0 > 0 and math.isfinite(lambda0)):
        raise ValidationError(f"lambda0 must be finite and > 0, got {lambda0}")

    def moment_sup(ch: AbsorbedChain) -> tuple[float, int]:
        refl = ch.as_reflecting()
        inside = np.zeros(refl.n_transient, dtype=bool)
        for x in core:
            inside[x - 1] = True
        out_idx = np.nonzero(~inside)[0]
        if out_idx.size == 0:
            return 1.0, core[0]
        Q = refl.sub_generator.tocsr()
        QDD = Q[out_idx][:, out_idx]
        in_idx = np.nonzero(inside)[0]
        into_stop = np.asarray(Q[out_idx][:, in_idx].sum(axis=1)).ravel()
        into_stop = into_stop + refl.absorption_rates[out_idx]
        A = (-(QDD + lambda0 * sparse.eye(out_idx.size, format="csr"))).tocsc()
        try:
            h = spsolve(A, into_stop)
        except Exception as exc:  # singular factorization
            raise DivergentMomentError(
                f"exponential moment diverges at lambda0={lambda0!r}: {exc}"
            ) from None
        h = np.atleast_1d(np.asarray(h, dtype=np.float64))
        scale = max(1.0, float(np.abs(into_stop).max()))
        resid = np.abs(A @ h - into_stop).max()
        if not np.all(np.isfinite(h)) or np.any(h < 1.0 - 1e-9) or resid > 1e-8 * scale * max(1.0, np.abs(h).max()):
            raise DivergentMomentError(
                f"exponential moment diverges at lambda0={lambda0!r} "
                f"(solution leaves the feasible cone; residual {resid:.3e})"
            )
        j = int(np.argmax(h))
        return max(1.0, float(h[j])), int(out_idx[j]) + 1

    value, argmax = moment_sup(chain)
    est = ConstantEstimate(value=value, provenance=EMPIRICAL, attained_at=argmax)
    if doubling:
        big = _doubled(chain)
        if big is not None:
            v2, _ = moment_sup(big)
            if abs(v2 - value) <= _DOUBLING_RTOL * max(abs(value), abs(v2)):
                est.provenance = CERTIFIED
                est.window_limited = True
    return est


def _c3_sojourn(chain: AbsorbedChain, x0: int, core) -> C3Result:
    # Staying put at x0 until time t has probability exp(-q(x0) t), and
    # x0 is in K, so c3 = 1 with lambda0 = q(x0) is exact for the window.
    lam = chain.exit_rate(x0)
    if lam <= 0:
        return C3Result(
            c3=1.0, lambda0=0.0, strategy=SOJOURN, provenance=CERTIFIED,
            failed=True, failure_reason=f"state {x0} has zero exit rate",
        )
    return C3Result(c3=1.0, lambda0=lam, strategy=SOJOURN, provenance=CERTIFIED)


def _c3_absorption_rate(chain: AbsorbedChain, x0: int, core, doubling: bool) -> C3Result:
    # Occupancy of x0 itself decays no faster than the worst per-state
    # killing rate C: for t >= 1 chain through time t-1 and use the
    # one-step floor into x0; for t <= 1 a holding bound caps how large
    # c3 may be.  All pieces are one-step or rate quantities.
    dead_rates = chain.absorption_rates + chain.kill_rates
    C = float(dead_rates.max())
    if C <= 0:
        return C3Result(
            c3=0.0, lambda0=0.0, strategy=ABSORPTION_RATE, provenance=EMPIRICAL,
            failed=True, failure_reason="chain is never absorbed inside the window",
        )

    def floor_on(ch: AbsorbedChain) -> float:
        e = np.zeros(ch.n_transient)
        e[x0 - 1] = 1.0
        reach = evolve_function(ch, e, 1.0)
        return float(reach.min())

    inf_reach = floor_on(chain)
    if inf_reach <= 0:
        return C3Result(
            c3=0.0, lambda0=C, strategy=ABSORPTION_RATE, provenance=EMPIRICAL,
            failed=True,
            failure_reason=f"some window state cannot reach {x0} within unit time",
        )
    guard = math.exp(min(0.0, C - chain.exit_rate(x0)))
    c3 = min(1.0, inf_reach * math.exp(C), guard)
    res = C3Result(c3=c3, lambda0=C, strategy=ABSORPTION_RATE, provenance=EMPIRICAL)
    if doubling:
        big = _doubled(chain)
        if big is not None:
            e2 = np.zeros(big.n_transient)
            e2[x0 - 1] = 1.0
            inf2 = float(evolve_function(big, e2, 1.0).min())
            if abs(inf2 - inf_reach) <= _DOUBLING_RTOL * max(inf_reach, inf2):
                res.provenance = CERTIFIED
                res.window_limited = True
    return res


def compute_c3_lambda0(
    chain: AbsorbedChain,
    x0: int,
    K,
    strategy: str = BEST,
    doubling: bool = True,
) -> C3Result:
    """Occupancy floor P_x0(X_t in K) >= c3 * exp(-lambda0 t) for all t >= 0.

    sojourn: never leave x0 (c3 = 1, lambda0 = exit rate at x0; exact).
    absorption_rate: decay no faster than the worst killing rate C
    (lambda0 = C, c3 from one-step reachability of x0).
    best: evaluate both, solve for c4 at each rate, keep the pair with
    the larger resulting gamma; the matching c4 rides along so callers
    do not recompute it.
    """
    core = _check_core(chain, K)
    if x0 not in core:
        raise ValidationError(f"anchor x0={x0} must belong to the core set {core}")
    if strategy == SOJOURN:
        return _c3_sojourn(chain, x0, core)
    if strategy == ABSORPTION_RATE:
        return _c3_absorption_rate(chain, x0, core, doubling)
    if strategy != BEST:
        raise ValidationError(f"unknown c3 strategy {strategy!r}")

    candidates = []
    for cand in (_c3_sojourn(chain, x0, core), _c3_absorption_rate(chain, x0, core, doubling)):
        if cand.failed or cand.lambda0 <= 0:
            continue
        try:
            cand.c4 = compute_c4(chain, core, cand.lambda0, doubling=doubling)
        except DivergentMomentError:
            continue
        candidates.append(cand)
    if not candidates:
        raise CertificationError(
            "no occupancy-decay strategy yields a finite exponential moment", part="c3"
        )
    # prefer the larger c3/c4 ratio; ties go to the sojourn construction
    candidates.sort(key=lambda r: (r.c3 / r.c4.value, r.strategy == SOJOURN), reverse=True)
    return candidates[0]


@dataclass(frozen=True)
class HypothesisCertificate:
    """Constants certifying conditional mixing on a fixed window.

    bound(t) = 2 * (1 - gamma)^floor(t) dominates the TV distance between
    any two survival-conditioned laws at time t, and the distance of
    either to the quasi-stationary law.
    """

    K: tuple[int, ...]
    x0: int
    c1: float
    c2: float
    c3: float
    c4: float
    lambda0: float
    gamma: float
    c3_strategy: str
    n_states: int
    boundary_mode: str
    provenance: dict = field(default_factory=dict)
    window_limited: bool = True

    def __post_init__(self):
        if not self.K or self.x0 not in self.K:
            raise ValidationError("certificate needs a core set K containing x0")
        for name in ("c1", "c2", "c3"):
            v = getattr(self, name)
            if not (0 < v <= 1 + 1e-12):
                raise ValidationError(f"{name} must lie in (0, 1], got {v}")
        if not (self.c4 >= 1):
            raise ValidationError(f"c4 must be >= 1, got {self.c4}")
        if not (self.lambda0 > 0 and math.isfinite(self.lambda0)):
            raise ValidationError(f"lambda0 must be finite and > 0, got {self.lambda0}")
        expected = self.c1 * self.c2 * self.c3 / (2.0 * self.c4)
        if not math.isclose(self.gamma, expected, rel_tol=1e-12, abs_tol=0.0):
            raise ValidationError(
                f"gamma={self.gamma} inconsistent with its constants (expected {expected})"
            )
        if not (0 < self.gamma <= 0.5):
            raise ValidationError(f"gamma must lie in (0, 1/2], got {self.gamma}")

    def bound(self, t: float) -> float:
        """TV mixing bound 2*(1-gamma)^floor(t); never below 0."""
        if t < 0:
            raise ValidationError(f"time must be >= 0, got {t}")
        return 2.0 * (1.0 - self.gamma) ** math.floor(t)


def assemble_certificate(
    *,
    K,
    x0: int,
    c1: float,
    c2: float,
    c3: float,
    c4: float,
    lambda0: float,
    c3_strategy: str,
    n_states: int,
    boundary_mode: str,
    provenance: dict | None = None,
    window_limited: bool = True,
) -> HypothesisCertificate:
    gamma = c1 * c2 * c3 / (2.0 * c4)
    return HypothesisCertificate(
        K=tuple(sorted(int(x) for x in K)),
        x0=int(x0),
        c1=float(c1),
        c2=float(c2),
        c3=float(c3),
        c4=float(c4),
        lambda0=float(lambda0),
        gamma=gamma,
        c3_strategy=c3_strategy,
        n_states=int(n_states),
        boundary_mode=boundary_mode,
        provenance=dict(provenance or {}),
        window_limited=window_limited,
    )


def certify(
    chain: AbsorbedChain,
    K,
    x0: int,
    c3_strategy: str = BEST,
    t_max: float = 20.0,
    doubling: bool = True,
) -> HypothesisCertificate:
    """Assemble the full certificate for (chain, K, x0) or raise naming
    the first constant that cannot be established."""
    core = _check_core(chain, K)
    if x0 not in core:
        raise ValidationError(f"anchor x0={x0} must belong to the core set {core}")

    c1e = compute_c1(chain, x0, doubling=doubling)
    if c1e.failed or c1e.value <= 0:
        raise CertificationError(
            f"c1 floor vanishes: {c1e.failure_reason or 'no positive floor'}", part="c1"
        )
    c2b = compute_c2(chain, core, t_max=t_max)
    if not c2b.certified > 0:
        raise CertificationError("c2 certified floor vanishes on K", part="c2")
    c3r = compute_c3_lambda0(chain, x0, core, strategy=c3_strategy, doubling=doubling)
    if c3r.failed or not c3r.c3 > 0:
        raise CertificationError(
            f"c3 occupancy floor failed: {c3r.failure_reason or 'zero floor'}", part="c3"
        )
    if c3r.c4 is not None:
        c4e = c3r.c4
    else:
        try:
            c4e = compute_c4(chain, core, c3r.lambda0, doubling=doubling)
        except DivergentMomentError as exc:
            raise CertificationError(str(exc), part="c4") from exc

    return assemble_certificate(
        K=core,
        x0=x0,
        c1=c1e.value,
        c2=c2b.certified,
        c3=c3r.c3,
        c4=c4e.value,
        lambda0=c3r.lambda0,
        c3_strategy=c3r.strategy,
        n_states=chain.n_states,
        boundary_mode=chain.boundary_mode,
        provenance={
            "c1": c1e.provenance,
            "c2": CERTIFIED,
            "c3": c3r.provenance,
            "c4": c4e.provenance,
        },
        window_limited=True,
    )


def check_ratio_inequality(
    chain: AbsorbedChain,
    certificate: HypothesisCertificate,
    t_grid,
) -> tuple[bool, float]:
    """Verify P_x0(alive at t) >= (c2*c3/(2*c4)) * sup_x P_x(alive at t).

    Returns (holds with slack -1e-9, smallest margin over the grid).
    The margin is measured relative to the surviving scale,
    (h(x0) - kappa * max h) / max h, so it stays meaningful at large t
    where all survival probabilities decay together; an absolute margin
    would go vacuously to zero there.
    """
    kappa = certificate.c2 * certificate.c3 / (2.0 * certificate.c4)
    x0 = certificate.x0
    if not 1 <= x0 <= chain.n_transient:
        raise ValidationError(f"certificate anchor {x0} outside this window")
    ts = sorted(float(t) for t in t_grid)
    if any(t < 0 for t in ts):
        raise ValidationError("grid times must be >= 0")
    h = np.ones(chain.n_transient)
    t_cur = 0.0
    worst = math.inf
    for t in ts:
        h = evolve_function(chain, h, t - t_cur, SERIES_TOL)
        t_cur = t
        hmax = float(h.max())
        if hmax < 1e-300:
            raise ComputationError(
                f"survival mass underflowed at t={t}; shorten the grid for this window"
            )
        margin = float(h[x0 - 1] - kappa * hmax) / hmax
        worst = min(worst, margin)
    return worst >= -1e-9, worst


# -- plain-text serialization -------------------------------------------------


def certificate_to_text(cert: HypothesisCertificate) -> str:
    lines = [
        "quasistat certificate v1",
        f"n_states = {cert.n_states}",
        f"boundary = {cert.boundary_mode}",
        f"K = {','.join(str(x) for x in cert.K)}",
        f"x0 = {cert.x0}",
        f"c1 = {fmt(cert.c1)}",
        f"c2 = {fmt(cert.c2)}",
        f"c3 = {fmt(cert.c3)}",
        f"c4 = {fmt(cert.c4)}",
        f"lambda0 = {fmt(cert.lambda0)}",
        f"gamma = {fmt(cert.gamma)}",
        f"c3_strategy = {cert.c3_strategy}",
        f"window_limited = {'yes' if cert.window_limited else 'no'}",
    ]
    for name in ("c1", "c2", "c3", "c4"):
        if name in cert.provenance:
            lines.append(f"provenance_{name} = {cert.provenance[name]}")
    return "\n".join(lines) + "\n"


def parse_certificate_text(text: str) -> HypothesisCertificate:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "quasistat certificate v1":
        raise ValidationError("not a quasistat certificate (missing header)")
    kv = {}
    for ln in lines[1:]:
        if "=" not in ln:
            raise ValidationError(f"bad certificate line: {ln!r}")
        k, v = ln.split("=", 1)
        kv[k.strip()] = v.strip()
    try:
        prov = {
            name: kv[f"provenance_{name}"]
            for name in ("c1", "c2", "c3", "c4")
            if f"provenance_{name}" in kv
        }
        return HypothesisCertificate(
            K=tuple(int(x) for x in kv["K"].split(",")),
            x0=int(kv["x0"]),
            c1=float(kv["c1"]),
            c2=float(kv["c2"]),
            c3=float(kv["c3"]),
            c4=float(kv["c4"]),
            lambda0=float(kv["lambda0"]),
            gamma=float(kv["gamma"]),
            c3_strategy=kv.get("c3_strategy", BEST),
            n_states=int(kv["n_states"]),
            boundary_mode=kv.get("boundary", "reflect"),
            provenance=prov,
            window_limited=kv.get("window_limited", "yes") == "yes",
        )
    except KeyError as missing:
        raise ValidationError(f"certificate missing field {missing}") from None
