"""Rate-matrix sufficient conditions for conditional mixing.

Two checkable conditions on the jump rates alone:

  * core-return test: the worst rate of jumping from outside a finite
    core K directly into K or to absorption, alpha_K, must exceed the
    best absorption rate C = sup_x Q(x, 0).  When it does, lambda0 = C
    works with the closed-form moment ceiling c4 <= alpha_K/(alpha_K-C).
  * uniform-rates test: bounded total jump rates plus a summable column
    floor alpha = sum_x inf_y Q(y, x) > C.  This implies the core-return
    test holds for some prefix core {1..k}.

Both are evaluated on the reflecting twin of the window so truncation
killing never masquerades as absorption.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .chain import AbsorbedChain
from .certify import (
    ABSORPTION_RATE,
    CERTIFIED,
    HypothesisCertificate,
    _c3_absorption_rate,
    assemble_certificate,
    compute_c1,
    compute_c2,
)
from .errors import CertificationError, ValidationError
from .textio import fmt, render_keyvalues


@dataclass
class CriterionReport:
    """Everything the rate tests looked at, plus their verdicts.

    alpha_K, c4_bound, lambda0 are None when no core was supplied or
    found.  q_bar is +inf for chains whose jump rates grow without bound
    (detected from the generating rule when one is attached).
    """

    n_states: int
    boundary_mode: str
    C: float
    C_attained_at: int
    q_bar: float
    alpha_uniform: float
    uniform_rates_holds: bool
    K: tuple[int, ...] | None = None
    alpha_K: float | None = None
    alpha_attained_at: int | None = None
    core_return_holds: bool | None = None
    c4_bound: float | None = None
    lambda0: float | None = None
    notes: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        pairs = [
            ("n_states", str(self.n_states)),
            ("boundary", self.boundary_mode),
            ("C", fmt(self.C)),
            ("C_attained_at", str(self.C_attained_at)),
            ("q_bar", fmt(self.q_bar)),
            ("alpha_uniform", fmt(self.alpha_uniform)),
            ("uniform_rates_test", "holds" if self.uniform_rates_holds else "fails"),
        ]
        if self.K is not None:
            pairs.append(("K", ",".join(str(x) for x in self.K)))
            pairs.append(("alpha_K", fmt(self.alpha_K)))
            pairs.append(("alpha_attained_at", str(self.alpha_attained_at)))
            pairs.append(("core_return_test", "holds" if self.core_return_holds else "fails"))
            if self.core_return_holds:
                pairs.append(("lambda0", fmt(self.lambda0)))
                pairs.append(("c4_bound", fmt(self.c4_bound)))
        for i, n in enumerate(self.notes):
            pairs.append((f"note_{i + 1}", n))
        return render_keyvalues(pairs)


def _reflect(chain: AbsorbedChain) -> AbsorbedChain:
    return chain.as_reflecting()


def compute_absorption_sup(chain: AbsorbedChain) -> tuple[float, int]:
    """C = sup_x Q(x, 0) over the window, with its argmax."""
    i = int(np.argmax(chain.absorption_rates))
    return float(chain.absorption_rates[i]), i + 1


def compute_q_bar(chain: AbsorbedChain) -> tuple[float, int | None, list[str]]:
    """Supremum of total jump rates; +inf when the generating rule keeps
    growing past the window."""
    refl = _reflect(chain)
    rates = refl.total_exit_rates().copy()
    # the reflected top row under-counts its true exit rate
    spec = chain.source_spec
    notes: list[str] = []
    if spec is not None:
        n = chain.n_transient
        probe_near = sum(spec.rates_at(n))
        probe_far = sum(spec.rates_at(4 * n))
        if probe_far > probe_near * (1 + 1e-12) or probe_far > float(rates.max()):
            notes.append("jump rates grow beyond the window; q_bar is infinite")
            return math.inf, None, notes
        rates[n - 1] = probe_near
    i = int(np.argmax(rates))
    return float(rates[i]), i + 1, notes


def compute_alpha_uniform(chain: AbsorbedChain) -> float:
    """alpha = sum over target states of the worst-case rate into them.

    Columns are taken over the reflecting window, target 0 included.
    A single state with no inbound rate from some source zeroes its
    column's contribution, so for most sparse chains this is small.
    """
    refl = _reflect(chain)
    n = refl.n_transient
    if n < 2:
        return float(refl.absorption_rates.min())
    Q = refl.sub_generator.toarray()
    total = float(refl.absorption_rates.min())
    for col in range(n):
        rates = Q[:, col].copy()
        rates[col] = math.inf  # skip the diagonal: inf over y != x
        total += float(rates.min())
    return total


def compute_alpha_K(chain: AbsorbedChain, K) -> tuple[float, int | None, list[str]]:
    """Worst rate of entering K u {0} in one jump from outside K.

    Returns +inf (vacuously) when K covers all transient states.  A note
    is attached when the window has a generating rule, because states
    beyond the window are not probed.
    """
    core = tuple(sorted({int(x) for x in K}))
    if not core or core[0] < 1 or core[-1] > chain.n_transient:
        raise ValidationError(
            f"core set {core} must be non-empty inside 1..{chain.n_transient}"
        )
    refl = _reflect(chain)
    inside = np.zeros(refl.n_transient, dtype=bool)
    for x in core:
        inside[x - 1] = True
    out_idx = np.nonzero(~inside)[0]
    notes: list[str] = []
    if chain.source_spec is not None:
        notes.append("alpha_K probed on the window only; beyond-window states not included")
    if out_idx.size == 0:
        notes.append("K covers every transient state; alpha_K is vacuous")
        return math.inf, None, notes
    Q = refl.sub_generator.tocsr()
    in_idx = np.nonzero(inside)[0]
    into_core = np.asarray(Q[out_idx][:, in_idx].sum(axis=1)).ravel()
    into_core = into_core + refl.absorption_rates[out_idx]
    j = int(np.argmin(into_core))
    value = float(into_core[j])
    at = int(out_idx[j]) + 1
    if at == refl.n_transient:
        notes.append("alpha_K attained at the window top; value is window-limited")
    return value, at, notes


def check_core_return(chain: AbsorbedChain, K) -> CriterionReport:
    """Evaluate the core-return test alpha_K > C for a given core."""
    C, c_at = compute_absorption_sup(chain)
    q_bar, _, q_notes = compute_q_bar(chain)
    alpha_uniform = compute_alpha_uniform(chain)
    alpha_K, a_at, notes = compute_alpha_K(chain, K)
    holds = alpha_K > C
    rep = CriterionReport(
        n_states=chain.n_states,
        boundary_mode=chain.boundary_mode,
        C=C,
        C_attained_at=c_at,
        q_bar=q_bar,
        alpha_uniform=alpha_uniform,
        uniform_rates_holds=bool(math.isfinite(q_bar) and alpha_uniform > C),
        K=tuple(sorted({int(x) for x in K})),
        alpha_K=alpha_K,
        alpha_attained_at=a_at,
        core_return_holds=holds,
        notes=q_notes + notes,
    )
    if holds and math.isfinite(alpha_K):
        rep.lambda0 = C
        rep.c4_bound = alpha_K / (alpha_K - C)
    elif holds:
        rep.lambda0 = C
        rep.c4_bound = 1.0
        rep.notes.append("alpha_K infinite (vacuous); c4 bound degenerates to 1")
    return rep


def check_uniform_rates(chain: AbsorbedChain) -> CriterionReport:
    """Evaluate the uniform-rates test (bounded rates, column floor > C).

    When it holds, a prefix core satisfying the core-return test is
    attached, serving as a constructive witness of the implication.
    """
    C, c_at = compute_absorption_sup(chain)
    q_bar, _, q_notes = compute_q_bar(chain)
    alpha_uniform = compute_alpha_uniform(chain)
    holds = bool(math.isfinite(q_bar) and alpha_uniform > C)
    rep = CriterionReport(
        n_states=chain.n_states,
        boundary_mode=chain.boundary_mode,
        C=C,
        C_attained_at=c_at,
        q_bar=q_bar,
        alpha_uniform=alpha_uniform,
        uniform_rates_holds=holds,
        notes=q_notes,
    )
    if holds:
        K = find_minimal_core(chain)
        if K is None:
            rep.notes.append(
                "uniform-rates test holds but no prefix core passes on this window"
            )
        else:
            sub = check_core_return(chain, K)
            rep.K = K
            rep.alpha_K = sub.alpha_K
            rep.alpha_attained_at = sub.alpha_attained_at
            rep.core_return_holds = sub.core_return_holds
            rep.lambda0 = sub.lambda0
            rep.c4_bound = sub.c4_bound
            rep.notes.extend(n for n in sub.notes if n not in rep.notes)
    return rep


def find_minimal_core(chain: AbsorbedChain, k_max: int | None = None) -> tuple[int, ...] | None:
    """Smallest prefix {1..k} passing the core-return test, else None.

    Only prefixes are scanned; chains whose inbound mass concentrates on
    high states may pass with some non-prefix core yet fail here.
    """
    C, _ = compute_absorption_sup(chain)
    top = chain.n_transient - 1 if k_max is None else min(k_max, chain.n_transient - 1)
    for k in range(1, top + 1):
        alpha, _, _ = compute_alpha_K(chain, range(1, k + 1))
        if alpha > C:
            return tuple(range(1, k + 1))
    return None


def derive_certificate_via_criterion(
    chain: AbsorbedChain,
    K,
    x0: int,
    t_max: float = 20.0,
    doubling: bool = True,
) -> HypothesisCertificate:
    """Assemble a mixing certificate whose c4 comes from the closed-form
    rate bound alpha_K/(alpha_K - C) instead of a linear solve.

    lambda0 is pinned to C by the construction, so the occupancy floor
    uses the killing-rate route rather than the sojourn one.
    """
    if np.any(chain.kill_rates):
        raise ValidationError(
            "criterion certificates apply to reflecting windows; pass chain.as_reflecting()"
        )
    rep = check_core_return(chain, K)
    if not rep.core_return_holds:
        raise CertificationError(
            f"core-return test fails: alpha_K={rep.alpha_K} vs C={rep.C}", part="criterion"
        )
    if not rep.C > 0:
        raise CertificationError(
            "absorption rate sup C is zero; no decay rate available", part="criterion"
        )
    core = rep.K
    c1e = compute_c1(chain, x0, doubling=doubling)
    if c1e.failed or c1e.value <= 0:
        raise CertificationError("c1 floor vanishes under the criterion route", part="c1")
    c2b = compute_c2(chain, core, t_max=t_max)
    if not c2b.certified > 0:
        raise CertificationError("c2 certified floor vanishes on K", part="c2")
    c3r = _c3_absorption_rate(chain, x0, core, doubling)
    if c3r.failed or not c3r.c3 > 0:
        raise CertificationError(
            f"c3 occupancy floor failed: {c3r.failure_reason or 'zero floor'}", part="c3"
        )
    if abs(c3r.lambda0 - rep.C) > 1e-12 * max(1.0, rep.C):
        raise CertificationError(
            "internal inconsistency: occupancy decay rate differs from C", part="c3"
        )
    return assemble_certificate(
        K=core,
        x0=x0,
        c1=c1e.value,
        c2=c2b.certified,
        c3=c3r.c3,
        c4=rep.c4_bound,
        lambda0=rep.C,
        c3_strategy=ABSORPTION_RATE,
        n_states=chain.n_states,
        boundary_mode=chain.boundary_mode,
        provenance={
            "c1": c1e.provenance,
            "c2": CERTIFIED,
            "c3": c3r.provenance,
            "c4": CERTIFIED,
        },
        window_limited=True,
    )
