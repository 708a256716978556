import math

import pytest

from quasistat import (
    CertificationError,
    ValidationError,
    build_from_entries,
    build_logistic,
    check_core_return,
    check_ratio_inequality,
    check_uniform_rates,
    compute_absorption_sup,
    compute_alpha_K,
    compute_alpha_uniform,
    compute_c4,
    compute_q_bar,
    derive_certificate_via_criterion,
    find_minimal_core,
    geometric_grid,
)

from conftest import (
    alternating_catastrophe_chain,
    catastrophe_chain,
    high_column_chain,
    random_return_chain,
)


# -- rate functionals -----------------------------------------------------------


def test_absorption_sup():
    C, at = compute_absorption_sup(catastrophe_chain(absorb=1.0))
    assert C == 1.0 and at == 1


def test_q_bar_bounded_window():
    q, at, notes = compute_q_bar(catastrophe_chain())
    assert math.isfinite(q) and at is not None
    assert notes == []


def test_q_bar_detects_unbounded_rates():
    # logistic rates keep growing past any window
    q, at, notes = compute_q_bar(build_logistic(1.0, 1.0, 1.0, 32))
    assert q == math.inf and at is None
    assert any("grow" in n for n in notes)


def test_q_bar_corrects_reflected_top_row():
    # constant-rate walk: the reflected top row drops its birth rate, but
    # the true supremum includes it
    chain = build_from_entries(
        [(x, x + 1, 1.0) for x in range(1, 5)]
        + [(x, x - 1, 1.0) for x in range(2, 6)]
        + [(1, 0, 1.0)],
        6,
    )
    q, _, _ = compute_q_bar(chain)
    assert q == pytest.approx(2.0)


def test_alpha_uniform_on_catastrophe():
    # only the column into state 1 has a uniform floor: every x >= 2
    # jumps to 1 at the drop rate, and state 1 itself is skipped
    chain = catastrophe_chain(drop=3.0)
    assert compute_alpha_uniform(chain) == pytest.approx(3.0)


def test_alpha_uniform_vanishes_when_columns_split():
    assert compute_alpha_uniform(alternating_catastrophe_chain()) == 0.0


def test_alpha_K_basics():
    chain = catastrophe_chain(drop=3.0)
    a, at, _ = compute_alpha_K(chain, [1])
    assert a == pytest.approx(3.0) and at is not None
    with pytest.raises(ValidationError):
        compute_alpha_K(chain, [])
    with pytest.raises(ValidationError):
        compute_alpha_K(chain, [99])


def test_alpha_K_vacuous_on_full_core():
    chain = catastrophe_chain()
    a, at, notes = compute_alpha_K(chain, list(chain.transient_states))
    assert a == math.inf and at is None
    assert any("vacuous" in n for n in notes)


def test_alpha_K_monotone_in_prefix():
    # growing the core can only help: more targets and fewer sources
    chain = alternating_catastrophe_chain()
    prev = -math.inf
    for k in range(1, chain.n_transient):
        a, _, _ = compute_alpha_K(chain, range(1, k + 1))
        assert a >= prev - 1e-12
        prev = a


# -- the two verdicts -------------------------------------------------------------


def test_core_return_on_catastrophe():
    rep = check_core_return(catastrophe_chain(drop=3.0, absorb=1.0), [1])
    assert rep.core_return_holds
    assert rep.lambda0 == 1.0
    assert rep.c4_bound == pytest.approx(3.0 / (3.0 - 1.0))


def test_core_return_failure():
    # drop rate below the absorption sup: the test must fail
    rep = check_core_return(catastrophe_chain(drop=0.5, absorb=1.0), [1])
    assert not rep.core_return_holds
    assert rep.c4_bound is None


def test_alternating_chain_splits_the_verdicts():
    chain = alternating_catastrophe_chain()
    rep = check_uniform_rates(chain)
    assert not rep.uniform_rates_holds  # no single column has a uniform floor
    sub = check_core_return(chain, [1, 2])
    assert sub.core_return_holds  # but the pair core works
    assert sub.alpha_K == pytest.approx(3.0)
    assert sub.c4_bound == pytest.approx(1.5)


def test_uniform_rates_attaches_witness_core():
    chain = catastrophe_chain(drop=3.0)
    rep = check_uniform_rates(chain)
    assert rep.uniform_rates_holds
    assert rep.K == (1,)
    assert rep.core_return_holds
    assert rep.c4_bound == pytest.approx(1.5)


def test_uniform_rates_prefix_scan_can_fail():
    # heavy column into the top state: the uniform-rates test holds, yet
    # no prefix core can satisfy the return test on this window
    chain = high_column_chain()
    rep = check_uniform_rates(chain)
    assert rep.uniform_rates_holds
    assert rep.K is None
    assert any("no prefix core" in n for n in rep.notes)
    assert find_minimal_core(chain) is None


def test_find_minimal_core_is_minimal():
    chain = alternating_catastrophe_chain()
    K = find_minimal_core(chain)
    assert K == (1, 2)
    a1, _, _ = compute_alpha_K(chain, [1])
    C, _ = compute_absorption_sup(chain)
    assert not a1 > C  # the singleton prefix genuinely fails


def test_report_renders_text():
    rep = check_uniform_rates(catastrophe_chain(drop=3.0))
    text = rep.to_text()
    assert "uniform_rates_test = holds" in text
    assert "core_return_test = holds" in text
    assert "c4_bound" in text


# -- random-chain properties --------------------------------------------------------


@pytest.mark.parametrize("seed", range(25))
def test_uniform_rates_implies_prefix_core(seed):
    chain = random_return_chain(seed)
    rep = check_uniform_rates(chain)
    if not rep.uniform_rates_holds:
        pytest.skip("uniform-rates test does not hold for this draw")
    K = find_minimal_core(chain)
    assert K is not None
    sub = check_core_return(chain, K)
    assert sub.core_return_holds


@pytest.mark.parametrize("seed", range(25))
def test_solved_moment_never_exceeds_rate_bound(seed):
    # whenever the core-return test holds, the linear-solve route must
    # come in at or under the closed-form ceiling
    chain = random_return_chain(seed)
    rep = check_uniform_rates(chain)
    if not rep.uniform_rates_holds or rep.K is None:
        pytest.skip("no witness core for this draw")
    est = compute_c4(chain, rep.K, rep.lambda0, doubling=False)
    assert est.value <= rep.c4_bound * (1 + 1e-9)


# -- certificates through the rate route ----------------------------------------------


def test_derive_certificate_via_criterion():
    chain = catastrophe_chain(drop=3.0, absorb=1.0)
    cert = derive_certificate_via_criterion(chain, [1], x0=1)
    assert cert.c4 == pytest.approx(1.5)
    assert cert.lambda0 == 1.0
    assert cert.provenance["c4"] == "certified_bound"
    ok, margin = check_ratio_inequality(chain, cert, geometric_grid(0.25, 30.0, 1.5))
    assert ok, f"margin {margin}"


def test_criterion_route_rejects_failing_core():
    with pytest.raises(CertificationError) as ei:
        derive_certificate_via_criterion(catastrophe_chain(drop=0.5), [1], x0=1)
    assert ei.value.part == "criterion"


def test_criterion_route_rejects_killed_windows():
    chain = build_logistic(1.0, 1.0, 1.0, 16, "kill")
    with pytest.raises(ValidationError, match="reflecting"):
        derive_certificate_via_criterion(chain, [1], x0=1)


def test_both_routes_agree_on_shared_constants():
    chain = catastrophe_chain(drop=3.0, absorb=1.0)
    from quasistat import certify

    direct = certify(chain, K=[1], x0=1, c3_strategy="absorption_rate")
    viarate = derive_certificate_via_criterion(chain, [1], x0=1)
    # same c1/c2/c3 by construction; only the c4 route differs
    assert direct.c1 == viarate.c1
    assert direct.c2 == viarate.c2
    assert direct.c3 == viarate.c3
    assert direct.lambda0 == viarate.lambda0
    # the closed form can never beat the exact solve
    assert direct.c4 <= viarate.c4 + 1e-12
    assert viarate.gamma <= direct.gamma + 1e-15
    # on this chain the two coincide exactly
    assert viarate.c4 == pytest.approx(direct.c4, abs=1e-9)
