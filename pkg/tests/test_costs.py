"""Conjugates, recession slopes, subdifferentials, validation."""

import math

import numpy as np
import pytest

import massopt as mo

INF = math.inf

CATALOG = [
    ("quadratic", mo.quadratic_cost),
    ("linear", lambda: mo.linear_cost(0.5)),
    ("reciprocal", mo.reciprocal_cost),
    ("power3", lambda: mo.power_cost(3.0)),
]


def exact_conjugate(name, s):
    if name == "quadratic":
        return 0.5 * s * s if s > 0 else 0.0
    if name == "linear":
        return 0.0 if s <= 0.5 else INF
    if name == "reciprocal":
        return -2.0 * math.sqrt(1.0 - s) if s <= 1.0 else INF
    q = 1.5  # conjugate exponent of p = 3
    return max(s, 0.0) ** q / q


# -- closed forms -----------------------------------------------------------

def test_quadratic_conjugate_values():
    c = mo.quadratic_cost()
    assert mo.conjugate_eval(c, None, 3.0) == pytest.approx(4.5, abs=1e-15)
    assert mo.conjugate_eval(c, None, -1.0) == 0.0


def test_reciprocal_conjugate_value():
    c = mo.reciprocal_cost()
    assert mo.conjugate_eval(c, None, 0.0) == pytest.approx(-2.0, abs=1e-15)
    assert mo.conjugate_eval(c, None, 0.75) == pytest.approx(-1.0, abs=1e-15)
    assert mo.conjugate_eval(c, None, 1.5) == INF


def test_linear_conjugate_indicator():
    c = mo.linear_cost(0.5)
    assert mo.conjugate_eval(c, None, 0.4) == 0.0
    assert mo.conjugate_eval(c, None, 0.6) == INF


def test_recession_values():
    assert mo.recession_eval(mo.quadratic_cost()).value == INF
    assert mo.recession_eval(mo.quadratic_cost()).regime == "SL"
    r = mo.recession_eval(mo.reciprocal_cost())
    assert r.value == 1.0 and r.regime == "L"
    l = mo.recession_eval(mo.linear_cost(0.5))
    assert l.value == 0.5 and l.regime == "L"


def test_recession_one_homogeneity():
    # c_inf(lam * t) = lam * c_inf(t): scale the witness through the slope
    for cost in (mo.reciprocal_cost(), mo.linear_cost(0.5)):
        base = cost.recession_slope()
        for lam in (0.5, 2.0, 7.0):
            assert lam * base == pytest.approx(lam * cost.recession_slope())


# -- numeric paths ----------------------------------------------------------

@pytest.mark.parametrize("text,name", [
    ("t^2/2", "quadratic"), ("t/2", "linear"), ("t + 1/t", "reciprocal")])
def test_numeric_conjugate_matches_closed_form(text, name):
    cost = mo.expression_cost(text)
    rng = np.random.default_rng(3)
    if name == "quadratic":
        samples = rng.uniform(-1.0, 4.0, 40)
    elif name == "linear":
        samples = rng.uniform(-1.0, 0.499, 40)
    else:
        samples = rng.uniform(-2.0, 0.999, 40)
    for s in samples:
        exact = exact_conjugate(name, float(s))
        got = mo.conjugate_eval(cost, None, float(s))
        assert got == pytest.approx(exact, abs=1e-8)


def test_numeric_conjugate_divergence_detected():
    cost = mo.expression_cost("t/2")
    assert mo.conjugate_eval(cost, None, 0.6) == INF


def test_tabulated_conjugate():
    ts = np.linspace(0.0, 10.0, 100001)
    tab = mo.tabulated_cost(ts, 0.5 * ts * ts)
    assert mo.conjugate_eval(tab, None, 3.0) == pytest.approx(4.5, abs=1e-8)
    # bounded table: +inf beyond the last sample, hence superlinear
    assert mo.recession_eval(tab).regime == "SL"


def test_numeric_recession_values():
    assert mo.recession_eval(mo.expression_cost("t^2/2")).value == INF
    assert mo.recession_eval(mo.expression_cost("t/2")).value == pytest.approx(0.5, abs=1e-12)
    assert mo.recession_eval(mo.expression_cost("t + 1/t")).value == pytest.approx(1.0, abs=1e-8)


def test_nonconvex_cost_recession_raises():
    c = mo.expression_cost("t^0.5", alpha=1.0, beta=0.0)
    with pytest.raises(mo.NonMonotoneQuotient):
        mo.recession_eval(c)


def test_piecewise_polynomial_cost():
    # t^2/2 as a single extended segment, and split at t = 1
    c = mo.piecewise_polynomial_cost([0.0, 1.0], [[0.0, 0.0, 0.5]])
    assert float(np.asarray(c.base_value(2.0))) == pytest.approx(2.0)
    assert mo.conjugate_eval(c, None, 3.0) == pytest.approx(4.5, abs=1e-7)
    split = mo.piecewise_polynomial_cost(
        [0.0, 1.0, 2.0], [[0.0, 0.0, 0.5], [0.0, 0.0, 0.5]])
    assert float(np.asarray(split.base_value(1.5))) == pytest.approx(1.125)
    with pytest.raises(mo.InvalidCost):
        mo.piecewise_polynomial_cost([0.0, 1.0], [[0.0], [0.0]])


# -- subdifferentials -------------------------------------------------------

def test_subdiff_smooth_quadratic():
    conj = mo.quadratic_cost().conjugate()
    lo, hi = mo.subdiff_interval(conj, None, 2.0)
    assert lo == hi == pytest.approx(2.0)


def test_subdiff_indicator_normal_cone():
    conj = mo.linear_cost(0.5).conjugate()
    assert mo.subdiff_interval(conj, None, 0.3) == (0.0, 0.0)
    lo, hi = mo.subdiff_interval(conj, None, 0.5)
    assert lo == 0.0 and hi == INF
    with pytest.raises(mo.OutsideDomain):
        mo.subdiff_interval(conj, None, 0.6)


def test_subdiff_reciprocal_closed_form_and_fd():
    conj = mo.reciprocal_cost().conjugate()
    lo, hi = mo.subdiff_interval(conj, None, 0.0)
    assert lo == pytest.approx(1.0, abs=1e-12)
    assert hi == pytest.approx(1.0, abs=1e-12)
    # cross-check by central differences of the conjugate value
    d = 1e-6
    fd = (conj.value(d) - conj.value(-d)) / (2 * d)
    assert fd == pytest.approx(1.0, abs=1e-5)


def test_subdiff_upper_end_inf_at_threshold():
    conj = mo.linear_cost(0.5).conjugate()
    _lo, hi = mo.subdiff_interval(conj, None, 0.5)
    assert hi == INF


@pytest.mark.parametrize("name,factory", CATALOG)
def test_monotone_subdifferential(name, factory):
    cost = factory()
    conj = cost.conjugate()
    thr = conj.finiteness_threshold()
    top = min(thr, 3.0) if math.isfinite(thr) else 3.0
    ss = np.linspace(-1.0, top, 60)
    for s1, s2 in zip(ss[:-1], ss[1:]):
        _, hi1 = mo.subdiff_interval(conj, None, float(s1))
        lo2, _ = mo.subdiff_interval(conj, None, float(s2))
        if math.isfinite(hi1):
            assert hi1 <= lo2 + 1e-9


@pytest.mark.parametrize("name,factory", CATALOG)
def test_fenchel_equality_characterizes_interval(name, factory):
    cost = factory()
    conj = cost.conjugate()
    thr = conj.finiteness_threshold()
    ss = [0.25, min(thr, 2.0) * 0.8] if math.isfinite(thr) else [0.25, 2.0]
    for s in ss:
        lo, hi = mo.subdiff_interval(conj, None, s)
        members = [lo] if not math.isfinite(hi) else [lo, 0.5 * (lo + hi), hi]
        for a in members:
            if not math.isfinite(a):
                continue
            gap = float(np.asarray(cost.base_value(a))) + conj.value(s) - a * s
            assert abs(gap) <= 1e-9 * (1.0 + abs(a))
        outsider = (hi if math.isfinite(hi) else lo) + 0.5 + 0.1 * abs(lo)
        gap = float(np.asarray(cost.base_value(outsider))) + conj.value(s) - outsider * s
        assert gap > 1e-6


@pytest.mark.parametrize("name,factory", CATALOG)
def test_conjugate_monotone_and_convex_in_s(name, factory):
    cost = factory()
    thr = cost.recession_slope()
    top = thr if math.isfinite(thr) else 4.0
    ss = np.linspace(-2.0, top, 120)
    vals = np.asarray(cost.conjugate_value(ss), dtype=float)
    finite = np.isfinite(vals)
    dv = np.diff(vals[finite])
    assert np.all(dv >= -1e-12)
    s1, s2, s3 = ss[finite][:-2], ss[finite][1:-1], ss[finite][2:]
    v1, v2, v3 = vals[finite][:-2], vals[finite][1:-1], vals[finite][2:]
    lam = (s2 - s1) / (s3 - s1)
    chord = (1.0 - lam) * v1 + lam * v3
    assert np.all(v2 <= chord + 1e-12 * (1.0 + np.abs(chord)))


# -- global properties ------------------------------------------------------

@pytest.mark.parametrize("name,factory", CATALOG)
def test_fenchel_young(name, factory):
    cost = factory()
    rng = np.random.default_rng(11)
    t = rng.uniform(0.0, 10.0, 10000)
    thr = cost.recession_slope()
    top = thr if math.isfinite(thr) else 5.0
    s = rng.uniform(-2.0, top, 10000)
    ct = np.asarray(cost.base_value(t), dtype=float)
    cs = np.asarray(cost.conjugate_value(s), dtype=float)
    finite = np.isfinite(ct) & np.isfinite(cs)
    viol = (ct + cs - t * s)[finite]
    assert float(np.min(viol)) >= -1e-12


@pytest.mark.parametrize("name,factory", CATALOG)
def test_biconjugacy(name, factory):
    from massopt.costs import _concave_max

    cost = factory()
    conj = cost.conjugate()
    thr = conj.finiteness_threshold()
    hi = thr if math.isfinite(thr) else INF
    seed = min(1.0, 0.5 * thr) if math.isfinite(thr) else 1.0
    for t in np.geomspace(0.05, 8.0, 24):
        exact = float(np.asarray(cost.base_value(t)))
        if not math.isfinite(exact):
            continue
        val, _ = _concave_max(lambda s: t * s - float(np.asarray(conj.value(s))),
                              seed=seed, lo=-INF, hi=hi)
        assert val == pytest.approx(exact, abs=1e-7)


@pytest.mark.parametrize("name,factory", CATALOG)
def test_recession_matches_conjugate_threshold(name, factory):
    cost = factory()
    thr = cost.recession_slope()
    if math.isinf(thr):
        for s in (1.0, 10.0, 1e4):
            assert math.isfinite(float(np.asarray(cost.conjugate_value(s))))
    else:
        assert math.isfinite(float(np.asarray(cost.conjugate_value(thr - 1e-6))))
        assert float(np.asarray(cost.conjugate_value(thr + 1e-3))) == INF


# -- heterogeneity ----------------------------------------------------------

def test_separable_weight_scaling():
    w = lambda x: 2.0
    c = mo.quadratic_cost(spatial_weight=w)
    # c*(x, s) = w * c0*(s / w)
    assert mo.conjugate_eval(c, 0.0, 3.0) == pytest.approx(2.0 * 0.5 * 1.5 ** 2)
    assert mo.recession_eval(c, 0.0).value == INF
    r = mo.reciprocal_cost(spatial_weight=w)
    assert mo.recession_eval(r, 0.0).value == pytest.approx(2.0)


def test_weight_must_be_positive():
    c = mo.quadratic_cost(spatial_weight=lambda x: -1.0)
    with pytest.raises(mo.InvalidCost):
        c.weight_at(0.0)


# -- regularization ---------------------------------------------------------

def test_regularized_cost_conjugate_consistency():
    base = mo.linear_cost(0.5)
    ceps = mo.regularized_cost(base, 1e-2)
    assert mo.recession_eval(ceps).regime == "SL"
    # derivative of the conjugate equals the maximizer: check Fenchel equality
    for s in (0.1, 0.5, 1.0, 3.0):
        a = float(np.asarray(ceps.conjugate_dplus(s)))
        gap = float(np.asarray(ceps.base_value(a))) + \
            float(np.asarray(ceps.conjugate_value(s))) - a * s
        assert abs(gap) <= 1e-9 * (1.0 + abs(a))


def test_regularized_invert_flux():
    base = mo.linear_cost(0.5)
    ceps = mo.regularized_cost(base, 1e-3)
    v = np.array([0.0, 0.3, 1.0])
    t, a = ceps.invert_flux(v)
    assert t[0] == 0.0
    assert np.all(t[1:] > 0.0)
    assert np.allclose(t[1:] * a[1:], v[1:], rtol=1e-10)


# -- validation -------------------------------------------------------------

def test_validate_quadratic_growth():
    rep = mo.validate_cost(mo.quadratic_cost())
    assert rep.passed and rep.regime == "SL"


def test_validate_linear_regime():
    rep = mo.validate_cost(mo.linear_cost(1.0))
    assert rep.passed and rep.regime == "L"


def test_validate_sqrt_fails_growth():
    # sqrt(t) < alpha*t + beta at t = (2/alpha)^2 for beta = 0
    c = mo.expression_cost("t^0.5", alpha=1.0, beta=0.0)
    rep = mo.validate_cost(c)
    assert not rep.passed
    assert any("growth" in msg for msg in rep.failures)


def test_validate_never_throws_on_bad_cost():
    c = mo.expression_cost("t^0.5", alpha=1.0, beta=0.0)
    rep = mo.validate_cost(c)
    assert isinstance(rep.failures, list)


def test_unknown_builtin():
    with pytest.raises(mo.InvalidCost):
        mo.builtin_cost("nope")


def test_bad_parameters():
    with pytest.raises(mo.InvalidCost):
        mo.power_cost(1.0)
    with pytest.raises(mo.InvalidCost):
        mo.linear_cost(0.0)
    with pytest.raises(mo.InvalidCost):
        mo.reciprocal_cost(a=-1.0)
