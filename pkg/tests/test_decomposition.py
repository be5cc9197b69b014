import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nrwe.condmean import fit_cond_mean
from nrwe.core import DataMatrix, fwl_residualize
from nrwe.decomposition import (FIELDS, local_decompose, decompose, nrwe_weight_form)
from nrwe.errors import DegenerateCell, DimensionMismatch



def random_dataset(seed, n, k):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, k))
    t = np.sin(x).sum(1) + x[:, 0] ** 2 + rng.normal(size=n)
    y = t ** 2 - x.sum(1) + rng.normal(size=n)
    return DataMatrix.from_columns(y, t, x)


def test_manual_moments(nonlin):
    mu = np.exp(nonlin.x[:, 1])
    d = decompose(nonlin, mu)
    a = nonlin.x
    pi = np.linalg.lstsq(a, nonlin.t, rcond=None)[0]
    r = nonlin.t - a @ pi
    delta = mu - a @ pi
    vr = np.cov(r, bias=True)
    assert d.beta == pytest.approx(np.cov(nonlin.y, r, bias=True)[0, 1] / vr, rel=1e-9)
    assert d.weighted_effect == pytest.approx(
        np.cov(nonlin.y, nonlin.t - mu, bias=True)[0, 1] / vr, rel=1e-9)
    assert d.misspec_bias == pytest.approx(np.cov(nonlin.y, delta, bias=True)[0, 1] / vr,
                                           rel=1e-9)
    assert d.nrwe == pytest.approx(np.cov(nonlin.y, nonlin.t - mu, bias=True)[0, 1]
                                   / np.var(nonlin.t - mu), rel=1e-9)
    assert d.mu_source == "oracle"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(60, 400), st.integers(1, 3),
       st.sampled_from(["linear", "binned", "local_linear"]))
def test_additivity_identity(seed, n, k, method):
    data = random_dataset(seed, n, k)
    d = decompose(data, fit_cond_mean(data, method, bins=3))
    scale = max(abs(d.beta), abs(d.weighted_effect) + abs(d.misspec_bias))
    assert abs(d.beta - (d.weighted_effect + d.misspec_bias)) <= 1e-10 * scale
    # denominator splits into innovation, Delta and cross parts
    total = d.e_var_t_given_x + d.var_delta + d.cross_term
    assert d.denom_ols == pytest.approx(total, rel=1e-10)
    assert d.attenuation == pytest.approx(d.nrwe - d.weighted_effect, rel=1e-12, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(20, 300), st.integers(1, 4))
def test_linear_collapse(seed, n, k):
    data = random_dataset(seed, n, k)
    d = decompose(data, fit_cond_mean(data, "linear"))
    assert d.misspec_bias == 0.0
    assert d.var_delta == 0.0
    assert abs(d.nrwe - d.beta) <= 1e-12 * max(1.0, abs(d.beta))


def test_callable_and_bad_mu(nonlin):
    d1 = decompose(nonlin, lambda x: np.exp(x[:, 1]))
    d2 = decompose(nonlin, np.exp(nonlin.x[:, 1]))
    assert d1 == d2
    with pytest.raises(DimensionMismatch):
        decompose(nonlin, np.zeros(3))
    with pytest.raises(DimensionMismatch):
        decompose(nonlin, np.full(nonlin.n, np.nan))


def test_estimated_source_label(nonlin):
    d = decompose(nonlin, fit_cond_mean(nonlin, "binned"))
    assert d.mu_source == "estimated(binned)"
    assert d.csv_header()[: len(FIELDS)] == FIELDS
    assert len(d.csv_row()) == len(d.csv_header())


def saturated(seed=0, n=6000, levels=5):
    rng = np.random.default_rng(seed)
    g = rng.integers(0, levels, n)
    dummies = (g[:, None] == np.arange(1, levels)).astype(float)
    t = g ** 2 + (1 + g) * rng.normal(size=n)
    y = (1 + g) * t + np.sin(t) + rng.normal(size=n)
    return DataMatrix.from_columns(y, t, dummies)


def test_local_saturated_recovers_beta():
    data = saturated()
    local = local_decompose(data, fit_cond_mean(data, "binned"))
    _, beta = fwl_residualize(data)
    assert abs(local.recombined_beta - beta) <= 1e-8 * max(1.0, abs(beta))
    assert local.var_delta == pytest.approx(0.0, abs=1e-18)
    assert local.total_weight() == pytest.approx(1.0, abs=1e-9)


def test_local_weights_and_delta_term(nonlin):
    m = fit_cond_mean(nonlin, "binned", bins=40)
    local = local_decompose(nonlin, m)
    assert local.w0 > 0
    assert local.total_weight() == pytest.approx(1.0, abs=0.05)
    assert np.all(local.w1_x > 0)


def test_local_degenerate_cell():
    rng = np.random.default_rng(1)
    g = np.repeat([0.0, 1.0], 100)
    t = np.where(g == 0, 3.0, rng.normal(size=200))
    data = DataMatrix.from_columns(t + rng.normal(size=200), t, g)
    with pytest.raises(DegenerateCell):
        local_decompose(data, fit_cond_mean(data, "binned"))


def test_weight_form_tracks_moment_form():
    rng = np.random.default_rng(2)
    n = 100_000
    x = rng.uniform(0, 2, n)
    t = x + rng.normal(size=n)
    y = 0.5 * t ** 2 + x + 0.1 * rng.normal(size=n)
    data = DataMatrix.from_columns(y, t, x)
    m = fit_cond_mean(data, "binned", bins=20)
    d = decompose(data, m)
    assert nrwe_weight_form(data, m, bins=20) == pytest.approx(d.nrwe, abs=0.05)
