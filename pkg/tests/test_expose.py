from __future__ import annotations

import numpy as np
import pytest

from shearflow.errors import EstimateNotFound, ExposednessFailed
from shearflow.expose import (ExposeConfig, ModelDomain, ball_frame, boundary_sample, constant_curve, expose,
                              exposing_isotopy, in_ball_frame, mobius_stretch, normalization_map, param_expose,
                              support_function, unitary_to, verify_exposed, verify_support_estimate)
from shearflow.flows import AutomorphismWord


@pytest.fixture(scope="module")
def exposed21():
    return expose(ModelDomain(2, 1), ExposeConfig())


def test_model_basics():
    D = ModelDomain(3, 2)
    assert D.rho(D.p) == 0
    e = np.zeros(3, dtype=complex)
    e[-1] = 1j
    assert np.allclose(D.normal(D.p), e)


@pytest.mark.parametrize("n,k", [(2, 1), (2, 2), (3, 1)])
def test_model_geometry(n, k):
    D = ModelDomain(n, k)
    inner = D.interior_sample(10_000, 3)
    assert np.all(D.contains(inner)) and np.all(inner[:, -1].imag < 0)
    bd = D.boundary_sample(10_000, 3)
    assert np.max(np.abs(D.rho(bd))) <= 1e-10
    away = np.linalg.norm(bd, axis=1) > 1e-6
    assert np.all(bd[away, -1].imag < 0)


def test_single_boundary_sample():
    D = ModelDomain(2, 2)
    pts = boundary_sample(D, 1, seed=5)
    assert pts.shape == (1, 2) and abs(D.rho(pts[0])) <= 1e-10


def test_ball_boundary_equation():
    D = ModelDomain(2, 1)
    z = D.boundary_sample(500, 1, D.p, 0.5)
    assert np.max(np.abs(np.abs(z[:, 1] + 1j) ** 2 + np.abs(z[:, 0]) ** 2 - 1)) <= 1e-10


def test_near_samples_concentrate():
    D = ModelDomain(2, 1)
    z = D.boundary_sample(1000, 0, D.p, 0.5)
    d = np.linalg.norm(z, axis=1)
    assert np.sum(d < 0.11) >= 500


def test_unitary_to():
    rng = np.random.default_rng(1)
    for _ in range(10):
        a = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        b = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
        U = unitary_to(a, b)
        assert np.allclose(U @ a, b, atol=1e-13)
        assert np.allclose(U.conj().T @ U, np.eye(3), atol=1e-13)


def test_normalization_at_p():
    D = ModelDomain(2, 1)
    l = normalization_map(D, D.p)
    assert np.allclose(l.matrix @ np.array([0, 1j]), [1, 0], atol=1e-15)
    assert np.allclose(l(D.p), 0, atol=1e-12)


def test_normalization_puts_domain_left():
    D = ModelDomain(3, 2)
    rng = np.random.default_rng(4)
    zeta = D.boundary_sample(1, 9)[0]
    l = normalization_map(D, zeta)
    assert np.linalg.norm(l(zeta)) <= 1e-12
    pts = []
    while len(pts) < 100:
        q = zeta + 0.05 * (rng.standard_normal(3) + 1j * rng.standard_normal(3))
        if D.contains(q):
            pts.append(q)
    assert np.all(l(np.array(pts))[:, 0].real < 0)


def test_support_function_at_p():
    D = ModelDomain(2, 1)
    S = support_function(D, D.p, K=1.5, r=0.1)
    assert S.c > 0 and S.c <= S.min_ratio
    assert verify_support_estimate(S, D, seed=42) == 0


def test_support_constant_is_sharp():
    D = ModelDomain(2, 1)
    S = support_function(D, D.p)
    S.c = 2 * S.min_ratio
    pts = normalization_map(D, D.p)(np.concatenate([D.boundary_sample(2000, 0, D.p, 1.0, (1e-3, 0.1))]))
    assert S.violations(pts) >= 1 or verify_support_estimate(S, D, seed=0) >= 1


def test_support_off_axis_point():
    D = ModelDomain(2, 1)
    zeta = D.radial_project(np.array([[0.6, -1j + 0.1]]))[0]
    assert abs(zeta[0]) > 0.1
    S = support_function(D, zeta)
    assert S.c > 0 and S.k == 1
    assert verify_support_estimate(S, D, seed=3) == 0


def test_support_rejects_tiny_constant():
    D = ModelDomain(2, 1)
    with pytest.raises(EstimateNotFound):
        support_function(D, D.p, c_min=10.0)


def test_mobius_values():
    M1 = mobius_stretch(1.0)
    assert M1(0) == 1j
    assert abs(M1(-1j)) == 0


def test_mobius_real_line_circle():
    x = np.linspace(-50, 50, 1000)
    for t in (0.3, 0.7, 1.0):
        w = mobius_stretch(t)(x + 0j)
        center, radius = 1j * (t - 1 / t) / 2, (t + 1 / t) / 2
        assert np.max(np.abs(np.abs(w - center) - radius)) <= 1e-10
        assert np.max(w.imag) <= t + 1e-10


def test_exposing_isotopy_values():
    D = ModelDomain(2, 1)
    iso = exposing_isotopy(D)
    for t in (0.25, 0.5, 1.0):
        assert np.allclose(iso(t, D.p), [0, 1j * t])
    assert np.allclose(iso(1.0, np.array([0, -1j])), [0, 0], atol=1e-15)


@pytest.mark.parametrize("k", [1, 2])
def test_isotopy_stays_below_level(k):
    D = ModelDomain(2, k)
    iso = exposing_isotopy(D)
    pts = np.concatenate([D.boundary_sample(10_000, 2, D.p, 0.5), D.interior_sample(2000, 2)])
    pts = pts[np.linalg.norm(pts, axis=1) > 1e-9]
    for t in (0.25, 0.5, 0.75, 1.0):
        assert np.all(iso(t, pts)[:, -1].imag < t)


def test_verify_exact_map_passes():
    D = ModelDomain(2, 1)
    iso = exposing_isotopy(D)
    rep = verify_exposed(lambda z: iso(1.0, z), D)
    assert rep.passed and rep.value_error <= 1e-15 and rep.c_exp > 0
    assert abs(rep.margin_exponent - 2) <= 0.5 and rep.convexity_fit > 0


def test_verify_identity_fails():
    D = ModelDomain(2, 1)
    rep = verify_exposed(AutomorphismWord(2), D)
    assert not rep.passed
    assert np.allclose(rep.value_at_p, 0) and rep.value_error == 1.0


def test_pipeline_passes(exposed21):
    rep = exposed21.report
    assert rep.passed
    assert rep.value_error <= 1e-9 and rep.max_Im < 1 and rep.c_exp > 0
    assert abs(rep.margin_exponent - 2) <= 0.5
    assert rep.convexity_fit > 0
    assert exposed21.approximation.sup_error <= 1e-3


def test_pipeline_reverify_with_new_seed(exposed21):
    rep = verify_exposed(exposed21.word, ModelDomain(2, 1), samples=5000, seed=99)
    assert rep.passed


def test_ball_frame(exposed21):
    D = ModelDomain(2, 1)
    T = ball_frame(D)
    z = D.boundary_sample(200, 0)
    w = T(z)
    assert np.max(np.abs(np.abs(w[:, 1]) ** 2 + np.abs(w[:, 0]) ** 2 - 1)) <= 1e-10
    assert np.allclose(T(D.p), [0, 1])
    G = in_ball_frame(exposed21.word, D)
    assert np.allclose(G(np.array([0, 1.0])), [0, 2], atol=1e-9)
    assert np.all(G(w)[:, 1].real < 2)


def test_negative_control_without_jetfix():
    D = ModelDomain(2, 1)
    cfg = ExposeConfig(eps=0.1, jetfix=False, verify_samples=2000)
    with pytest.raises(ExposednessFailed) as info:
        expose(D, cfg)
    rep = info.value.report
    assert not rep.passed and rep.value_error > 1e-6


def test_param_expose_constant_curve():
    D = ModelDomain(2, 1)
    res = param_expose(D, constant_curve(D), M=4, heldout=1, verify_samples=500)
    assert res.family.is_constant()
    assert res.passed
