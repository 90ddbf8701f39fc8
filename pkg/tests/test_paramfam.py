from __future__ import annotations

import numpy as np
import pytest

from shearflow.algebra import Multipoly, PolyVectorField, jet_of
from shearflow.expose import ModelDomain, exposing_isotopy, frame_map, rotation_curve
from shearflow.flows import AutomorphismWord, Isotopy, approximate_isotopy, rotation_field, scaling_isotopy, shear_isotopy
from shearflow.jetfix import jet_fix
from shearflow.paramfam import (CoefficientFunction, ParamCircle, ParamWordFamily, family_jet_fix, param_approximate,
                                param_decompose, partition_of_unity, per_angle, smoothness_report)
from shearflow.shears import SHEAR, ElementaryField

from conftest import polydisc, random_elementary

TWO_PI = 2 * np.pi


def test_partition_sums_to_one():
    P = partition_of_unity(ParamCircle(3, 2.2))
    th = np.linspace(0, TWO_PI, 1000)
    assert np.max(np.abs(P.weights(th).sum(axis=1) - 1)) <= 1e-12
    assert np.all(P.weights(th) >= 0)


def test_partition_dominant_at_center():
    c = ParamCircle(3, 2.2)
    assert partition_of_unity(c).weights(c.angles[1])[1] >= 0.5


def test_partition_support():
    c = ParamCircle(8)
    P = partition_of_unity(c)
    th = np.linspace(0, TWO_PI, 2000)
    W = P.weights(th)
    for j in range(c.M):
        off = np.abs((th - c.angles[j] + np.pi) % TWO_PI - np.pi)
        assert np.all(W[off >= c.half_width, j] == 0)


def test_partition_derivative_matches_fd():
    P = partition_of_unity(ParamCircle(5))
    th = np.linspace(0, TWO_PI, 300)
    h = 1e-6
    fd = (P.weights(th + h) - P.weights(th - h)) / (2 * h)
    assert np.max(np.abs(fd - P.derivatives(th))) <= 1e-6
    assert P.derivative_bound() >= np.max(np.abs(P.derivatives(th))) - 1e-12


def test_circle_validation():
    with pytest.raises(ValueError):
        ParamCircle(2)
    with pytest.raises(ValueError):
        ParamCircle(8, half_width=0.5)


def test_coefficient_function_exact_at_samples():
    c = ParamCircle(8)
    rng = np.random.default_rng(2)
    vals = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    g = CoefficientFunction(c, vals)
    assert np.max(np.abs(g(c.angles) - vals)) <= 1e-14


def test_coefficient_function_reproduces_low_trig():
    c = ParamCircle(8)
    f = lambda t: 0.3 + np.cos(t) - 2j * np.sin(2 * t)
    g = CoefficientFunction(c, f(c.angles))
    th = np.linspace(0, TWO_PI, 333)
    assert np.max(np.abs(g(th) - f(th))) <= 1e-13


def test_coefficient_function_json():
    c = ParamCircle(6)
    g = CoefficientFunction(c, np.arange(6) * (1 + 1j))
    data = g.to_json()
    assert data["kind"] == "bump_sum" and len(data["centers"]) == 6
    h = CoefficientFunction.from_json(data)
    th = np.linspace(0, TWO_PI, 50)
    assert np.array_equal(g(th), h(th))


def test_smoothness_no_jumps():
    c = ParamCircle(8)
    rng = np.random.default_rng(6)
    funcs = [CoefficientFunction(c, rng.standard_normal(8)) for _ in range(10)]
    rep = smoothness_report(funcs, c)
    assert rep["max_jump"] <= 1e-6 and np.isfinite(rep["max_slope"])


def test_per_angle_threads(monkeypatch):
    monkeypatch.setenv("SHEARFLOW_THREADS", "3")
    assert per_angle(lambda t: t * 2, [1, 2, 3, 4]) == [2, 4, 6, 8]


def test_param_decompose_constant_family():
    c = ParamCircle(6)
    X = rotation_field(2)
    dec = param_decompose(lambda t: X, c)
    th = np.linspace(0, TWO_PI, 40)
    for g in dec.functions:
        vals = g(th)
        assert np.max(np.abs(vals - vals[0])) <= 1e-10


def test_param_decompose_cosine_shear():
    c = ParamCircle(8)
    E = ElementaryField(SHEAR, 1.0, [1, 0], [0, 1], 2)
    dec = param_decompose(lambda t: PolyVectorField([comp * np.cos(t) for comp in E.to_field().components]), c)
    k = next(i for i, T in enumerate(dec.templates) if T.to_json() == E.to_json())
    assert np.max(np.abs(dec.functions[k].values - np.cos(c.angles))) <= 1e-9
    assert max(dec.residuals) <= 1e-9


def test_param_decompose_rotating_field():
    c = ParamCircle(8)
    tol = 1e-9

    def family(t):
        w = np.exp(1j * t)
        return PolyVectorField.from_terms(2, {((0, 1), 0): -w, ((1, 0), 1): w, ((1, 1), 0): 0.2 * np.conj(w)})

    dec = param_decompose(family, c, tol=tol)
    for t in np.linspace(0, TWO_PI, 4 * c.M, endpoint=False):
        assert dec.field_at(t).max_abs_diff(family(t)) <= 10 * tol


def test_param_approximate_constant_family(rng):
    c = ParamCircle(4)
    K = polydisc(rng, 60, 2, 0.5)
    rep = param_approximate(lambda t: shear_isotopy(2), lambda t: K, c, 1e-8, heldout=1)
    assert rep.family.is_constant()
    assert rep.sample_error <= 1e-8 and rep.heldout_error <= 2e-8


def test_param_approximate_scaling_family(rng):
    c = ParamCircle(8)
    eps = 1e-4
    K = polydisc(rng, 80, 2, 0.5)
    rep = param_approximate(lambda t: scaling_isotopy(2, 1 + 0.1 * np.cos(t)), lambda t: K, c, eps)
    assert rep.sample_error <= eps and rep.heldout_error <= 2 * eps
    for t in c.midpoints(2):
        W = rep.family.instantiate(t)
        ref = np.exp(1 + 0.1 * np.cos(t)) * K
        assert np.max(np.abs(W(K) - ref)) <= 2 * eps


def conjugated(iso, A):
    Ai = A.inverse()
    return Isotopy(iso.n, lambda t, Z: Ai.evaluate(iso.evaluate(t, A.evaluate(Z))),
                   lambda t, Z: Ai.matrix @ iso.derivative(t, A.apply(Z)), "rotated")


def rotated_setup(eps):
    D = ModelDomain(2, 1)
    base = exposing_isotopy(D)
    curve = rotation_curve(D)
    K0 = np.concatenate([D.boundary_sample(100, 0), D.interior_sample(100, 0)])
    c = ParamCircle(8)
    frames = {}

    def frame(t):
        key = float(t)
        if key not in frames:
            frames[key] = frame_map(D, curve(t))
        return frames[key]

    isos = lambda t: conjugated(base, frame(t))
    Ks = lambda t: frame(t).inverse()(K0)
    rep = param_approximate(isos, Ks, c, eps, heldout=1)
    return D, c, curve, isos, Ks, rep


@pytest.fixture(scope="module")
def rotated_family():
    return rotated_setup(1e-3)


def test_param_approximate_rotated_mobius(rotated_family):
    D, c, curve, isos, Ks, rep = rotated_family
    assert rep.sample_error <= 1e-3 and rep.heldout_error <= 2e-3
    assert smoothness_report(rep.family.functions(), c)["max_jump"] <= 1e-6


def test_family_consistent_with_single_angle(rotated_family):
    D, c, curve, isos, Ks, rep = rotated_family
    t = c.angles[3]
    K = Ks(t)
    single = approximate_isotopy(isos(t), K, 1e-3).word
    fam = rep.family.instantiate(t)
    assert np.max(np.linalg.norm(fam(K) - single(K), axis=1)) <= 5e-3


def test_family_jet_fix_rotated():
    # the jet correction does not depend on how fine the flow splitting is
    D, c, curve, isos, Ks, rep = rotated_setup(1e-2)
    targets = lambda t: (isos(t).time_map(1.0), curve(t))
    out = family_jet_fix(rep.family, targets, 3, guard=Ks, eps_guard=0.1, heldout=1)
    assert out.changed
    assert max(out.sample_defects) <= 1e-8
    for t in c.angles[:3]:
        W = out.family.instantiate(t)
        tmap, a = targets(t)
        assert jet_of(W.evaluate, a, 2).max_abs_diff(jet_of(tmap, a, 2)) <= 1e-8
    assert np.isfinite(out.modulus) and all(np.isfinite(out.heldout_defects))


def test_family_jet_fix_already_matching(rng):
    c = ParamCircle(3)
    W = AutomorphismWord(2, [random_elementary(rng, 2, scale=0.2).flow(1.0) for _ in range(4)])
    fam = ParamWordFamily.from_words(c, [W] * 3)
    out = family_jet_fix(fam, lambda t: (W.evaluate, np.zeros(2)), 3)
    assert not out.changed
    assert max(out.sample_defects) <= 1e-10


def test_family_jet_fix_reduces_to_single(rng):
    c = ParamCircle(3)
    W = AutomorphismWord(2, [random_elementary(rng, 2, scale=0.2).flow(1.0) for _ in range(4)])
    target = lambda zs: [zs[0] + 1e-3 * zs[1] * zs[1], zs[1]]
    fam = ParamWordFamily.from_words(c, [W] * 3)
    out = family_jet_fix(fam, lambda t: (target, np.zeros(2)), 4)
    single = jet_fix(W, target, np.zeros(2), 4).word
    for t in (c.angles[0], 1.0):
        got = jet_of(out.family.instantiate(t).evaluate, np.zeros(2), 3)
        assert got.max_abs_diff(jet_of(single.evaluate, np.zeros(2), 3)) <= 1e-10


def test_from_words_rejects_mismatched_skeletons(rng):
    c = ParamCircle(3)
    a = AutomorphismWord(2, [random_elementary(rng, 2).flow(1.0)])
    b = AutomorphismWord(2, [random_elementary(rng, 2).flow(1.0)])
    with pytest.raises(ValueError):
        ParamWordFamily.from_words(c, [a, a, b])


def test_family_json_shape(rng):
    c = ParamCircle(3)
    W = AutomorphismWord(2, [random_elementary(rng, 2).flow(1.0)])
    data = ParamWordFamily.from_words(c, [W] * 3).to_json()
    assert data["coefficients"][0]["kind"] == "bump_sum"
    assert len(data["skeleton"]) == 1
