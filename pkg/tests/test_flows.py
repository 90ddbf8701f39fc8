from __future__ import annotations

import math

import numpy as np
import pytest

from shearflow.algebra import Multipoly, PolyVectorField
from shearflow.errors import BudgetExhausted, NonFinite
from shearflow.expose import ModelDomain, exposing_isotopy, fit_samples, ExposeConfig
from shearflow.flows import (AffineMap, ApproxConfig, AutomorphismWord, approximate_isotopy, build_word,
                             euler_partition, field_from_isotopy, rk4_oracle, rotation_field, rotation_isotopy,
                             scaling_isotopy, shear_isotopy, splitting_word, sup_error, word_eval, word_inverse)
from shearflow.shears import OVERSHEAR, SHEAR, ElementaryField

from conftest import polydisc, random_elementary, random_field


def identity_field(n):
    return PolyVectorField([Multipoly.variable(n, j) for j in range(n)])


def test_fit_scaling_is_identity_field(rng):
    K = polydisc(rng, 100, 2, 0.5)
    fit = field_from_isotopy(scaling_isotopy(2), 0.7, K, D=4)
    assert fit.residual <= 1e-8
    assert fit.field.max_abs_diff(identity_field(2)) <= 1e-8


def test_fit_shear_isotopy(rng):
    K = polydisc(rng, 100, 2, 0.5)
    fit = field_from_isotopy(shear_isotopy(2), 0.5, K, D=4)
    ref = PolyVectorField([Multipoly.zero(2), Multipoly.monomial(2, (2, 0))])
    assert fit.residual <= 1e-8 and fit.field.max_abs_diff(ref) <= 1e-8


def test_fit_mobius_residual():
    D = ModelDomain(2, 1)
    K = np.concatenate([D.boundary_sample(100, 0), D.interior_sample(100, 0)])
    fit = field_from_isotopy(exposing_isotopy(D), 0.5, K, D=6)
    assert fit.residual <= 1e-4


def test_fit_without_analytic_derivative(rng):
    iso = shear_isotopy(2)
    iso.derivative = None
    fit = field_from_isotopy(iso, 0.3, polydisc(rng, 80, 2, 0.5), D=3)
    assert fit.residual <= 1e-7


def test_euler_partition_autonomous(rng):
    K = polydisc(rng, 80, 2, 0.5)
    fields = euler_partition(shear_isotopy(2), 5, K, D=3)
    assert len(fields) == 5
    assert all(f.max_abs_diff(fields[0]) < 1e-9 for f in fields)
    fields = euler_partition(scaling_isotopy(2), 8, K, D=3)
    assert len(fields) == 8 and all(f.max_abs_diff(identity_field(2)) < 1e-8 for f in fields)


def test_euler_refinement_mobius():
    D = ModelDomain(2, 1)
    iso = exposing_isotopy(D)
    K = fit_samples(D, ExposeConfig())
    Z = K.T.copy()
    ref = iso.evaluate(1.0, Z)
    errs = []
    for N in (4, 8, 16, 32):
        word, _ = build_word(iso, K, N, 256 // N, 6, 0, 1e-9)
        errs.append(sup_error(word, Z, ref))
    assert all(b < a for a, b in zip(errs, errs[1:])), errs


def test_splitting_single_elementary_is_exact(rng):
    E = ElementaryField(OVERSHEAR, 0.3 - 0.2j, [1, 0], [0, 1], 2)
    word = splitting_word([E.to_field()], 7)
    assert len(word) == 7
    Z = polydisc(rng, 50, 2).T.copy()
    assert np.max(np.abs(word.apply(Z) - E.flow(1.0).apply(Z))) <= 1e-12


def test_splitting_rotation_first_order(rng):
    Z = polydisc(rng, 100, 2, 0.5).T.copy()
    ref = rotation_isotopy(2).evaluate(1.0, Z)
    ns = np.array([8, 16, 32, 64, 128])
    errs = [sup_error(splitting_word([rotation_field(2)], n), Z, ref) for n in ns]
    slope = -np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert 0.7 <= slope <= 1.3


def test_splitting_random_quadratic_vs_rk4():
    rng = np.random.default_rng(2)
    X = random_field(rng, 2, [2], 0.3)
    z0 = polydisc(rng, 50, 2, 0.5)
    ref = rk4_oracle(X, z0, 1.0, 400)
    got = word_eval(splitting_word([X], 128, seed=1), z0)
    assert np.max(np.linalg.norm(got - ref, axis=1)) <= 1e-2


def test_rk4_constant_field():
    X = PolyVectorField([Multipoly.constant(2, 1.0), Multipoly.zero(2)])
    assert np.array_equal(rk4_oracle(X, [0, 0], 1.0, 4), np.array([1, 0], dtype=complex))


def test_rk4_linear_growth():
    out = rk4_oracle(identity_field(2), [1, 0], 1.0, 100)
    assert abs(out[0] - math.e) <= 1e-9 and out[1] == 0


def test_rk4_matches_overshear_flow(rng):
    for _ in range(5):
        E = random_elementary(rng, 3, kind=OVERSHEAR, scale=0.5)
        z0 = polydisc(rng, 20, 3)
        assert np.max(np.abs(rk4_oracle(E, z0, 1.0, 400) - E.flow(1.0)(z0))) <= 1e-9


def test_rk4_escape_guard():
    X = PolyVectorField([Multipoly.monomial(2, (2, 0)), Multipoly.zero(2)])
    with pytest.raises(NonFinite):
        rk4_oracle(X, [2.0, 0], 1.0, 200)


def test_approximate_shear_isotopy(rng):
    K = polydisc(rng, 100, 2, 0.5)
    rep = approximate_isotopy(shear_isotopy(2), K, 1e-8)
    assert len(rep.word) == 1 and rep.sup_error <= 1e-12


def test_approximate_scaling(rng):
    K = polydisc(rng, 100, 2, 0.5)
    rep = approximate_isotopy(scaling_isotopy(2), K, 1e-6)
    assert rep.sup_error <= 1e-6
    Z = polydisc(rng, 50, 2, 0.5)
    assert np.max(np.abs(word_eval(rep.word, Z) - math.e * Z)) <= 1e-6


def test_approximate_mobius():
    D = ModelDomain(2, 1)
    iso = exposing_isotopy(D)
    K = fit_samples(D, ExposeConfig())
    rep = approximate_isotopy(iso, K, 1e-3)
    assert rep.sup_error <= 1e-3
    assert sup_error(rep.word, K.T.copy(), iso.evaluate(1.0, K.T.copy())) <= 1e-3
    assert [tuple(r[:3]) for r in rep.table()][0] == (1, 1, 6)


def test_budget_exhausted_reports_best():
    D = ModelDomain(2, 1)
    K = fit_samples(D, ExposeConfig())
    cfg = ApproxConfig(max_N=2, max_substeps=4, max_D=6)
    with pytest.raises(BudgetExhausted) as info:
        approximate_isotopy(exposing_isotopy(D), K, 1e-8, cfg)
    assert info.value.report is not None and info.value.report.sup_error > 1e-8


def test_empty_word_is_identity(rng):
    z = polydisc(rng, 10, 3)
    assert np.array_equal(word_eval(AutomorphismWord(3), z), z)


def test_word_inverse(rng):
    letters = [random_elementary(rng, 3, scale=0.3).flow(0.7) for _ in range(12)]
    A = np.linalg.qr(rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)))[0]
    W = AutomorphismWord(3, letters, AffineMap(A, [0.1, 0, 0]), AffineMap(np.eye(3), [0, 0.2j, 0]))
    z = polydisc(rng, 100, 3)
    assert np.max(np.abs(word_eval(word_inverse(W), word_eval(W, z)) - z)) <= 1e-10
    assert np.max(np.abs(word_eval(W, word_eval(word_inverse(W), z)) - z)) <= 1e-10


def test_single_letter_inverse(rng):
    L = random_elementary(rng, 2, kind=OVERSHEAR).flow(0.4)
    W = AutomorphismWord(2, [L])
    inv = word_inverse(W)
    assert inv.letters[0].t == -0.4 and inv.letters[0].field is L.field
    z = polydisc(rng, 10, 2)
    assert np.max(np.abs(word_eval(inv, word_eval(W, z)) - z)) <= 1e-12


def test_word_json_roundtrip(rng):
    W = splitting_word([random_field(rng, 2, [1, 2], 0.3)], 4, seed=3)
    V = AutomorphismWord.from_json(W.to_json())
    z = polydisc(rng, 10, 2)
    assert np.array_equal(word_eval(W, z), word_eval(V, z))


def test_words_are_deterministic(rng):
    X = random_field(rng, 3, [0, 1, 2], 0.3)
    a = splitting_word([X], 5, seed=9).to_json()
    b = splitting_word([X], 5, seed=9).to_json()
    assert a == b


def test_isotopy_batch_call():
    iso = rotation_isotopy(2)
    z = np.array([[1, 0], [0, 1]], dtype=complex)
    out = iso(math.pi / 2, z)
    assert np.allclose(out, [[0, 1], [-1, 0]])
