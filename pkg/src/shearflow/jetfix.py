"""Correct an automorphism word so that its jet at a point matches a target.

Write the word as ``G o P`` with ``P`` its affine prefix.  In the coordinates
``w = P(z)`` the defect ``J = G^{-1} o phi o P^{-1}`` is computed as a
truncated series at ``a' = P(a)``.  A correction ``C`` with the same jet as
``J`` is then assembled from elementary letters, and the new word is
``G o C o P``:

    C = T_{a'+delta} o L o Phi_2 o ... o Phi_{d-1} o T_{-a'}

where ``delta = J(a') - a'``, ``L`` is the linear part written as a product
of transvections and diagonal overshears, and ``Phi_m`` absorbs the degree-m
part using the fixed monomial table.  After every stage the remaining defect
is recomputed by pushing the series through the inverse letters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .algebra import Jet, Series, jet_of, monomial_index
from .errors import GuardViolated, SingularJet
from .flows import AffineMap, AutomorphismWord
from .shears import OVERSHEAR, SHEAR, ElementaryAuto, ElementaryField, monomial_table

STAGE_TOL = 1e-9


@dataclass
class JetDefect:
    jet: Jet
    order: int

    def deviation(self, max_degree: int | None = None) -> float:
        """Largest coefficient of ``jet - identity``."""
        return self.jet.max_abs_diff(Jet.identity(self.jet.base, self.jet.order), max_degree)

    def linear_deviation(self) -> float:
        A = self.jet.linear_part
        return float(np.linalg.norm(A - np.eye(len(A)), 2))


def _target_map(target):
    if hasattr(target, "evaluate") and not isinstance(target, type):
        return target.evaluate
    return target


def _push(letters, comps):
    for L in letters:
        comps = L.evaluate(comps)
    return comps


def inner_split(word: AutomorphismWord):
    """``(G, P)`` with ``word = G o P``; ``G`` keeps the letters and suffix."""
    G = AutomorphismWord(word.n, word.letters, None, word.suffix)
    return G, word.prefix


def jet_defect(word: AutomorphismWord, target, a, order: int) -> JetDefect:
    """Jet of ``word^{-1} o target`` at ``a`` (series through the letters)."""
    a = np.asarray(a, dtype=complex).reshape(-1)
    tmap = _target_map(target)
    target_jet = jet_of(tmap, a, order)
    comps = word.inverse().evaluate(target_jet.components())
    return JetDefect(Jet.from_series(a, comps), order)


def _inner_defect(word: AutomorphismWord, target, a, order: int):
    """Defect ``G^{-1} o phi o P^{-1}`` at ``a' = P(a)``, plus ``a'`` and ``G``."""
    a = np.asarray(a, dtype=complex).reshape(-1)
    G, P = inner_split(word)
    tmap = _target_map(target)
    if P is None:
        inner_target, a_in = tmap, a
    else:
        Pinv = P.inverse()
        inner_target = lambda zs: tmap(Pinv.evaluate(zs))
        a_in = P.apply(a[:, None])[:, 0]
    tj = jet_of(inner_target, a_in, order)
    comps = G.inverse().evaluate(tj.components())
    return Jet.from_series(a_in, comps), a_in, G, P


# ---------------------------------------------------------------------------
# Letter builders


def translation_letters(delta, fixed_skeleton=False, tag=None) -> list[ElementaryAuto]:
    delta = np.asarray(delta, dtype=complex)
    n = len(delta)
    if fixed_skeleton:
        eye = np.eye(n, dtype=complex)
        return [ElementaryField(SHEAR, delta[j], eye[(j + 1) % n], eye[j], 0).flow(1.0, tag) for j in range(n)]
    if not np.any(delta):
        return []
    return [ElementaryField.constant(delta).flow(1.0, tag)]


def ldu(A: np.ndarray):
    """``A = L D U`` without pivoting (unit triangular ``L``, ``U``)."""
    A = np.array(A, dtype=complex)
    n = len(A)
    L = np.eye(n, dtype=complex)
    U = A.copy()
    for k in range(n):
        if abs(U[k, k]) < 1e-14:
            raise SingularJet("zero pivot in linear correction")
        for i in range(k + 1, n):
            L[i, k] = U[i, k] / U[k, k]
            U[i, :] -= L[i, k] * U[k, :]
    D = np.diag(U).copy()
    U = U / D[:, None]
    return L, D, U


def linear_letters(A: np.ndarray, fixed_skeleton=False, tag=None) -> list[ElementaryAuto]:
    """Letters whose composition is exactly the linear map ``A`` (near identity)."""
    n = len(A)
    L, D, U = ldu(A)
    eye = np.eye(n, dtype=complex)
    letters = []

    def transvection(col: np.ndarray, j: int):
        # z -> z + z_j * col with col_j = 0: a degree-1 shear with lam = e_j
        if fixed_skeleton:
            # one coordinate shear per entry; they share lam = e_j and commute
            for i in range(n):
                if i != j:
                    letters.append(ElementaryField(SHEAR, col[i], eye[j], eye[i], 1).flow(1.0, tag))
            return
        if not np.any(col):
            return
        s = np.linalg.norm(col)
        letters.append(ElementaryField(SHEAR, s, eye[j], col / s, 1).flow(1.0, tag))

    # U = prod_{j descending} (I + u_j e_j^T); rightmost factor acts first
    for j in range(1, n):
        col = np.zeros(n, dtype=complex)
        col[:j] = U[:j, j]
        transvection(col, j)
    for i in range(n):
        logd = np.log(D[i])
        if fixed_skeleton or logd != 0:
            letters.append(ElementaryField(OVERSHEAR, logd, eye[(i + 1) % n], eye[i], 1).flow(1.0, tag))
    # L = prod_{j ascending} (I + l_j e_j^T); apply the last one first
    for j in reversed(range(n - 1)):
        col = np.zeros(n, dtype=complex)
        col[j + 1:] = L[j + 1:, j]
        transvection(col, j)
    return letters


def homogeneous_correction(part: np.ndarray, m: int, n: int, seed: int = 0, fixed_skeleton=False,
                           tag=None) -> list[ElementaryAuto]:
    """Letters ``Phi_m`` whose degree-m part equals ``part``.

    ``part[j, k]`` is the coefficient of the k-th degree-m monomial (jet
    ordering) in component ``j``.  Table entries are scaled by these
    coefficients and emitted in lexicographic ``(alpha, j)`` order.
    """
    idx = monomial_index(n, m)
    alphas = [idx.alphas[k] for k in idx.of_degree(m)]
    table = monomial_table(n, m, seed)
    coeff = {}
    for k, alpha in enumerate(alphas):
        for j in range(n):
            coeff[(alpha, j)] = part[j, k]
    letters = []
    for key in sorted(coeff):
        h = coeff[key]
        if h == 0 and not fixed_skeleton:
            continue
        for E in table[key]:
            letters.append(E.with_coeff(E.coeff * h).flow(1.0, tag))
    return letters


# ---------------------------------------------------------------------------


@dataclass
class JetFixResult:
    word: AutomorphismWord
    defect_before: float
    defect_after: float
    displacement: float
    bound: float
    stages: list = field(default_factory=list)
    changed: bool = True

    def to_json(self) -> dict:
        return {
            "defect_before": self.defect_before,
            "defect_after": self.defect_after,
            "guard_displacement": self.displacement,
            "monomial_bound": self.bound,
            "stages": self.stages,
            "changed": self.changed,
            "letters_added": sum(s["letters"] for s in self.stages),
        }


def _recentered(J: Jet, a_in, target_value) -> list[Series]:
    """Series of ``h -> J(a' + h) - J(a')`` (the base point moved to 0)."""
    comps = J.components()
    return [c - complex(v) for c, v in zip(comps, target_value)]


def _letter_bound(letters, center, K) -> float:
    """Sum over letters of ``|t c| * sup_K |lam(z - center)|**m`` (shear size proxy)."""
    if K is None or not len(letters):
        return 0.0
    Zc = (np.asarray(K, dtype=complex) - center).T
    total = 0.0
    for L in letters:
        E = L.field
        lz = np.max(np.abs(E.lam @ Zc)) if E.m else 1.0
        inner = np.max(np.abs(np.conj(E.v) @ Zc)) if E.kind == OVERSHEAR else 1.0
        power = E.m if E.kind == SHEAR else E.m - 1
        total += abs(L.t * E.coeff) * lz**power * inner
    return float(total)


def jet_fix(word: AutomorphismWord, target, a, d: int, guard=None, eps_guard: float = 0.1, tol: float = 1e-8,
            table_seed: int = 0, fixed_skeleton: bool = False, force: bool = False, max_linear: float = 0.1) -> JetFixResult:
    """Match ``target``'s jet at ``a`` through order ``d - 1``; see module docstring."""
    a = np.asarray(a, dtype=complex).reshape(-1)
    n = word.n
    order = d - 1
    if order < 1:
        raise ValueError("d must be at least 2")
    tmap = _target_map(target)
    J, a_in, G, P = _inner_defect(word, tmap, a, order)
    before = J.max_abs_diff(Jet.identity(a_in, order))
    stages = []
    if before <= tol and not force:
        fixed = _value_tweak(word, tmap, a)
        return JetFixResult(fixed, before, before, 0.0, 0.0, [], False)
    A = J.linear_part
    lin_dev = float(np.linalg.norm(A - np.eye(n), 2))
    if lin_dev > max_linear:
        raise GuardViolated(
            f"linear part of the defect is {lin_dev:.3f} from the identity (limit {max_linear}); improve the base word first",
            displacement=float("nan"),
        )
    value = J.value
    delta = value - a_in
    # series of the recentered defect, with the affine jet stripped stage by stage
    cur = _recentered(J, a_in, value)
    idx = J.index
    lin = linear_letters(A, fixed_skeleton, {"stage": "jetfix", "degree": 1})
    cur = _push([L.inverse() for L in reversed(lin)], cur)
    degree_letters = {1: lin}
    _check_stage(cur, idx, 1, stages, len(lin))
    for m in range(2, order + 1):
        part = np.array([c.coeffs[idx.of_degree(m)] for c in cur])
        letters = homogeneous_correction(part, m, n, table_seed, fixed_skeleton, {"stage": "jetfix", "degree": m})
        cur = _push([L.inverse() for L in reversed(letters)], cur)
        degree_letters[m] = letters
        _check_stage(cur, idx, m, stages, len(letters))
    pre_t = translation_letters(-a_in, fixed_skeleton, {"stage": "jetfix", "degree": 0})
    post_t = translation_letters(a_in + delta, fixed_skeleton, {"stage": "jetfix", "degree": 0})
    correction = list(pre_t)
    for m in range(order, 1, -1):
        correction.extend(degree_letters[m])
    correction.extend(degree_letters[1])
    correction.extend(post_t)
    stages.insert(0, {"degree": 0, "letters": len(pre_t) + len(post_t), "residual": 0.0})
    new = AutomorphismWord(n, correction + list(word.letters), word.prefix, word.suffix)
    new = _value_tweak(new, tmap, a)
    disp, bound = 0.0, 0.0
    if guard is not None:
        Kpts = np.asarray(guard, dtype=complex)
        Zk = Kpts.T
        disp = float(np.max(np.linalg.norm(new.apply(Zk) - word.apply(Zk), axis=0)))
        Kin = Kpts if P is None else P(Kpts)
        bound = _letter_bound(correction[len(pre_t):len(correction) - len(post_t)], a_in, Kin)
        if disp > eps_guard:
            raise GuardViolated(f"jet correction moved the word by {disp:.3e} on the guard set (limit {eps_guard})",
                                displacement=disp)
    after_jet, _, _, _ = _inner_defect(new, tmap, a, order)
    after = after_jet.max_abs_diff(Jet.identity(a_in, order))
    return JetFixResult(new, before, after, disp, bound, stages, True)


def _check_stage(cur, idx, m, stages, nletters):
    """Every coefficient of degree <= m must agree with the identity."""
    low = idx.degrees <= m
    res = 0.0
    for j, c in enumerate(cur):
        dev = c.coeffs.copy()
        dev[idx.var_index[j]] -= 1.0
        res = max(res, float(np.max(np.abs(dev[low]))))
    stages.append({"degree": m, "letters": nletters, "residual": res})
    if res > STAGE_TOL:
        raise SingularJet(f"jet correction stalled at degree {m}: residual {res:.3e}")


def _value_tweak(word: AutomorphismWord, tmap: Callable, a) -> AutomorphismWord:
    """Shift the suffix so ``word(a)`` equals ``target(a)`` to roundoff."""
    a = np.asarray(a, dtype=complex)
    want = np.asarray(tmap(a[:, None].copy()))[:, 0]
    have = word.apply(a[:, None])[:, 0]
    gap = want - have
    suffix = word.suffix if word.suffix is not None else AffineMap.identity(word.n)
    return word.with_suffix(suffix.shifted(gap))


def jet_interpolate(word, target, a, d, guard=None, eps_guard=0.1, **kw) -> AutomorphismWord:
    return jet_fix(word, target, a, d, guard, eps_guard, **kw).word
