"""Automorphism words, isotopies, and their approximation by splitting.

The approximation scheme freezes the time-dependent field of an isotopy at
``N`` nodes (an Euler partition), writes each frozen field as a sum of
elementary fields, and replaces the flow of each sum by ``n`` rounds of the
composition of the elementary flows (Lie splitting).  Everything is checked
against either the isotopy itself or an RK4 integration of the field.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .algebra import Multipoly, PolyVectorField, Series, from_components, monomial_index, pack, to_components
from .errors import BudgetExhausted, IllConditioned, NonFinite
from .shears import ElementaryAuto, decompose_field


def _cx(p):
    return complex(float(p[0]), float(p[1]))


class AffineMap:
    """``z -> matrix @ z + translation`` (the matrix is unitary for normalizations)."""

    __slots__ = ("matrix", "translation")

    def __init__(self, matrix, translation=None):
        M = np.array(matrix, dtype=complex)
        n = M.shape[0]
        b = np.zeros(n, dtype=complex) if translation is None else np.array(translation, dtype=complex).reshape(n)
        M.setflags(write=False)
        b.setflags(write=False)
        self.matrix = M
        self.translation = b

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n))

    @classmethod
    def translation_by(cls, b):
        b = np.asarray(b, dtype=complex)
        return cls(np.eye(len(b)), b)

    @property
    def n(self):
        return self.matrix.shape[0]

    def apply(self, Z: np.ndarray) -> np.ndarray:
        return self.matrix @ Z + self.translation[:, None]

    def evaluate(self, zs):
        if isinstance(zs, np.ndarray):
            return self.apply(zs)
        out = []
        for i in range(self.n):
            acc = self.translation[i] + 0 * zs[0]
            for j in range(self.n):
                if self.matrix[i, j] != 0:
                    acc = acc + self.matrix[i, j] * zs[j]
            out.append(acc)
        return out

    def __call__(self, z):
        Z, batch = to_components(z, self.n)
        out = self.apply(Z)
        return from_components(out, batch) if batch else out[:, 0]

    def inverse(self) -> "AffineMap":
        Minv = np.linalg.inv(self.matrix)
        return AffineMap(Minv, -Minv @ self.translation)

    def compose(self, inner: "AffineMap") -> "AffineMap":
        """``self o inner``."""
        return AffineMap(self.matrix @ inner.matrix, self.matrix @ inner.translation + self.translation)

    def shifted(self, delta) -> "AffineMap":
        return AffineMap(self.matrix, self.translation + np.asarray(delta, dtype=complex))

    def to_json(self) -> dict:
        return {
            "unitary": [[[float(c.real), float(c.imag)] for c in row] for row in self.matrix],
            "translation": [[float(c.real), float(c.imag)] for c in self.translation],
        }

    @classmethod
    def from_json(cls, data) -> "AffineMap":
        M = [[_cx(c) for c in row] for row in data["unitary"]]
        return cls(M, [_cx(c) for c in data["translation"]])


class AutomorphismWord:
    """``suffix o letters[-1] o ... o letters[0] o prefix``."""

    def __init__(self, n: int, letters: Sequence[ElementaryAuto] = (), prefix: AffineMap | None = None,
                 suffix: AffineMap | None = None):
        self.n = int(n)
        self.letters = tuple(letters)
        self.prefix = prefix
        self.suffix = suffix
        for L in self.letters:
            if L.n != self.n:
                raise ValueError("letter dimension does not match the word")

    def __len__(self):
        return len(self.letters)

    def apply(self, Z: np.ndarray) -> np.ndarray:
        """Evaluate on components of shape ``(n, N)``."""
        Z = np.array(Z, dtype=complex, copy=True)
        if self.prefix is not None:
            Z = self.prefix.apply(Z)
        for L in self.letters:
            L.apply_inplace(Z)
        if self.suffix is not None:
            Z = self.suffix.apply(Z)
        return Z

    def evaluate(self, zs):
        if isinstance(zs, np.ndarray):
            return self.apply(zs)
        zs = list(zs)
        if zs and isinstance(zs[0], Series):
            return self._evaluate_series(zs)
        if self.prefix is not None:
            zs = self.prefix.evaluate(zs)
        for L in self.letters:
            zs = L.evaluate(zs)
        if self.suffix is not None:
            zs = self.suffix.evaluate(zs)
        return zs

    def _evaluate_series(self, zs):
        idx = zs[0].index
        C = np.array([c.coeffs for c in zs])
        for aff in (self.prefix,):
            if aff is not None:
                C = aff.matrix @ C
                C[:, 0] += aff.translation
        for L in self.letters:
            L.apply_series(C, idx)
        if self.suffix is not None:
            C = self.suffix.matrix @ C
            C[:, 0] += self.suffix.translation
        return [Series(idx, row) for row in C]

    def __call__(self, z):
        Z, batch = to_components(z, self.n)
        out = self.apply(Z)
        return from_components(out, batch) if batch else out[:, 0]

    def inverse(self) -> "AutomorphismWord":
        return AutomorphismWord(
            self.n,
            [L.inverse() for L in reversed(self.letters)],
            prefix=self.suffix.inverse() if self.suffix is not None else None,
            suffix=self.prefix.inverse() if self.prefix is not None else None,
        )

    def then(self, other: "AutomorphismWord") -> "AutomorphismWord":
        """``other o self`` when neither side has inner affines in the way."""
        if self.suffix is not None or other.prefix is not None:
            raise ValueError("cannot concatenate across affine maps")
        return AutomorphismWord(self.n, self.letters + other.letters, self.prefix, other.suffix)

    def with_suffix(self, suffix) -> "AutomorphismWord":
        return AutomorphismWord(self.n, self.letters, self.prefix, suffix)

    def with_prefix(self, prefix) -> "AutomorphismWord":
        return AutomorphismWord(self.n, self.letters, prefix, self.suffix)

    def to_json(self) -> dict:
        out = {"n": self.n, "letters": [L.to_json() for L in self.letters]}
        if self.prefix is not None:
            out["prefix"] = self.prefix.to_json()
        if self.suffix is not None:
            out["suffix"] = self.suffix.to_json()
        return out

    @classmethod
    def from_json(cls, data) -> "AutomorphismWord":
        pre = AffineMap.from_json(data["prefix"]) if data.get("prefix") else None
        suf = AffineMap.from_json(data["suffix"]) if data.get("suffix") else None
        return cls(int(data["n"]), [ElementaryAuto.from_json(L) for L in data["letters"]], pre, suf)


def word_eval(word: AutomorphismWord, z):
    return word(z)


def word_inverse(word: AutomorphismWord) -> AutomorphismWord:
    return word.inverse()


# ---------------------------------------------------------------------------
# Isotopies


@dataclass
class Isotopy:
    """A family ``phi_t`` with ``phi_0 = id``; maps act on components ``(n, N)``.

    ``evaluate(t, Z)`` should use only ring operations and
    :func:`shearflow.algebra.exp` so the same code also runs on series.
    """

    n: int
    evaluate: Callable
    derivative: Callable | None = None
    name: str = "isotopy"

    def __call__(self, t, z):
        Z, batch = to_components(z, self.n)
        out = np.asarray(self.evaluate(t, Z))
        return from_components(out, batch) if batch else out[:, 0]

    def time_map(self, t=1.0) -> Callable:
        return lambda zs: self.evaluate(t, zs)

    def velocity(self, t, Z: np.ndarray, h: float = 1e-4) -> np.ndarray:
        if self.derivative is not None:
            return np.asarray(self.derivative(t, Z))
        return (np.asarray(self.evaluate(t + h, Z)) - np.asarray(self.evaluate(t - h, Z))) / (2 * h)


def scaling_isotopy(n: int, rate=1.0) -> Isotopy:
    from .algebra import exp

    return Isotopy(
        n,
        lambda t, Z: pack(Z, [exp(rate * t) * z for z in Z]),
        lambda t, Z: pack(Z, [rate * np.exp(rate * t) * z for z in Z]),
        "scaling",
    )


def shear_isotopy(n: int = 2) -> Isotopy:
    """``(z1, z2 + t z1**2, ...)``, the flow of the field ``z1**2 e2``."""

    def ev(t, Z):
        out = list(Z)
        out[1] = Z[1] + t * Z[0] * Z[0]
        return pack(Z, out)

    def dv(t, Z):
        out = [0 * z for z in Z]
        out[1] = Z[0] * Z[0]
        return pack(Z, out)

    return Isotopy(n, ev, dv, "shear")


def rotation_isotopy(n: int = 2) -> Isotopy:
    """Rotation of the ``(z1, z2)`` plane by angle ``t`` (field ``(-z2, z1)``)."""

    def ev(t, Z):
        c, s = math.cos(t), math.sin(t)
        out = list(Z)
        out[0] = c * Z[0] - s * Z[1]
        out[1] = s * Z[0] + c * Z[1]
        return pack(Z, out)

    def dv(t, Z):
        c, s = math.cos(t), math.sin(t)
        out = [0 * z for z in Z]
        out[0] = -s * Z[0] - c * Z[1]
        out[1] = c * Z[0] - s * Z[1]
        return pack(Z, out)

    return Isotopy(n, ev, dv, "rotation")


def rotation_field(n: int = 2) -> PolyVectorField:
    comps = [Multipoly.zero(n) for _ in range(n)]
    comps[0] = -Multipoly.variable(n, 1)
    comps[1] = Multipoly.variable(n, 0)
    return PolyVectorField(comps)


# ---------------------------------------------------------------------------
# Field fitting


@dataclass
class FieldFit:
    field: PolyVectorField
    residual: float
    condition: float


def vandermonde(Y: np.ndarray, D: int) -> np.ndarray:
    """Columns ``Y**alpha`` for ``|alpha| <= D`` in graded order."""
    idx = monomial_index(Y.shape[0], D)
    cols = np.empty((Y.shape[1], idx.size), dtype=complex)
    cols[:, 0] = 1.0
    for k in range(1, idx.size):
        alpha = idx.alphas[k]
        j = next(i for i, e in enumerate(alpha) if e)
        prev = list(alpha)
        prev[j] -= 1
        cols[:, k] = cols[:, idx.lookup[tuple(prev)]] * Y[j]
    return cols


def field_from_isotopy(iso: Isotopy, t: float, samples, D: int = 6, h_t: float = 1e-4,
                       max_condition: float = 1e12, prune: float = 1e-9) -> FieldFit:
    """Least-squares polynomial field ``X_t`` with ``X_t(phi_t(z)) = d/dt phi_t(z)``."""
    if D < 1:
        raise ValueError("degree must be positive")
    Z, _ = to_components(samples, iso.n)
    Y = np.asarray(iso.evaluate(t, Z))
    rhs = iso.velocity(t, Z, h_t).T
    V = vandermonde(Y, D)
    scale = np.linalg.norm(V, axis=0)
    scale[scale == 0] = 1.0
    Vs = V / scale
    cond = float(np.linalg.cond(Vs))
    if not np.isfinite(cond) or cond > max_condition:
        raise IllConditioned(f"fit matrix condition {cond:.3e} exceeds {max_condition:.1e}", condition=cond)
    sol, *_ = np.linalg.lstsq(Vs, rhs, rcond=None)
    coef = sol / scale[:, None]
    cut = prune * max(1.0, float(np.max(np.abs(coef))))
    coef[np.abs(coef) <= cut] = 0.0
    residual = float(np.max(np.abs(V @ coef - rhs)))
    idx = monomial_index(iso.n, D)
    comps = [Multipoly(iso.n, {idx.alphas[k]: coef[k, j] for k in np.flatnonzero(coef[:, j])}) for j in range(iso.n)]
    return FieldFit(PolyVectorField(comps), residual, cond)


def euler_nodes(N: int, node: str = "midpoint") -> np.ndarray:
    if N < 1:
        raise ValueError("need at least one step")
    j = np.arange(N)
    if node == "midpoint":
        return (j + 0.5) / N
    if node == "left":
        return j / N
    raise ValueError(f"unknown node rule {node!r}")


def euler_partition(iso: Isotopy, N: int, samples, D: int = 6, node: str = "midpoint", **fit_kw) -> list[PolyVectorField]:
    """Frozen fields at the ``N`` nodes; each is meant to run for time ``1/N``."""
    return [field_from_isotopy(iso, t, samples, D, **fit_kw).field for t in euler_nodes(N, node)]


def splitting_letters(parts: Sequence, h: float, substeps: int, tag=None) -> list[ElementaryAuto]:
    one_round = [E.flow(h, tag) for E in parts]
    return one_round * substeps


def splitting_word(fields: Sequence[PolyVectorField], substeps: int, seed: int = 0, tol: float = 1e-9,
                   total_time: float = 1.0) -> AutomorphismWord:
    """Lie splitting of the piecewise-autonomous flow of ``fields``.

    Field ``j`` runs for ``total_time / N``; its elementary parts are cycled
    ``substeps`` times with step ``total_time / (N * substeps)``.
    """
    if not fields:
        raise ValueError("need at least one field")
    n = fields[0].n
    N = len(fields)
    h = total_time / (N * substeps)
    letters = []
    for X in fields:
        parts = [E for _, res in decompose_field(X, seed, tol) for E in res.parts]
        letters.extend(splitting_letters(parts, h, substeps))
    return AutomorphismWord(n, letters)


# ---------------------------------------------------------------------------
# RK4 oracle


def _as_rhs(field_spec):
    if isinstance(field_spec, PolyVectorField):
        return lambda t, Z: field_spec.apply(Z)
    if hasattr(field_spec, "evaluate") and hasattr(field_spec, "kind"):
        return lambda t, Z: field_spec.evaluate(Z)
    if callable(field_spec):
        return field_spec
    raise TypeError("field must be a PolyVectorField, elementary field or callable (t, Z)")


def rk4_oracle(field_spec, z0, T: float = 1.0, steps: int = 100, radius: float = 1e6):
    """Classical RK4 for ``dz/dt = X_t(z)``.

    ``field_spec`` is an autonomous field, a callable ``(t, Z) -> dZ`` on
    components, or a list of ``(field, duration)`` segments run in order (then
    ``T`` is ignored and ``steps`` applies per segment).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    z0 = np.asarray(z0, dtype=complex)
    n = z0.shape[-1]
    Z, batch = to_components(z0, n)
    segments = field_spec if isinstance(field_spec, (list, tuple)) else [(field_spec, T)]
    t0 = 0.0
    for seg, dur in segments:
        f = _as_rhs(seg)
        h = dur / steps
        for s in range(steps):
            t = t0 + s * h
            k1 = f(t, Z)
            k2 = f(t + h / 2, Z + (h / 2) * k1)
            k3 = f(t + h / 2, Z + (h / 2) * k2)
            k4 = f(t + h, Z + h * k3)
            Z = Z + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(Z)) or np.max(np.abs(Z)) > radius:
                raise NonFinite(f"trajectory left the radius-{radius:g} ball at t={t + h:.4g}")
        t0 += dur
    return from_components(Z, batch) if batch else Z[:, 0]


# ---------------------------------------------------------------------------
# Escalating approximation


@dataclass
class ApproxConfig:
    N: int = 1
    substeps: int = 1
    D: int = 6
    max_N: int = 64
    max_substeps: int = 1024
    max_D: int = 10
    seed: int = 0
    tol: float = 1e-9
    node: str = "midpoint"
    min_gain: float = 0.25

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ApproximationReport:
    word: AutomorphismWord
    sup_error: float
    N: int
    substeps: int
    D: int
    seed: int
    history: list = field(default_factory=list)
    fit_residual: float = float("nan")

    def table(self) -> list[tuple]:
        """Rows ``(n_substeps, N_steps, D, sup_error)``."""
        return [tuple(r) for r in self.history]

    def to_json(self) -> dict:
        return {
            "sup_error": self.sup_error,
            "N_steps": self.N,
            "n_substeps": self.substeps,
            "D": self.D,
            "seed": self.seed,
            "fit_residual": self.fit_residual,
            "letters": len(self.word),
            "history": [list(r) for r in self.history],
        }


def sup_error(word: AutomorphismWord, Z: np.ndarray, ref: np.ndarray) -> float:
    diff = word.apply(Z) - ref
    return float(np.max(np.linalg.norm(diff, axis=0)))


def build_word(iso: Isotopy, Z_fit, N: int, substeps: int, D: int, seed: int, tol: float, node: str = "midpoint"):
    fits = [field_from_isotopy(iso, t, Z_fit, D) for t in euler_nodes(N, node)]
    word = splitting_word([f.field for f in fits], substeps, seed, tol)
    return word, max(f.residual for f in fits)


def approximate_isotopy(iso: Isotopy, K, eps: float, config: ApproxConfig | None = None) -> ApproximationReport:
    """Escalate ``(substeps, N, D)`` until the sampled sup-error on ``K`` is at most ``eps``.

    Substeps are doubled while that still buys at least ``min_gain`` relative
    improvement (a doubling that does not is undone), then the Euler partition
    is refined, then the fit degree is raised by two.
    """
    cfg = config or ApproxConfig()
    Kpts = np.asarray(K, dtype=complex)
    Z, _ = to_components(Kpts, iso.n)
    ref = np.asarray(iso.evaluate(1.0, Z))
    N, sub, D = cfg.N, cfg.substeps, cfg.D
    history = []
    best = None
    stalled = False
    prev_err = None
    while True:
        word, fit_res = build_word(iso, Kpts, N, sub, D, cfg.seed, cfg.tol, cfg.node)
        err = sup_error(word, Z, ref)
        history.append((sub, N, D, err))
        rep = ApproximationReport(word, err, N, sub, D, cfg.seed, list(history), fit_res)
        if best is None or err < best.sup_error:
            best = rep
        if err <= eps:
            rep.history = list(history)
            return rep
        if prev_err is not None and history[-2][0] < sub and err > (1 - cfg.min_gain) * prev_err:
            # the last doubling of substeps did not pay off; take it back
            stalled = True
            sub //= 2
        prev_err = err
        if not stalled and 2 * sub <= cfg.max_substeps:
            sub *= 2
        elif 2 * N <= cfg.max_N:
            N *= 2
            stalled = False
        elif D + 2 <= cfg.max_D:
            D += 2
            stalled = False
        elif 4 * sub <= cfg.max_substeps:
            sub *= 4
        else:
            best.history = list(history)
            raise BudgetExhausted(
                f"sup error {best.sup_error:.3e} > {eps:.1e} within budget (N<={cfg.max_N}, n<={cfg.max_substeps}, D<={cfg.max_D})",
                report=best,
            )
