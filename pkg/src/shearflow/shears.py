"""Shear and overshear fields, their closed-form flows, and decompositions.

A shear field is ``c * lam(z)**m * v`` and an overshear field is
``d * lam(z)**(m-1) * <z, v> * v`` where ``lam(v) = 0``, ``|v| = 1`` and
``<z, v> = sum z_j conj(v_j)``.  Both are complete; their time-t maps are

    shear:      z + t c lam(z)**m v
    overshear:  z + (exp(t d lam(z)**(m-1)) - 1) <z, v> v

Homogeneous polynomial fields are written as sums of such fields by a
least-squares solve against a seeded dictionary.  The dictionary always
contains the coordinate fields that are elementary on their own
(``z_i**m e_j`` and ``z_i**(m-1) z_j e_j``); further random pairs
``(lam, v)`` cover the remaining monomials.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .algebra import Multipoly, PolyVectorField, compositions, expm1, pack, to_components, from_components
from .errors import DimensionMismatch, RankDeficient

SHEAR = "shear"
OVERSHEAR = "overshear"
ORTHO_TOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=complex).reshape(-1)
    a.setflags(write=False)
    return a


def _lin(coeffs: np.ndarray, zs):
    """Apply a linear form to components (skips zero coefficients)."""
    out = None
    for j, c in enumerate(coeffs):
        if c == 0:
            continue
        term = zs[j] if c == 1 else c * zs[j]
        out = term if out is None else out + term
    return 0 * zs[0] if out is None else out


@dataclass(frozen=True, eq=False)
class ElementaryField:
    kind: str
    coeff: complex
    lam: np.ndarray
    v: np.ndarray
    m: int

    def __post_init__(self):
        if self.kind not in (SHEAR, OVERSHEAR):
            raise ValueError(f"unknown kind {self.kind!r}")
        lam, v = _frozen(self.lam), _frozen(self.v)
        if lam.shape != v.shape:
            raise DimensionMismatch("lambda and v must have the same length")
        m = int(self.m)
        if m < 0 or (self.kind == OVERSHEAR and m < 1):
            raise ValueError(f"invalid degree {m} for {self.kind}")
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise ValueError("v must be a unit vector (use ElementaryField.make to normalize)")
        if abs(lam @ v) > ORTHO_TOL:
            raise ValueError(f"lambda(v) = {abs(lam @ v):.3e} is not zero")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "coeff", complex(self.coeff))
        nz_l, nz_v = np.flatnonzero(lam), np.flatnonzero(v)
        coord = None
        if len(nz_l) == 1 and len(nz_v) == 1 and lam[nz_l[0]] == 1 and v[nz_v[0]] == 1:
            coord = (int(nz_l[0]), int(nz_v[0]))
        object.__setattr__(self, "_coord", coord)

    @classmethod
    def make(cls, kind, coeff, lam, v, m):
        """Normalize ``v`` to unit length, absorbing the scale into ``coeff``."""
        v = np.asarray(v, dtype=complex)
        s = np.linalg.norm(v)
        if s == 0:
            raise ValueError("v must be nonzero")
        scale = s if kind == SHEAR else s * s
        # the overshear <z,v>v is quadratic in v, the shear is linear
        return cls(kind, complex(coeff) * scale, lam, v / s, m)

    @classmethod
    def constant(cls, w):
        """Degree-0 shear equal to the constant vector ``w``."""
        w = np.asarray(w, dtype=complex)
        s = np.linalg.norm(w)
        n = len(w)
        if s == 0:
            v = np.zeros(n, dtype=complex)
            v[0] = 1.0
            return cls(SHEAR, 0.0, np.eye(n)[1 % n], v, 0)
        v = w / s
        i = int(np.argmin(np.abs(v)))
        lam = np.eye(n, dtype=complex)[i] - v[i] * np.conj(v)
        lam = lam / np.linalg.norm(lam)
        lam = lam - (lam @ v) * np.conj(v)
        return cls(SHEAR, s, lam, v, 0)

    @property
    def n(self) -> int:
        return len(self.v)

    @property
    def is_coordinate(self) -> bool:
        return self._coord is not None

    def with_coeff(self, coeff) -> "ElementaryField":
        # lam, v and m are unchanged, so the invariants need no re-check
        new = object.__new__(ElementaryField)
        new.__dict__.update(self.__dict__)
        object.__setattr__(new, "coeff", complex(coeff))
        return new

    def evaluate(self, zs):
        """Field value on components (arrays or series)."""
        lz = _lin(self.lam, zs)
        if self.kind == SHEAR:
            scal = self.coeff * lz**self.m if self.m else self.coeff + 0 * lz
        else:
            inner = _lin(np.conj(self.v), zs)
            scal = self.coeff * inner * (lz ** (self.m - 1) if self.m > 1 else 1.0)
        return pack(zs, [scal * vj for vj in self.v])

    def __call__(self, z):
        Z, batch = to_components(z, self.n)
        out = self.evaluate(Z)
        return from_components(out, batch) if batch else out[:, 0]

    def to_field(self) -> PolyVectorField:
        """Expand into a sparse polynomial vector field."""
        n = self.n
        lam = Multipoly.linear(self.lam)
        if self.kind == SHEAR:
            scal = (lam**self.m) * self.coeff
        else:
            scal = (lam ** (self.m - 1)) * Multipoly.linear(np.conj(self.v)) * self.coeff
        return PolyVectorField([scal * complex(self.v[j]) for j in range(n)])

    def flow(self, t=1.0, tag=None) -> "ElementaryAuto":
        return ElementaryAuto(self, t, tag)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "coeff": [self.coeff.real, self.coeff.imag],
            "lambda": [[float(c.real), float(c.imag)] for c in self.lam],
            "v": [[float(c.real), float(c.imag)] for c in self.v],
            "m": self.m,
        }

    @classmethod
    def from_json(cls, data) -> "ElementaryField":
        cx = lambda p: complex(float(p[0]), float(p[1]))
        return cls(
            data["kind"],
            cx(data["coeff"]),
            [cx(p) for p in data["lambda"]],
            [cx(p) for p in data["v"]],
            int(data["m"]),
        )

    def __repr__(self):
        return f"ElementaryField({self.kind}, coeff={self.coeff:.6g}, m={self.m})"


def elementary_eval(E: ElementaryField, z):
    return E(z)


class ElementaryAuto:
    """Time-``t`` map of an elementary field, applied in closed form."""

    __slots__ = ("field", "t", "tag", "_scale")

    def __init__(self, field: ElementaryField, t=1.0, tag=None):
        self.field = field
        self.t = float(t)
        self.tag = dict(tag) if tag else None
        self._scale = self.t * field.coeff

    @property
    def n(self):
        return self.field.n

    def inverse(self) -> "ElementaryAuto":
        return ElementaryAuto(self.field, -self.t, self.tag)

    def apply_inplace(self, Z: np.ndarray) -> None:
        """Update components ``Z`` of shape ``(n, N)`` in place."""
        E = self.field
        s = self._scale
        if s == 0:
            return
        if E._coord is not None:
            i, j = E._coord
            if E.kind == SHEAR:
                Z[j] += s * Z[i] ** E.m if E.m else s
            else:
                g = s * Z[i] ** (E.m - 1) if E.m > 1 else s
                Z[j] *= np.exp(g)
            return
        lz = E.lam @ Z
        if E.kind == SHEAR:
            Z += np.outer(E.v, s * lz**E.m if E.m else np.full(Z.shape[1], s))
        else:
            inner = np.conj(E.v) @ Z
            g = s * lz ** (E.m - 1) if E.m > 1 else np.full(Z.shape[1], s)
            Z += np.outer(E.v, np.expm1(g) * inner)

    def apply(self, Z: np.ndarray) -> np.ndarray:
        out = np.array(Z, dtype=complex, copy=True)
        self.apply_inplace(out)
        return out

    def apply_series(self, C: np.ndarray, idx) -> None:
        """Update a stack of series coefficients ``C`` (shape ``(n, L)``) in place."""
        E = self.field
        s = self._scale
        if s == 0:
            return
        shift = idx.shift

        def mul(a, b):
            return np.append(a, 0.0)[shift] @ b

        def power(a, e):
            out = a
            for _ in range(e - 1):
                out = mul(out, a)
            return out

        if E._coord is not None:
            i, j = E._coord
            lz = C[i]
        else:
            lz = E.lam @ C
        if E.kind == SHEAR:
            if E.m == 0:
                disp = np.zeros(C.shape[1], dtype=complex)
                disp[0] = s
            else:
                disp = s * power(lz, E.m)
        else:
            inner = C[j] if E._coord is not None else np.conj(E.v) @ C
            if E.m == 1:
                if E._coord is not None:
                    C[j] *= np.exp(s)
                    return
                disp = np.expm1(s) * inner
            else:
                g = s * power(lz, E.m - 1)
                g0 = g[0]
                u = g.copy()
                u[0] = 0.0
                # exp(u) by Horner; u has no constant term so d terms suffice
                acc = np.zeros_like(u)
                for r in range(idx.d + 1, 0, -1):
                    acc = mul(acc, u) / r
                    acc[0] += 1.0
                em1 = np.exp(g0) * acc
                em1[0] -= 1.0
                disp = mul(em1, inner)
        if E._coord is not None:
            C[j] += disp
        else:
            C += np.outer(E.v, disp)

    def evaluate(self, zs):
        """Generic evaluation on components (arrays, series)."""
        if isinstance(zs, np.ndarray):
            return self.apply(zs)
        E = self.field
        s = self._scale
        lz = _lin(E.lam, zs)
        if E.kind == SHEAR:
            disp = s * lz**E.m if E.m else s + 0 * lz
        else:
            inner = _lin(np.conj(E.v), zs)
            g = s * lz ** (E.m - 1) if E.m > 1 else s + 0 * lz
            disp = expm1(g) * inner
        return [zs[j] + disp * E.v[j] if E.v[j] != 0 else zs[j] for j in range(len(zs))]

    def __call__(self, z):
        Z, batch = to_components(z, self.n)
        self.apply_inplace(Z)
        return from_components(Z, batch) if batch else Z[:, 0]

    def to_json(self) -> dict:
        out = self.field.to_json()
        out["t"] = self.t
        if self.tag:
            out.update(self.tag)
        return out

    @classmethod
    def from_json(cls, data) -> "ElementaryAuto":
        tag = {k: data[k] for k in ("stage", "degree") if k in data}
        return cls(ElementaryField.from_json(data), float(data.get("t", 1.0)), tag or None)

    def __repr__(self):
        return f"ElementaryAuto({self.field!r}, t={self.t:.6g})"


def elementary_flow(E: ElementaryField, t=1.0) -> ElementaryAuto:
    return ElementaryAuto(E, t)


# ---------------------------------------------------------------------------
# Coefficient-space templates


@lru_cache(maxsize=None)
def field_basis(n: int, m: int):
    """Ordered basis ``(alpha, j)`` of m-homogeneous fields, and its lookup."""
    alphas = compositions(m, n)
    basis = [(a, j) for a in alphas for j in range(n)]
    return tuple(basis), {b: i for i, b in enumerate(basis)}


def _multinomial(alpha) -> float:
    return math.factorial(sum(alpha)) / math.prod(math.factorial(a) for a in alpha)


def template_vectors(kind: str, lam: np.ndarray, v: np.ndarray, m: int) -> np.ndarray:
    """Coefficient vectors of unit-coefficient templates, one row per pair.

    ``lam`` and ``v`` have shape ``(P, n)``; the result has shape ``(P, dim)``
    in the ordering of :func:`field_basis`.
    """
    lam = np.atleast_2d(lam)
    v = np.atleast_2d(v)
    P, n = lam.shape
    basis, lookup = field_basis(n, m)
    out = np.zeros((P, len(basis)), dtype=complex)
    if kind == SHEAR:
        for alpha in compositions(m, n):
            scal = _multinomial(alpha) * np.prod(lam ** np.array(alpha), axis=1)
            for j in range(n):
                out[:, lookup[(alpha, j)]] = scal * v[:, j]
        return out
    vc = np.conj(v)
    for beta in compositions(m - 1, n):
        scal = _multinomial(beta) * np.prod(lam ** np.array(beta), axis=1)
        for i in range(n):
            alpha = list(beta)
            alpha[i] += 1
            alpha = tuple(alpha)
            term = scal * vc[:, i]
            for j in range(n):
                out[:, lookup[(alpha, j)]] += term * v[:, j]
    return out


def coefficient_vector(V: PolyVectorField, m: int) -> np.ndarray:
    basis, lookup = field_basis(V.n, m)
    b = np.zeros(len(basis), dtype=complex)
    for j, comp in enumerate(V.components):
        for alpha, c in comp.terms.items():
            if sum(alpha) != m:
                raise ValueError(f"field is not {m}-homogeneous")
            b[lookup[(alpha, j)]] = c
    return b


def coordinate_templates(n: int, m: int) -> list[tuple[ElementaryField, tuple]]:
    """Elementary fields that are single monomials, with the monomial they hit."""
    eye = np.eye(n, dtype=complex)
    out = []
    if m == 0:
        for j in range(n):
            out.append((ElementaryField(SHEAR, 1.0, eye[(j + 1) % n], eye[j], 0), ((0,) * n, j)))
        return out
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            a = [0] * n
            a[i] = m
            out.append((ElementaryField(SHEAR, 1.0, eye[i], eye[j], m), (tuple(a), j)))
    for j in range(n):
        for i in range(n):
            if i == j:
                continue
            a = [0] * n
            a[i] += m - 1
            a[j] += 1
            out.append((ElementaryField(OVERSHEAR, 1.0, eye[i], eye[j], m), (tuple(a), j)))
            if m == 1:
                break  # lam is irrelevant for m = 1, one template per j suffices
    return out


def random_pairs(rng: np.random.Generator, n: int, count: int):
    """``count`` pairs ``(lam, v)`` with ``|v| = 1`` and ``lam(v) = 0``."""
    v = rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    lam = rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n))
    lam -= np.sum(lam * v, axis=1, keepdims=True) * np.conj(v)
    lam /= np.linalg.norm(lam, axis=1, keepdims=True)
    # second pass removes the roundoff left by the first projection
    lam -= np.sum(lam * v, axis=1, keepdims=True) * np.conj(v)
    return lam, v


class Dictionary:
    """A fixed list of unit-coefficient elementary templates of degree ``m``.

    ``solve`` is linear in the input: coordinate monomials are assigned
    directly and the remaining monomials get the minimum-norm least-squares
    combination of all templates.
    """

    def __init__(self, n: int, m: int, seed: int, pairs: int):
        self.n, self.m, self.seed, self.pairs = n, m, seed, pairs
        basis, lookup = field_basis(n, m)
        self.dim = len(basis)
        coord = coordinate_templates(n, m)
        templates = [E for E, _ in coord]
        self.direct = {lookup[mono]: idx for idx, (_, mono) in enumerate(coord)}
        if m >= 1 and pairs > 0:
            lam, v = random_pairs(np.random.default_rng([seed, n, m]), n, pairs)
            for p in range(pairs):
                templates.append(ElementaryField(SHEAR, 1.0, lam[p], v[p], m))
                templates.append(ElementaryField(OVERSHEAR, 1.0, lam[p], v[p], m))
        self.templates = tuple(templates)
        A = np.zeros((self.dim, len(templates)), dtype=complex)
        for k, E in enumerate(templates):
            A[:, k] = template_vectors(E.kind, E.lam[None], E.v[None], m)[0]
        self.matrix = A
        self.rest = np.array([i for i in range(self.dim) if i not in self.direct], dtype=int)
        self.pinv = np.linalg.pinv(A[:, :], rcond=1e-13) if len(self.rest) else None

    def __len__(self):
        return len(self.templates)

    def solve(self, b: np.ndarray) -> tuple[np.ndarray, float]:
        b = np.asarray(b, dtype=complex)
        x = np.zeros(len(self.templates), dtype=complex)
        for row, idx in self.direct.items():
            x[idx] = b[row]
        if len(self.rest):
            rest = np.zeros_like(b)
            rest[self.rest] = b[self.rest]
            if np.any(rest != 0):
                x = x + self.pinv @ rest
        residual = float(np.max(np.abs(self.matrix @ x - b))) if len(b) else 0.0
        return x, residual


@lru_cache(maxsize=256)
def dictionary(n: int, m: int, seed: int, pairs: int) -> Dictionary:
    return Dictionary(n, m, seed, pairs)


def pair_schedule(n: int, m: int) -> list[int]:
    """Increasing pair counts tried before giving up (cap: 4x the dimension)."""
    dim = len(field_basis(n, m)[0])
    ncoord = len(coordinate_templates(n, m))
    cap = 4 * dim
    out, p = [], max(2, dim)
    while ncoord + 2 * p <= cap:
        out.append(p)
        p *= 2
    if not out or ncoord + 2 * out[-1] < cap:
        out.append((cap - ncoord) // 2)
    return out


@dataclass
class DecompositionResult:
    parts: list
    residual: float
    attempts: int
    degree: int = -1

    def total(self, n: int) -> PolyVectorField:
        out = PolyVectorField.zero(n)
        for E in self.parts:
            out = out + E.to_field()
        return out

    def to_json(self) -> dict:
        return {
            "degree": self.degree,
            "residual": self.residual,
            "attempts": self.attempts,
            "parts": [E.to_json() for E in self.parts],
        }


def decompose_homogeneous(V: PolyVectorField, m: int | None = None, seed: int = 0, tol: float = 1e-9) -> DecompositionResult:
    """Write the m-homogeneous field ``V`` as a sum of elementary fields."""
    n = V.n
    if n < 2:
        raise DimensionMismatch("elementary decompositions need n >= 2")
    if m is None:
        degs = V.degrees()
        if len(degs) > 1:
            raise ValueError("field is not homogeneous")
        m = degs[0] if degs else 1
    b = coefficient_vector(V, m)
    if m == 0:
        w = b.reshape(1, n)[0]
        parts = [ElementaryField.constant(w)] if np.any(w != 0) else []
        return DecompositionResult(parts, 0.0, 0, 0)
    if not np.any(b):
        return DecompositionResult([], 0.0, 0, m)
    attempts = 0
    best = None
    for pairs in pair_schedule(n, m):
        D = dictionary(n, m, seed, pairs)
        attempts += 1
        x, res = D.solve(b)
        if best is None or res < best[1]:
            best = (D, res, x)
        if res <= tol:
            parts = [E.with_coeff(c) for E, c in zip(D.templates, x) if c != 0]
            return DecompositionResult(parts, res, attempts, m)
        if not len(D.rest):
            break
    raise RankDeficient(
        f"degree-{m} decomposition residual {best[1]:.3e} exceeds tolerance {tol:.1e}",
        residual=best[1],
        attempts=attempts,
    )


def decompose_field(X: PolyVectorField, seed: int = 0, tol: float = 1e-9) -> list[tuple[int, DecompositionResult]]:
    """Homogeneous split followed by per-degree decomposition."""
    out = []
    for m in X.degrees():
        out.append((m, decompose_homogeneous(X.homogeneous_part(m), m, seed, tol)))
    return out


_table_lock = threading.Lock()
_tables: dict = {}


def monomial_table(n: int, m: int, seed: int = 0, tol: float = 1e-10) -> dict:
    """Fixed decompositions of every monomial field ``z**alpha e_j`` (j 0-based).

    The table is built once per ``(n, m, seed)`` and shared.  Each value is a
    tuple of elementary fields summing to the monomial.
    """
    if n < 2 or m < 1:
        raise ValueError("monomial tables need n >= 2 and m >= 1")
    key = (n, m, seed)
    table = _tables.get(key)
    if table is not None:
        return table
    with _table_lock:
        table = _tables.get(key)
        if table is None:
            basis, lookup = field_basis(n, m)
            built = {}
            for alpha, j in basis:
                V = PolyVectorField.from_terms(n, {(alpha, j): 1.0})
                res = decompose_homogeneous(V, m, seed, tol)
                built[(alpha, j)] = tuple(res.parts)
            table = _tables[key] = built
    return table
