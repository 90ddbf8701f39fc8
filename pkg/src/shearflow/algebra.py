"""Complex multivariate polynomials, polynomial maps and truncated jets.

Two representations live here:

* :class:`Multipoly` is a sparse exponent map ``alpha -> coefficient``.  Shear
  fields are extremely sparse, so this is the storage used for vector fields
  and polynomial maps.
* :class:`Series` is a dense truncated power series in the offsets
  ``h = z - base`` up to a fixed total degree.  Jets of automorphism words are
  computed by pushing series through the letters, which keeps exponential
  (overshear) letters exact up to truncation.

Maps throughout the package accept *components-first* input: a sequence of
``n`` components, each of which may be a numpy array (vectorized over
points), a :class:`Series` or a :class:`Multipoly`.  Point-level helpers such
as :func:`poly_eval` take arrays whose last axis holds the coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, IncompatibleJets, SingularJet

Alpha = tuple[int, ...]


def compositions(total: int, n: int) -> list[Alpha]:
    """All multi-indices of length ``n`` and size ``total``, lex-descending."""
    if n == 1:
        return [(total,)]
    out = []
    for first in range(total, -1, -1):
        for rest in compositions(total - first, n - 1):
            out.append((first,) + rest)
    return out


def exp(x):
    """Exponential that dispatches on :class:`Series` and numpy input."""
    if isinstance(x, Series):
        return x.exp()
    return np.exp(x)


def expm1(x):
    if isinstance(x, Series):
        return x.exp() - 1.0
    return np.expm1(x)


def pack(like, comps):
    """Return ``comps`` stacked like ``like`` (ndarray in, ndarray out)."""
    if isinstance(like, np.ndarray):
        return np.stack([np.broadcast_to(np.asarray(c, dtype=complex), like.shape[1:]) for c in comps])
    return list(comps)


def to_components(z, n: int) -> tuple[np.ndarray, tuple]:
    """Points ``(..., n)`` -> components-first ``(n, N)`` plus the batch shape."""
    z = np.asarray(z, dtype=complex)
    if z.ndim == 0 or z.shape[-1] != n:
        raise DimensionMismatch(f"expected points with last axis {n}, got shape {z.shape}")
    batch = z.shape[:-1]
    return z.reshape(-1, n).T.copy(), batch


def from_components(Z: np.ndarray, batch: tuple) -> np.ndarray:
    Z = np.asarray(Z)
    return Z.T.reshape(batch + (Z.shape[0],))


def _cjson(c: complex) -> list[float]:
    return [float(c.real), float(c.imag)]


def _cparse(x) -> complex:
    if isinstance(x, (list, tuple)):
        return complex(float(x[0]), float(x[1]))
    return complex(x)


# ---------------------------------------------------------------------------
# Sparse polynomials


class Multipoly:
    """Sparse polynomial in ``n`` complex variables.

    Exactly-zero coefficients are never stored.  Anything else is kept until
    :meth:`normalize` is called explicitly.
    """

    __slots__ = ("n", "_terms")

    def __init__(self, n: int, terms: Mapping[Iterable[int], complex] | None = None):
        if int(n) < 1:
            raise ValueError("number of variables must be positive")
        self.n = int(n)
        clean: dict[Alpha, complex] = {}
        for alpha, c in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.n:
                raise DimensionMismatch(f"multi-index {alpha} has length {len(alpha)}, expected {self.n}")
            if alpha and min(alpha) < 0:
                raise ValueError(f"negative exponent in {alpha}")
            c = complex(c)
            if c != 0:
                clean[alpha] = clean.get(alpha, 0) + c
        self._terms = clean

    @property
    def terms(self) -> Mapping[Alpha, complex]:
        return MappingProxyType(self._terms)

    # constructors
    @classmethod
    def zero(cls, n):
        return cls(n)

    @classmethod
    def constant(cls, n, c):
        return cls(n, {(0,) * n: c})

    @classmethod
    def monomial(cls, n, alpha, c=1.0):
        return cls(n, {tuple(alpha): c})

    @classmethod
    def variable(cls, n, j):
        alpha = [0] * n
        alpha[j] = 1
        return cls(n, {tuple(alpha): 1.0})

    @classmethod
    def linear(cls, coeffs):
        coeffs = np.asarray(coeffs, dtype=complex)
        n = len(coeffs)
        return cls(n, {tuple(int(i == j) for i in range(n)): coeffs[j] for j in range(n)})

    # structure
    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        """Maximal total degree; ``-1`` for the zero polynomial."""
        return max((sum(a) for a in self._terms), default=-1)

    def is_homogeneous(self) -> bool:
        return len({sum(a) for a in self._terms}) <= 1

    def homogeneous_part(self, m: int) -> "Multipoly":
        return Multipoly(self.n, {a: c for a, c in self._terms.items() if sum(a) == m})

    def degrees(self) -> list[int]:
        return sorted({sum(a) for a in self._terms})

    def normalize(self, eps: float = 0.0) -> "Multipoly":
        return Multipoly(self.n, {a: c for a, c in self._terms.items() if abs(c) > eps})

    def max_abs_diff(self, other: "Multipoly") -> float:
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        return max((abs(self._terms.get(a, 0) - other._terms.get(a, 0)) for a in keys), default=0.0)

    def max_abs(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    # arithmetic
    def _check(self, other):
        if other.n != self.n:
            raise DimensionMismatch(f"dimension {self.n} vs {other.n}")

    def __add__(self, other):
        if isinstance(other, Multipoly):
            self._check(other)
            out = dict(self._terms)
            for a, c in other._terms.items():
                out[a] = out.get(a, 0) + c
            return Multipoly(self.n, out)
        if np.isscalar(other):
            return self + Multipoly.constant(self.n, other)
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return Multipoly(self.n, {a: -c for a, c in self._terms.items()})

    def __sub__(self, other):
        if isinstance(other, Multipoly) or np.isscalar(other):
            return self + (-other)
        return NotImplemented

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Multipoly):
            self._check(other)
            out: dict[Alpha, complex] = {}
            for a, c in self._terms.items():
                for b, d in other._terms.items():
                    key = tuple(x + y for x, y in zip(a, b))
                    out[key] = out.get(key, 0) + c * d
            return Multipoly(self.n, out)
        if np.isscalar(other):
            return Multipoly(self.n, {a: c * other for a, c in self._terms.items()})
        return NotImplemented

    __rmul__ = __mul__

    def __pow__(self, e: int):
        e = int(e)
        if e < 0:
            raise ValueError("negative power")
        out = Multipoly.constant(self.n, 1.0)
        base = self
        while e:
            if e & 1:
                out = out * base
            e >>= 1
            if e:
                base = base * base
        return out

    def __eq__(self, other):
        if not isinstance(other, Multipoly):
            return NotImplemented
        return self.n == other.n and self._terms == other._terms

    __hash__ = None

    def __repr__(self):
        body = " + ".join(f"({c:.6g})*z^{a}" for a, c in sorted(self._terms.items())) or "0"
        return f"Multipoly(n={self.n}: {body})"

    # evaluation
    def evaluate(self, zs: Sequence):
        """Evaluate on components (arrays, :class:`Series` or :class:`Multipoly`)."""
        if len(zs) != self.n:
            raise DimensionMismatch(f"expected {self.n} components, got {len(zs)}")
        if isinstance(zs, np.ndarray):
            return self._eval_array(zs)
        zero = 0 * zs[0]
        if not self._terms:
            return zero
        powers: dict[tuple[int, int], object] = {}

        def pw(j, e):
            key = (j, e)
            if key not in powers:
                powers[key] = zs[j] if e == 1 else pw(j, e - 1) * zs[j]
            return powers[key]

        total = zero
        for alpha, c in self._terms.items():
            term = None
            for j, e in enumerate(alpha):
                if e:
                    term = pw(j, e) if term is None else term * pw(j, e)
            total = total + (c if term is None else c * term)
        return total

    def _eval_array(self, Z: np.ndarray) -> np.ndarray:
        out = np.zeros(Z.shape[1:], dtype=complex)
        if not self._terms:
            return out
        maxdeg = [max(a[j] for a in self._terms) for j in range(self.n)]
        table = []
        for j in range(self.n):
            row = [None] * (maxdeg[j] + 1)
            if maxdeg[j] >= 1:
                row[1] = Z[j]
            for e in range(2, maxdeg[j] + 1):
                row[e] = row[e - 1] * Z[j]
            table.append(row)
        for alpha, c in self._terms.items():
            term = c
            for j, e in enumerate(alpha):
                if e:
                    term = term * table[j][e]
            out = out + term
        return out

    def __call__(self, z):
        return poly_eval(self, z)

    # serialization
    def to_json(self) -> dict:
        return {
            "n": self.n,
            "terms": [
                {"alpha": list(a), "re": float(c.real), "im": float(c.imag)}
                for a, c in sorted(self._terms.items())
            ],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "Multipoly":
        n = int(data["n"])
        terms = {}
        for t in data["terms"]:
            alpha = tuple(int(x) for x in t["alpha"])
            if alpha in terms:
                raise ValueError(f"duplicate multi-index {alpha}")
            terms[alpha] = complex(float(t["re"]), float(t["im"]))
        return cls(n, terms)


def poly_eval(p: Multipoly, z) -> complex | np.ndarray:
    """Evaluate ``p`` at points ``z`` of shape ``(n,)`` or ``(..., n)``."""
    Z, batch = to_components(z, p.n)
    val = p._eval_array(Z)
    return val.reshape(batch) if batch else complex(val[0])


class PolyMap:
    """An ``n``-tuple of polynomials in ``n`` variables, i.e. a map of C^n."""

    __slots__ = ("components",)

    def __init__(self, components: Sequence[Multipoly]):
        comps = tuple(components)
        if not comps:
            raise ValueError("a polynomial map needs at least one component")
        n = comps[0].n
        if any(c.n != n for c in comps) or len(comps) != n:
            raise DimensionMismatch("components must be n polynomials in n variables")
        self.components = comps

    @property
    def n(self) -> int:
        return self.components[0].n

    @property
    def degree(self) -> int:
        return max(c.degree for c in self.components)

    @classmethod
    def zero(cls, n):
        return cls([Multipoly.zero(n) for _ in range(n)])

    @classmethod
    def identity(cls, n):
        return cls([Multipoly.variable(n, j) for j in range(n)])

    @classmethod
    def from_terms(cls, n, terms: Mapping[tuple[Iterable[int], int], complex]):
        """Build from ``{(alpha, j): c}`` meaning ``c z^alpha e_j``."""
        per = [dict() for _ in range(n)]
        for (alpha, j), c in terms.items():
            alpha = tuple(alpha)
            per[j][alpha] = per[j].get(alpha, 0) + c
        return cls([Multipoly(n, t) for t in per])

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.components)

    def degrees(self) -> list[int]:
        return sorted({d for c in self.components for d in c.degrees()})

    def is_homogeneous(self) -> bool:
        return len(self.degrees()) <= 1

    def homogeneous_part(self, m):
        return type(self)([c.homogeneous_part(m) for c in self.components])

    def homogeneous_split(self):
        return [self.homogeneous_part(m) for m in self.degrees()]

    def normalize(self, eps=0.0):
        return type(self)([c.normalize(eps) for c in self.components])

    def max_abs(self) -> float:
        return max(c.max_abs() for c in self.components)

    def max_abs_diff(self, other) -> float:
        if other.n != self.n:
            raise DimensionMismatch(f"dimension {self.n} vs {other.n}")
        return max(a.max_abs_diff(b) for a, b in zip(self.components, other.components))

    def coefficient(self, alpha, j) -> complex:
        return self.components[j].terms.get(tuple(alpha), 0j)

    def __add__(self, other):
        if not isinstance(other, PolyMap):
            return NotImplemented
        return type(self)([a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other):
        if not isinstance(other, PolyMap):
            return NotImplemented
        return type(self)([a - b for a, b in zip(self.components, other.components)])

    def __neg__(self):
        return type(self)([-a for a in self.components])

    def __mul__(self, s):
        if not np.isscalar(s):
            return NotImplemented
        return type(self)([a * s for a in self.components])

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, PolyMap):
            return NotImplemented
        return self.components == other.components

    __hash__ = None

    def evaluate(self, zs):
        vals = [c.evaluate(zs) for c in self.components]
        return pack(zs, vals)

    def apply(self, Z: np.ndarray) -> np.ndarray:
        return np.stack([c._eval_array(Z) for c in self.components])

    def __call__(self, z):
        Z, batch = to_components(z, self.n)
        out = self.apply(Z)
        return from_components(out, batch) if batch else out[:, 0]

    def compose(self, inner: "PolyMap"):
        """``self o inner`` as a polynomial map."""
        return type(self)([c.evaluate(list(inner.components)) for c in self.components])

    def to_json(self) -> dict:
        return {"n": self.n, "components": [c.to_json() for c in self.components]}

    @classmethod
    def from_json(cls, data: Mapping):
        comps = [Multipoly.from_json(c) for c in data["components"]]
        if int(data["n"]) != len(comps):
            raise DimensionMismatch("component count does not match n")
        return cls(comps)

    def __repr__(self):
        return f"{type(self).__name__}({list(self.components)!r})"


class PolyVectorField(PolyMap):
    """Polynomial vector field on C^n; same storage as :class:`PolyMap`."""

    __slots__ = ()


def homogeneous_split(X: PolyMap) -> list:
    """Homogeneous parts of ``X`` in ascending degree (zero degrees skipped)."""
    return X.homogeneous_split()


# ---------------------------------------------------------------------------
# Truncated series


class MonomialIndex:
    """Graded ordering of all multi-indices with ``|alpha| <= d``."""

    def __init__(self, n: int, d: int):
        self.n = n
        self.d = d
        exps = [a for m in range(d + 1) for a in compositions(m, n)]
        self.exps = np.array(exps, dtype=int).reshape(len(exps), n)
        self.alphas: list[Alpha] = exps
        self.lookup = {a: i for i, a in enumerate(exps)}
        self.degrees = self.exps.sum(axis=1)
        L = len(exps)
        self.size = L
        shift = np.full((L, L), L, dtype=np.intp)
        for k, a in enumerate(exps):
            for j, b in enumerate(exps):
                diff = tuple(x - y for x, y in zip(a, b))
                if min(diff) >= 0:
                    shift[k, j] = self.lookup[diff]
        self.shift = shift
        self._by_degree = [np.flatnonzero(self.degrees == m) for m in range(d + 1)]
        self.var_index = [self.lookup[tuple(int(i == j) for i in range(n))] if d >= 1 else -1 for j in range(n)]

    def of_degree(self, m: int) -> np.ndarray:
        return self._by_degree[m]


@lru_cache(maxsize=None)
def monomial_index(n: int, d: int) -> MonomialIndex:
    return MonomialIndex(n, d)


class Series:
    """Truncated power series in ``n`` offset variables up to total degree ``d``."""

    __slots__ = ("index", "coeffs")
    __array_ufunc__ = None

    def __init__(self, index: MonomialIndex, coeffs):
        self.index = index
        self.coeffs = np.asarray(coeffs, dtype=complex)

    @classmethod
    def constant(cls, index, c):
        coeffs = np.zeros(index.size, dtype=complex)
        coeffs[0] = c
        return cls(index, coeffs)

    @classmethod
    def variable(cls, index, j, base=0.0):
        coeffs = np.zeros(index.size, dtype=complex)
        coeffs[0] = base
        coeffs[index.var_index[j]] = 1.0
        return cls(index, coeffs)

    @property
    def const(self) -> complex:
        return complex(self.coeffs[0])

    def _other(self, other):
        if isinstance(other, Series):
            if other.index is not self.index:
                raise DimensionMismatch("series with different index")
            return other.coeffs
        return None

    def __add__(self, other):
        oc = self._other(other)
        if oc is not None:
            return Series(self.index, self.coeffs + oc)
        if np.isscalar(other):
            c = self.coeffs.copy()
            c[0] += other
            return Series(self.index, c)
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return Series(self.index, -self.coeffs)

    def __sub__(self, other):
        oc = self._other(other)
        if oc is not None:
            return Series(self.index, self.coeffs - oc)
        if np.isscalar(other):
            return self + (-other)
        return NotImplemented

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        oc = self._other(other)
        if oc is not None:
            ext = np.append(self.coeffs, 0.0)
            return Series(self.index, ext[self.index.shift] @ oc)
        if np.isscalar(other):
            return Series(self.index, self.coeffs * other)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Series):
            return self * other.reciprocal()
        if np.isscalar(other):
            return Series(self.index, self.coeffs / other)
        return NotImplemented

    def __rtruediv__(self, other):
        if np.isscalar(other):
            return self.reciprocal() * other
        return NotImplemented

    def __pow__(self, e: int):
        e = int(e)
        if e < 0:
            return self.reciprocal() ** (-e)
        out = Series.constant(self.index, 1.0)
        base = self
        while e:
            if e & 1:
                out = out * base
            e >>= 1
            if e:
                base = base * base
        return out

    def exp(self) -> "Series":
        s0 = self.coeffs[0]
        u = self - s0
        term = Series.constant(self.index, 1.0)
        total = Series.constant(self.index, 1.0)
        for k in range(1, self.index.d + 1):
            term = term * u * (1.0 / k)
            total = total + term
        return total * np.exp(s0)

    def reciprocal(self) -> "Series":
        s0 = self.coeffs[0]
        if s0 == 0:
            raise ZeroDivisionError("series with zero constant term is not invertible")
        u = (self - s0) * (-1.0 / s0)
        term = Series.constant(self.index, 1.0)
        total = Series.constant(self.index, 1.0)
        for _ in range(self.index.d):
            term = term * u
            total = total + term
        return total * (1.0 / s0)

    def __repr__(self):
        return f"Series(n={self.index.n}, d={self.index.d}, const={self.const:.6g})"


# ---------------------------------------------------------------------------
# Jets


@dataclass(frozen=True, eq=False)
class Jet:
    """Taylor data of a map ``C^n -> C^n_out`` at ``base`` up to ``order``.

    ``coeffs[i, k]`` is the coefficient of ``h^alpha_k`` in component ``i``,
    with ``h = z - base`` and ``alpha_k`` ordered by :class:`MonomialIndex`.
    """

    base: np.ndarray
    order: int
    coeffs: np.ndarray

    def __post_init__(self):
        base = np.array(self.base, dtype=complex).reshape(-1)
        coeffs = np.array(self.coeffs, dtype=complex)
        idx = monomial_index(len(base), int(self.order))
        if coeffs.ndim != 2 or coeffs.shape[1] != idx.size:
            raise DimensionMismatch(f"jet coefficients must have shape (n_out, {idx.size})")
        base.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "order", int(self.order))

    @property
    def n(self) -> int:
        return len(self.base)

    @property
    def index(self) -> MonomialIndex:
        return monomial_index(self.n, self.order)

    @property
    def value(self) -> np.ndarray:
        return self.coeffs[:, 0].copy()

    @property
    def linear_part(self) -> np.ndarray:
        if self.order < 1:
            raise ValueError("order-0 jet has no linear part")
        return self.coeffs[:, self.index.var_index].copy()

    def homogeneous_part(self, m: int) -> np.ndarray:
        return self.coeffs[:, self.index.of_degree(m)].copy()

    def components(self) -> list[Series]:
        return [Series(self.index, row.copy()) for row in self.coeffs]

    def is_invertible(self, tol: float = 1e-12) -> bool:
        A = self.linear_part
        return A.shape[0] == A.shape[1] and abs(np.linalg.det(A)) > tol

    def max_abs_diff(self, other: "Jet", max_degree: int | None = None) -> float:
        if self.coeffs.shape != other.coeffs.shape:
            raise DimensionMismatch("jets of different shape")
        diff = np.abs(self.coeffs - other.coeffs)
        if max_degree is not None:
            diff = diff[:, self.index.degrees <= max_degree]
        return float(diff.max()) if diff.size else 0.0

    def truncate(self, order: int) -> "Jet":
        idx = monomial_index(self.n, order)
        keep = [self.index.lookup[a] for a in idx.alphas]
        return Jet(self.base, order, self.coeffs[:, keep])

    @classmethod
    def identity(cls, base, order):
        base = np.asarray(base, dtype=complex)
        idx = monomial_index(len(base), order)
        coeffs = np.zeros((len(base), idx.size), dtype=complex)
        coeffs[:, 0] = base
        for j in range(len(base)):
            if order >= 1:
                coeffs[j, idx.var_index[j]] = 1.0
        return cls(base, order, coeffs)

    @classmethod
    def from_series(cls, base, comps: Sequence):
        base = np.asarray(base, dtype=complex)
        idx = comps[0].index
        rows = [c.coeffs if isinstance(c, Series) else Series.constant(idx, c).coeffs for c in comps]
        return cls(base, idx.d, np.array(rows))

    @classmethod
    def from_polymap(cls, P: PolyMap, base, order):
        return jet_of(P.evaluate, base, order)

    def offsets(self) -> list[Series]:
        """Identity series ``base + h`` (input to generic maps)."""
        return [Series.variable(self.index, j, self.base[j]) for j in range(self.n)]

    def to_json(self) -> dict:
        idx = self.index
        comps = []
        for row in self.coeffs:
            comps.append({
                "n": self.n,
                "terms": [
                    {"alpha": list(a), "re": float(row[idx.lookup[a]].real), "im": float(row[idx.lookup[a]].imag)}
                    for a in sorted(idx.alphas)
                ],
            })
        return {"n": self.n, "order": self.order, "base": [_cjson(b) for b in self.base], "components": comps}

    @classmethod
    def from_json(cls, data: Mapping) -> "Jet":
        n = int(data["n"])
        order = int(data["order"])
        base = np.array([_cparse(b) for b in data["base"]], dtype=complex)
        if len(base) != n:
            raise DimensionMismatch("base length does not match n")
        idx = monomial_index(n, order)
        coeffs = np.zeros((len(data["components"]), idx.size), dtype=complex)
        for i, comp in enumerate(data["components"]):
            for t in comp["terms"]:
                coeffs[i, idx.lookup[tuple(t["alpha"])]] = complex(float(t["re"]), float(t["im"]))
        return cls(base, order, coeffs)


def jet_of(f: Callable, a, order: int, method: str = "auto", radius: float = 0.25) -> Jet:
    """Jet of the holomorphic map ``f`` at ``a``.

    ``method="series"`` pushes truncated series through ``f`` (exact up to
    roundoff, requires ``f`` to use only ring operations and :func:`exp`);
    ``"cauchy"`` samples ``f`` on a torus around ``a``; ``"auto"`` tries the
    series route first.
    """
    a = np.asarray(a, dtype=complex).reshape(-1)
    if method in ("auto", "series"):
        ident = Jet.identity(a, order)
        try:
            out = f(ident.offsets())
            if all(isinstance(c, Series) for c in out):
                return Jet.from_series(a, list(out))
            return Jet.from_series(a, [c if isinstance(c, Series) else Series.constant(ident.index, complex(c)) for c in out])
        except (TypeError, AttributeError, ValueError):
            if method == "series":
                raise
    return jet_cauchy(f, a, order, radius=radius)


def jet_cauchy(f: Callable, a, order: int, radius: float = 0.25, points: int | None = None) -> Jet:
    """Taylor coefficients from the trapezoid rule for Cauchy's formula on a torus.

    Exact for polynomials whose degree in each variable is below ``points``;
    otherwise the aliasing error is of size ``radius**points`` times the
    growth of ``f``.
    """
    a = np.asarray(a, dtype=complex).reshape(-1)
    n = len(a)
    P = points or max(16, 2 * order + 2)
    w = np.exp(2j * np.pi * np.arange(P) / P)
    grids = np.meshgrid(*([w] * n), indexing="ij")
    Z = np.stack([a[j] + radius * grids[j].reshape(-1) for j in range(n)])
    vals = np.asarray(f(Z))
    vals = vals.reshape((vals.shape[0],) + (P,) * n)
    spectrum = np.fft.fftn(vals, axes=tuple(range(1, n + 1))) / P**n
    idx = monomial_index(n, order)
    coeffs = np.empty((vals.shape[0], idx.size), dtype=complex)
    for k, alpha in enumerate(idx.alphas):
        coeffs[:, k] = spectrum[(slice(None),) + tuple(alpha)] / radius ** sum(alpha)
    return Jet(a, order, coeffs)


def _polynomial_on_offsets(coeffs: np.ndarray, idx: MonomialIndex, offsets: Sequence[Series]) -> list[Series]:
    """Evaluate ``sum_beta coeffs[:, beta] * offsets^beta`` (offsets have zero constant)."""
    out_idx = offsets[0].index
    monos: list[Series | None] = [None] * idx.size
    monos[0] = Series.constant(out_idx, 1.0)
    for k in range(1, idx.size):
        alpha = idx.alphas[k]
        j = next(i for i, e in enumerate(alpha) if e)
        prev = list(alpha)
        prev[j] -= 1
        monos[k] = monos[idx.lookup[tuple(prev)]] * offsets[j]
    M = np.array([m.coeffs for m in monos])
    return [Series(out_idx, row @ M) for row in coeffs]


def jet_compose(F: Jet, G: Jet, tol: float = 1e-9) -> Jet:
    """Jet of ``F o G`` at ``G.base``, truncated to the common order."""
    if F.order != G.order:
        raise IncompatibleJets(f"orders differ: {F.order} vs {G.order}")
    if F.n != G.coeffs.shape[0]:
        raise IncompatibleJets("output dimension of G does not match input of F")
    gap = np.max(np.abs(F.base - G.value)) if F.n else 0.0
    if gap > tol * (1.0 + np.max(np.abs(F.base))):
        raise IncompatibleJets(f"F.base differs from G(G.base) by {gap:.3e}")
    offsets = [c - c.const for c in G.components()]
    comps = _polynomial_on_offsets(F.coeffs, F.index, offsets)
    return Jet.from_series(G.base, comps)


def jet_invert(J: Jet, det_tol: float = 1e-12) -> Jet:
    """Jet of the local inverse of ``J`` at ``J.value``."""
    if J.coeffs.shape[0] != J.n:
        raise SingularJet("only square jets can be inverted")
    A = J.linear_part
    if abs(np.linalg.det(A)) <= det_tol:
        raise SingularJet("linear part is singular")
    Ainv = np.linalg.inv(A)
    idx = J.index
    target = Jet.identity(J.value, J.order)
    u = [c - c.const for c in target.components()]
    nonlinear = J.coeffs.copy()
    nonlinear[:, 0] = 0.0
    nonlinear[:, idx.var_index] = 0.0
    k = [sum((Ainv[i, j] * u[j] for j in range(J.n)), Series.constant(u[0].index, 0.0)) for i in range(J.n)]
    for _ in range(J.order):
        N = _polynomial_on_offsets(nonlinear, idx, k)
        rhs = [u[j] - N[j] for j in range(J.n)]
        k = [sum((Ainv[i, j] * rhs[j] for j in range(J.n)), Series.constant(u[0].index, 0.0)) for i in range(J.n)]
    comps = [k[i] + J.base[i] for i in range(J.n)]
    return Jet.from_series(J.value, comps)


def falling_factorial_weight(alpha: Alpha) -> float:
    """``alpha!`` (used to convert Taylor coefficients to derivatives)."""
    return float(np.prod([math.factorial(a) for a in alpha]))
