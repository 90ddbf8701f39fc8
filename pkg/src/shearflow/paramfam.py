"""Families of words over a circle of parameters, glued by a partition of unity.

Per-angle constructions share one letter skeleton (the same elementary
templates in the same order), so only scalar coefficients depend on the
angle.  Coefficients known at the sample angles are glued into smooth
functions by partition-of-unity interpolation: each sample carries a local
trigonometric interpolant through its neighbours, and the bumps blend them.
The glued function reproduces the samples exactly and any trigonometric
polynomial of degree at most the stencil half-width.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .algebra import PolyVectorField, to_components
from .errors import BudgetExhausted, GuardViolated
from .flows import AffineMap, ApproxConfig, AutomorphismWord, Isotopy, euler_nodes, field_from_isotopy
from .jetfix import jet_fix
from .shears import ElementaryAuto, ElementaryField, coefficient_vector, dictionary, field_basis, pair_schedule

TWO_PI = 2 * np.pi


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("SHEARFLOW_THREADS", "1")))
    except ValueError:
        return 1


def per_angle(fn: Callable, thetas) -> list:
    """Run ``fn`` at every angle; threads capped by ``SHEARFLOW_THREADS``."""
    thetas = list(thetas)
    workers = min(thread_count(), len(thetas))
    if workers <= 1:
        return [fn(th) for th in thetas]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, thetas))


def periodic_offset(theta, center):
    return (np.asarray(theta, dtype=float) - center + np.pi) % TWO_PI - np.pi


class ParamCircle:
    def __init__(self, M: int, half_width: float | None = None):
        if M < 3:
            raise ValueError("need at least 3 sample angles")
        self.M = int(M)
        self.spacing = TWO_PI / self.M
        self.half_width = 1.5 * self.spacing if half_width is None else float(half_width)
        if self.half_width <= self.spacing:
            raise ValueError("bump half-width must exceed the sample spacing")
        self.angles = self.spacing * np.arange(self.M)

    def midpoints(self, per_gap: int = 2) -> np.ndarray:
        """``per_gap`` evenly placed held-out angles strictly inside each gap."""
        frac = (np.arange(per_gap) + 1) / (per_gap + 1)
        return np.sort((self.angles[:, None] + self.spacing * frac[None, :]).reshape(-1))

    def to_json(self) -> dict:
        return {"M": self.M, "half_width": self.half_width}


def _bump(x, w):
    """``exp(-1/(1-(x/w)^2))`` on ``|x| < w`` and its derivative."""
    u = np.asarray(x, dtype=float) / w
    inside = np.abs(u) < 1
    val = np.zeros_like(u)
    der = np.zeros_like(u)
    q = 1 - u[inside] ** 2
    val[inside] = np.exp(-1 / q)
    der[inside] = val[inside] * (-2 * u[inside] / q**2) / w
    return val, der


class BumpPartition:
    def __init__(self, circle: ParamCircle):
        self.circle = circle

    def _raw(self, theta):
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        x = periodic_offset(th[:, None], self.circle.angles[None, :])
        return _bump(x, self.circle.half_width)

    def weights(self, theta) -> np.ndarray:
        b, _ = self._raw(theta)
        out = b / b.sum(axis=1, keepdims=True)
        return out[0] if np.ndim(theta) == 0 else out

    def derivatives(self, theta) -> np.ndarray:
        b, db = self._raw(theta)
        S = b.sum(axis=1, keepdims=True)
        dS = db.sum(axis=1, keepdims=True)
        out = (db * S - b * dS) / S**2
        return out[0] if np.ndim(theta) == 0 else out

    def derivative_bound(self, samples: int = 4000) -> float:
        th = np.linspace(0, TWO_PI, samples, endpoint=False)
        return float(np.max(np.abs(self.derivatives(th))))


def partition_of_unity(circle: ParamCircle) -> BumpPartition:
    return BumpPartition(circle)


def _trig_basis(x, s):
    x = np.atleast_1d(x)
    cols = [np.ones_like(x)]
    for k in range(1, s + 1):
        cols += [np.cos(k * x), np.sin(k * x)]
    return np.stack(cols, axis=-1)


class CoefficientFunction:
    """Smooth periodic function through prescribed values at the sample angles."""

    def __init__(self, circle: ParamCircle, values, stencil: int | None = None):
        self.circle = circle
        self.values = np.asarray(values, dtype=complex).reshape(circle.M)
        self.stencil = min(2, (circle.M - 1) // 2) if stencil is None else int(stencil)
        self.partition = BumpPartition(circle)
        self._local = self._local_coefficients()

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values[0]))

    def _local_coefficients(self):
        M, s, h = self.circle.M, self.stencil, self.circle.spacing
        offsets = np.arange(-s, s + 1)
        Binv = np.linalg.inv(_trig_basis(offsets * h, s))
        coeffs = []
        for j in range(M):
            coeffs.append(Binv @ self.values[(j + offsets) % M])
        return np.array(coeffs)

    def __call__(self, theta):
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        if self.is_constant:
            out = np.full(th.shape, self.values[0], dtype=complex)
            return out[0] if np.ndim(theta) == 0 else out
        alpha = self.partition.weights(th)
        alpha = alpha.reshape(len(th), -1)
        out = np.zeros(len(th), dtype=complex)
        for j in range(self.circle.M):
            sel = alpha[:, j] > 0
            if not np.any(sel):
                continue
            x = periodic_offset(th[sel], self.circle.angles[j])
            out[sel] += alpha[sel, j] * (_trig_basis(x, self.stencil) @ self._local[j])
        return out[0] if np.ndim(theta) == 0 else out

    def to_json(self) -> dict:
        return {
            "kind": "bump_sum",
            "centers": [float(c) for c in self.circle.angles],
            "half_width": self.circle.half_width,
            "stencil": self.stencil,
            "weights": [[float(v.real), float(v.imag)] for v in self.values],
        }

    @classmethod
    def from_json(cls, data) -> "CoefficientFunction":
        circle = ParamCircle(len(data["centers"]), data["half_width"])
        return cls(circle, [complex(a, b) for a, b in data["weights"]], data["stencil"])


def evaluate_many(funcs: Sequence[CoefficientFunction], theta) -> np.ndarray:
    """Values of several glued functions (same circle and stencil) on a grid, shape ``(len(funcs), len(theta))``."""
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if not funcs:
        return np.zeros((0, len(th)), dtype=complex)
    circle, stencil = funcs[0].circle, funcs[0].stencil
    local = np.stack([g._local for g in funcs])
    alpha = BumpPartition(circle).weights(th).reshape(len(th), -1)
    out = np.zeros((len(funcs), len(th)), dtype=complex)
    for j in range(circle.M):
        sel = alpha[:, j] > 0
        if not np.any(sel):
            continue
        B = _trig_basis(periodic_offset(th[sel], circle.angles[j]), stencil)
        out[:, sel] += alpha[sel, j] * (local[:, j, :] @ B.T)
    const = [i for i, g in enumerate(funcs) if g.is_constant]
    for i in const:
        out[i] = funcs[i].values[0]
    return out


def smoothness_report(funcs: Sequence[CoefficientFunction], circle: ParamCircle, refine: int = 10,
                      eta: float = 1e-9, chunk: int = 2048) -> dict:
    """Jump and slope statistics of glued coefficients on a refined grid.

    ``max_jump`` is the largest ``|g(theta+eta) - g(theta-eta)|`` over the
    refined grid (a discontinuity detector); ``max_slope`` is the largest
    first difference divided by the grid step.
    """
    grid = np.arange(circle.M * refine) * (TWO_PI / (circle.M * refine))
    step = grid[1] - grid[0]
    closed = np.append(grid, grid[0] + TWO_PI)
    live = [g for g in funcs if not g.is_constant]
    jump, slope = 0.0, 0.0
    for start in range(0, len(live), chunk):
        part = live[start:start + chunk]
        jump = max(jump, float(np.max(np.abs(evaluate_many(part, grid + eta) - evaluate_many(part, grid - eta)))))
        slope = max(slope, float(np.max(np.abs(np.diff(evaluate_many(part, closed), axis=1)))) / step)
    return {"refine": refine, "eta": eta, "max_jump": jump, "max_slope": float(slope)}


# ---------------------------------------------------------------------------
# Glued affine maps and word families


class GluedAffine:
    def __init__(self, matrix: Sequence[Sequence[CoefficientFunction]], translation: Sequence[CoefficientFunction]):
        self.matrix = [list(r) for r in matrix]
        self.translation = list(translation)

    @classmethod
    def from_samples(cls, circle, maps: Sequence[AffineMap]) -> "GluedAffine":
        n = maps[0].n
        mats = np.array([A.matrix for A in maps])
        trs = np.array([A.translation for A in maps])
        return cls([[CoefficientFunction(circle, mats[:, i, j]) for j in range(n)] for i in range(n)],
                   [CoefficientFunction(circle, trs[:, i]) for i in range(n)])

    def at(self, theta) -> AffineMap:
        M = np.array([[g(theta) for g in row] for row in self.matrix])
        b = np.array([g(theta) for g in self.translation])
        return AffineMap(M, b)

    def functions(self):
        return [g for row in self.matrix for g in row] + self.translation

    def to_json(self) -> dict:
        return {"unitary": [[g.to_json() for g in row] for row in self.matrix],
                "translation": [g.to_json() for g in self.translation]}


@dataclass
class Slot:
    template: ElementaryField  # coefficient ignored
    t: float
    coeff: CoefficientFunction
    tag: dict | None = None

    def at(self, theta) -> ElementaryAuto:
        return ElementaryAuto(self.template.with_coeff(self.coeff(theta)), self.t, self.tag)


class ParamWordFamily:
    def __init__(self, circle: ParamCircle, n: int, slots: Sequence[Slot], prefix: GluedAffine | None = None,
                 suffix: GluedAffine | None = None):
        self.circle = circle
        self.n = n
        self.slots = list(slots)
        self.prefix = prefix
        self.suffix = suffix
        if len({s.coeff.stencil for s in self.slots}) > 1:
            raise ValueError("all coefficient functions of a family must share one stencil")
        self._stack = None

    def __len__(self):
        return len(self.slots)

    def coefficients_at(self, theta: float) -> np.ndarray:
        """All slot coefficients at ``theta`` in one pass (same values as calling each function)."""
        if not self.slots:
            return np.zeros(0, dtype=complex)
        if self._stack is None:
            values = np.array([s.coeff.values for s in self.slots])
            const = np.all(values == values[:, :1], axis=1)
            local = np.stack([s.coeff._local for s in self.slots])  # (slots, M, 2s+1)
            self._stack = (values, const, local)
        values, const, local = self._stack
        stencil = self.slots[0].coeff.stencil
        alpha = BumpPartition(self.circle).weights(float(theta))
        out = np.zeros(len(self.slots), dtype=complex)
        for j in np.flatnonzero(alpha > 0):
            x = periodic_offset(float(theta), self.circle.angles[j])
            out += alpha[j] * (local[:, j, :] @ _trig_basis(x, stencil)[0])
        out[const] = values[const, 0]
        return out

    def instantiate(self, theta) -> AutomorphismWord:
        coeffs = self.coefficients_at(theta)
        letters = [ElementaryAuto(s.template.with_coeff(c), s.t, s.tag) for s, c in zip(self.slots, coeffs)]
        return AutomorphismWord(
            self.n,
            letters,
            self.prefix.at(theta) if self.prefix else None,
            self.suffix.at(theta) if self.suffix else None,
        )

    def functions(self) -> list[CoefficientFunction]:
        out = [s.coeff for s in self.slots]
        for aff in (self.prefix, self.suffix):
            if aff is not None:
                out += aff.functions()
        return out

    def is_constant(self) -> bool:
        return all(g.is_constant for g in self.functions())

    @classmethod
    def from_words(cls, circle: ParamCircle, words: Sequence[AutomorphismWord]) -> "ParamWordFamily":
        """Glue per-angle words that share one skeleton."""
        base = words[0]
        for w in words[1:]:
            if len(w) != len(base):
                raise ValueError("per-angle words do not share a skeleton")
        slots = []
        for k, L in enumerate(base.letters):
            vals = [w.letters[k].field.coeff for w in words]
            for w in words:
                o = w.letters[k]
                if o.field.kind != L.field.kind or o.field.m != L.field.m or o.t != L.t \
                        or not np.array_equal(o.field.lam, L.field.lam) or not np.array_equal(o.field.v, L.field.v):
                    raise ValueError(f"letter {k} differs in shape between angles")
            slots.append(Slot(L.field, L.t, CoefficientFunction(circle, vals), L.tag))

        def glue(attr):
            maps = [getattr(w, attr) for w in words]
            if all(m is None for m in maps):
                return None
            maps = [m if m is not None else AffineMap.identity(base.n) for m in maps]
            return GluedAffine.from_samples(circle, maps)

        return cls(circle, base.n, slots, glue("prefix"), glue("suffix"))

    def to_json(self) -> dict:
        out = {
            "n": self.n,
            "circle": self.circle.to_json(),
            "skeleton": [dict(s.template.to_json(), t=s.t, **(s.tag or {})) for s in self.slots],
            "coefficients": [s.coeff.to_json() for s in self.slots],
        }
        for key in ("prefix", "suffix"):
            aff = getattr(self, key)
            if aff is not None:
                out[key] = aff.to_json()
        return out


# ---------------------------------------------------------------------------
# Parametric decomposition


@dataclass
class ParamDecomposition:
    circle: ParamCircle
    templates: list
    functions: list
    residuals: list

    def field_at(self, theta) -> PolyVectorField:
        n = self.templates[0].n
        out = PolyVectorField.zero(n)
        for E, g in zip(self.templates, self.functions):
            c = g(theta)
            if c != 0:
                out = out + E.with_coeff(c).to_field()
        return out


def shared_solve(vectors_by_degree: dict, n: int, seed: int, tol: float):
    """Solve every degree against one dictionary; returns ``{m: (dict, coeffs)}``.

    ``vectors_by_degree[m]`` is a list of coefficient vectors (one per angle).
    The dictionary size is the smallest that works for every angle.
    """
    from .errors import RankDeficient

    out = {}
    for m, vecs in sorted(vectors_by_degree.items()):
        if m == 0:
            D = dictionary(n, 0, seed, 0)
            out[m] = (D, [D.solve(b)[0] for b in vecs], [D.solve(b)[1] for b in vecs])
            continue
        done = None
        for pairs in pair_schedule(n, m):
            D = dictionary(n, m, seed, pairs)
            sols = [D.solve(b) for b in vecs]
            if max(r for _, r in sols) <= tol:
                done = (D, [x for x, _ in sols], [r for _, r in sols])
                break
        if done is None:
            raise RankDeficient(f"shared degree-{m} dictionary failed for some angle", residual=float("nan"))
        out[m] = done
    return out


def param_decompose(family: Callable, circle: ParamCircle, seed: int = 0, tol: float = 1e-9) -> ParamDecomposition:
    """Decompose ``theta -> X_theta`` against one shared dictionary and glue."""
    fields = per_angle(family, circle.angles)
    n = fields[0].n
    degrees = sorted({m for X in fields for m in X.degrees()})
    vecs = {m: [coefficient_vector(X.homogeneous_part(m), m) for X in fields] for m in degrees}
    solved = shared_solve(vecs, n, seed, tol)
    templates, funcs, residuals = [], [], np.zeros(circle.M)
    for m in degrees:
        D, xs, res = solved[m]
        residuals = np.maximum(residuals, res)
        X = np.array(xs)
        for k, E in enumerate(D.templates):
            templates.append(E)
            funcs.append(CoefficientFunction(circle, X[:, k]))
    return ParamDecomposition(circle, templates, funcs, list(residuals))


# ---------------------------------------------------------------------------
# Parametric approximation


@dataclass
class ParamApproxReport:
    family: ParamWordFamily
    N: int
    substeps: int
    D: int
    table: list  # rows (theta, kind, sup_error)
    history: list = field(default_factory=list)

    @property
    def sample_error(self) -> float:
        return max(e for _, k, e in self.table if k == "sample")

    @property
    def heldout_error(self) -> float:
        vals = [e for _, k, e in self.table if k == "heldout"]
        return max(vals) if vals else 0.0

    def to_json(self) -> dict:
        return {
            "N_steps": self.N,
            "n_substeps": self.substeps,
            "D": self.D,
            "sample_error": self.sample_error,
            "heldout_error": self.heldout_error,
            "history": [list(r) for r in self.history],
            "table": [{"theta": t, "kind": k, "sup_error": e} for t, k, e in self.table],
        }


def _family_word(circle, fits_by_step, n, substeps, seed, tol) -> ParamWordFamily:
    """Splitting family from per-angle fitted fields (list over Euler steps)."""
    N = len(fits_by_step)
    h = 1.0 / (N * substeps)
    slots_one_step = []
    for fields in fits_by_step:
        degrees = sorted({m for X in fields for m in X.degrees()})
        vecs = {m: [coefficient_vector(X.homogeneous_part(m), m) for X in fields] for m in degrees}
        solved = shared_solve(vecs, n, seed, tol)
        step_slots = []
        for m in degrees:
            D, xs, _ = solved[m]
            X = np.array(xs)
            for k, E in enumerate(D.templates):
                if np.any(X[:, k] != 0):
                    step_slots.append(Slot(E, h, CoefficientFunction(circle, X[:, k])))
        slots_one_step.append(step_slots)
    slots = []
    for step_slots in slots_one_step:
        slots.extend(step_slots * substeps)
    return ParamWordFamily(circle, n, slots)


def param_approximate(iso_family: Callable, K_family: Callable, circle: ParamCircle, eps: float,
                      config: ApproxConfig | None = None, heldout: int = 2) -> ParamApproxReport:
    """Approximate ``theta -> phi_{1,theta}`` by one glued family of words.

    All angles share ``(N, substeps, D)``; escalation follows
    :func:`shearflow.flows.approximate_isotopy` using the worst angle.  The
    result is accepted when sample angles are within ``eps`` and held-out
    angles within ``2 eps``.
    """
    cfg = config or ApproxConfig()
    isos = {th: iso_family(th) for th in circle.angles}
    Ks = {th: np.asarray(K_family(th), dtype=complex) for th in circle.angles}
    held = circle.midpoints(heldout) if heldout else np.array([])
    n = next(iter(isos.values())).n

    def refs(th, iso=None, K=None):
        iso = iso or iso_family(th)
        K = np.asarray(K_family(th), dtype=complex) if K is None else K
        return K.T, np.asarray(iso.evaluate(1.0, K.T))

    ref_s = {th: refs(th, isos[th], Ks[th]) for th in circle.angles}
    ref_h = {th: refs(th) for th in held}
    N, sub, D = cfg.N, cfg.substeps, cfg.D
    history, best = [], None
    stalled, prev = False, None
    while True:
        nodes = euler_nodes(N, cfg.node)
        per = per_angle(lambda th: [field_from_isotopy(isos[th], t, Ks[th], D).field for t in nodes], circle.angles)
        by_step = [[per[a][j] for a in range(circle.M)] for j in range(N)]
        fam = _family_word(circle, by_step, n, sub, cfg.seed, cfg.tol)

        def err(th, Z, ref):
            W = fam.instantiate(th)
            return float(np.max(np.linalg.norm(W.apply(Z) - ref, axis=0)))

        table = [(float(th), "sample", err(th, *ref_s[th])) for th in circle.angles]
        table += [(float(th), "heldout", err(th, *ref_h[th])) for th in held]
        rep = ParamApproxReport(fam, N, sub, D, table)
        es, eh = rep.sample_error, rep.heldout_error
        history.append((sub, N, D, es, eh))
        rep.history = list(history)
        score = max(es / eps, eh / (2 * eps))
        if best is None or score < best[0]:
            best = (score, rep)
        if score <= 1:
            return rep
        if prev is not None and history[-2][0] < sub and score > (1 - cfg.min_gain) * prev:
            stalled = True
            sub //= 2
        prev = score
        if not stalled and 2 * sub <= cfg.max_substeps:
            sub *= 2
        elif 2 * N <= cfg.max_N:
            N, stalled = 2 * N, False
        elif D + 2 <= cfg.max_D:
            D, stalled = D + 2, False
        else:
            worst = max(best[1].table, key=lambda r: r[2])
            raise BudgetExhausted(f"family error too large; worst angle {worst[0]:.4f} ({worst[1]}) error {worst[2]:.3e}",
                                  report=best[1])


# ---------------------------------------------------------------------------
# Parametric jet correction


@dataclass
class FamilyJetFixReport:
    family: ParamWordFamily
    sample_defects: list
    heldout_defects: list
    modulus: float
    changed: bool

    def to_json(self) -> dict:
        return {
            "sample_defects": self.sample_defects,
            "heldout_defects": self.heldout_defects,
            "modulus_of_continuity": self.modulus,
            "changed": self.changed,
        }


def family_jet_fix(family: ParamWordFamily, targets: Callable, d: int, guard: Callable | None = None,
                   eps_guard: float = 0.1, tol: float = 1e-8, table_seed: int = 0, heldout: int = 1) -> FamilyJetFixReport:
    """Jet-correct every sample angle with a fixed skeleton and glue the results.

    ``targets(theta)`` returns ``(map, a)``; ``guard(theta)`` returns points.
    """
    from .jetfix import _inner_defect
    from .algebra import Jet

    circle = family.circle
    words = {th: family.instantiate(th) for th in circle.angles}

    def defect(word, th):
        tmap, a = targets(th)
        J, a_in, _, _ = _inner_defect(word, tmap, a, d - 1)
        return J.max_abs_diff(Jet.identity(a_in, d - 1))

    before = per_angle(lambda th: defect(words[th], th), circle.angles)
    force = max(before) > tol

    def fix(th):
        tmap, a = targets(th)
        K = guard(th) if guard is not None else None
        try:
            return jet_fix(words[th], tmap, a, d, K, eps_guard, tol, table_seed, fixed_skeleton=True, force=force)
        except GuardViolated as exc:
            exc.theta = float(th)
            raise

    results = per_angle(fix, circle.angles)
    new = ParamWordFamily.from_words(circle, [r.word for r in results])
    held = circle.midpoints(heldout) if heldout else np.array([])
    sample_defects = [float(r.defect_after) for r in results]
    held_defects = [float(defect(new.instantiate(th), th)) for th in held]
    modulus = 0.0
    for g in new.functions():
        if g.is_constant:
            continue
        grid = np.linspace(0, TWO_PI, 8 * circle.M, endpoint=False)
        vals = g(grid)
        modulus = max(modulus, float(np.max(np.abs(vals - g.values[np.rint(grid / circle.spacing).astype(int) % circle.M]))))
    return FamilyJetFixReport(new, sample_defects, held_defects, modulus, force)
