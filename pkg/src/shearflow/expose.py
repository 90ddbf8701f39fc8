"""Model finite-type domains and the construction of exposing automorphisms.

The test domain is ``W = {|z_n + i|**2 + |z'|**(2k) < 1}``, the model ball
shifted so that ``p = 0`` lies on its boundary with outward normal ``i e_n``.
``W`` is convex and lies in ``{Im z_n < 0}`` except for ``p``.

The exposing map is built from the fiberwise Moebius isotopy
``(z', z_n) -> (z', M_t(z_n))`` with ``M_t(w) = (w + ti)/(1 + tiw)``: for
``Im w <= 0`` one has ``Im M_t(w) <= t`` with equality only at ``w = 0``, so
``M_1`` pushes ``p`` to ``i`` and the rest of the closure strictly below the
line ``Im z_n = 1``.  The isotopy is approximated by a word of shears and
overshears whose jet at ``p`` is then corrected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .algebra import pack, to_components
from .errors import DegenerateNormal, EstimateNotFound, ExposednessFailed
from .flows import AffineMap, ApproxConfig, AutomorphismWord, Isotopy, approximate_isotopy
from .jetfix import jet_fix
from .paramfam import (CoefficientFunction, GluedAffine, ParamCircle, ParamWordFamily, Slot, per_angle,
                       smoothness_report)


class ModelDomain:
    def __init__(self, n: int = 2, k: int = 1):
        if n < 2 or k < 1:
            raise ValueError("need n >= 2 and k >= 1")
        self.n, self.k = int(n), int(k)
        self.p = np.zeros(self.n, dtype=complex)
        self.center = np.zeros(self.n, dtype=complex)
        self.center[-1] = -1j

    def rho(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        s = np.sum(np.abs(z[..., :-1]) ** 2, axis=-1)
        return np.abs(z[..., -1] + 1j) ** 2 + s**self.k - 1

    def grad(self, z) -> np.ndarray:
        """``d rho / d conj(z_j)``; the outward normal is its normalization."""
        z = np.asarray(z, dtype=complex)
        s = np.sum(np.abs(z[..., :-1]) ** 2, axis=-1, keepdims=True)
        gp = self.k * s ** (self.k - 1) * z[..., :-1] if self.k > 1 else z[..., :-1]
        return np.concatenate([gp, z[..., -1:] + 1j], axis=-1)

    def normal(self, z) -> np.ndarray:
        g = self.grad(z)
        nrm = np.linalg.norm(g, axis=-1, keepdims=True)
        if np.any(nrm < 1e-8):
            raise DegenerateNormal("gradient of the defining function vanishes")
        return g / nrm

    def contains(self, z) -> np.ndarray:
        return self.rho(z) < 0

    # -- sampling -------------------------------------------------------
    def radial_project(self, z) -> np.ndarray:
        """Push points along rays from the center onto the boundary."""
        z = np.atleast_2d(np.asarray(z, dtype=complex))
        u = z - self.center
        nrm = np.linalg.norm(u, axis=1, keepdims=True)
        u = u / nrm
        a = np.abs(u[:, -1]) ** 2
        b = np.sum(np.abs(u[:, :-1]) ** 2, axis=1) ** self.k
        # f(s) = a s^2 + b s^(2k) - 1 is convex and increasing; Newton from above
        with np.errstate(divide="ignore"):
            s = np.minimum(np.where(a > 0, 1 / np.sqrt(a), np.inf), np.where(b > 0, b ** (-0.5 / self.k), np.inf))
        for _ in range(100):
            f = a * s**2 + b * s ** (2 * self.k) - 1
            df = 2 * a * s + 2 * self.k * b * s ** (2 * self.k - 1)
            step = f / df
            s = s - step
            if np.all(np.abs(step) <= 1e-16 * s):
                break
        return self.center + s[:, None] * u

    def boundary_sample(self, N: int, seed: int = 0, near: np.ndarray | None = None, near_fraction: float = 0.0,
                        radii=(0.005, 0.1)) -> np.ndarray:
        """Boundary points; optionally a fraction concentrated near ``near``.

        Near points are radial projections of ``near + r u`` with ``u`` a
        random unit vector and ``r`` log-uniform in ``radii``.
        """
        rng = np.random.default_rng([seed, self.n, self.k, N])
        n_near = int(round(N * near_fraction)) if near is not None else 0
        u = rng.standard_normal((N - n_near, self.n)) + 1j * rng.standard_normal((N - n_near, self.n))
        pts = [self.radial_project(self.center + u)] if N - n_near else []
        if n_near:
            v = rng.standard_normal((n_near, self.n)) + 1j * rng.standard_normal((n_near, self.n))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            r = np.exp(rng.uniform(np.log(radii[0]), np.log(radii[1]), n_near))
            pts.append(self.radial_project(np.asarray(near) + r[:, None] * v))
        return np.concatenate(pts, axis=0)

    def interior_sample(self, N: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng([seed, self.n, self.k, N, 1])
        u = rng.standard_normal((N, self.n)) + 1j * rng.standard_normal((N, self.n))
        b = self.radial_project(self.center + u)
        frac = rng.random(N) ** (1 / (2 * self.n)) * 0.999
        return self.center + frac[:, None] * (b - self.center)

    def to_json(self) -> dict:
        return {"n": self.n, "k": self.k}


def boundary_sample(domain: ModelDomain, N: int, seed: int = 0, near=None, near_fraction=0.5):
    return domain.boundary_sample(N, seed, near, near_fraction if near is not None else 0.0)


# ---------------------------------------------------------------------------
# Normalizations and support functions


def unitary_to(nu, target) -> np.ndarray:
    """Unitary sending the unit vector ``nu`` to the unit vector ``target``.

    A phase change along ``nu`` followed by a real rotation in the plane of
    ``nu`` and ``target``; the identity when they already agree.
    """
    nu = np.asarray(nu, dtype=complex)
    e = np.asarray(target, dtype=complex)
    n = len(nu)
    c = np.vdot(e, nu)  # <nu, e>
    psi = np.angle(c) if abs(c) > 0 else 0.0
    P = np.eye(n, dtype=complex) + (np.exp(-1j * psi) - 1) * np.outer(nu, np.conj(nu))
    nu1 = P @ nu
    cb = float(np.real(np.vdot(e, nu1)))
    q = nu1 - cb * e
    qn = np.linalg.norm(q)
    if qn < 1e-15:
        return P
    q = q / qn
    sb = qn
    R = (np.eye(n, dtype=complex) + (cb - 1) * (np.outer(e, np.conj(e)) + np.outer(q, np.conj(q)))
         + sb * (np.outer(e, np.conj(q)) - np.outer(q, np.conj(e))))
    return R @ P


def normalization_map(domain: ModelDomain, zeta, target=None, tol: float = 1e-8) -> AffineMap:
    """Affine ``l(z) = U (z - zeta)`` with ``l(zeta) = 0`` and ``U nu = target`` (default ``e_1``)."""
    zeta = np.asarray(zeta, dtype=complex)
    if abs(domain.rho(zeta)) > tol:
        raise ValueError(f"point is not on the boundary (rho = {domain.rho(zeta):.3e})")
    g = domain.grad(zeta)
    if np.linalg.norm(g) < 1e-8:
        raise DegenerateNormal("gradient of the defining function vanishes")
    if target is None:
        target = np.eye(domain.n, dtype=complex)[0]
    U = unitary_to(g / np.linalg.norm(g), target)
    return AffineMap(U, -U @ zeta)


@dataclass
class SupportFunction:
    zeta: np.ndarray
    normalization: AffineMap
    K: float
    k: int
    c: float
    r: float
    samples: int
    min_ratio: float
    g: object = None  # holomorphic polynomial in z'; the model choice is zero

    def value(self, w) -> np.ndarray:
        """``S(w) = 3 w_1 + K w_1**2 + g(w')`` in normalized coordinates."""
        w = np.asarray(w, dtype=complex)
        out = 3 * w[..., 0] + self.K * w[..., 0] ** 2
        if self.g is not None:
            out = out + self.g(w[..., 1:])
        return out

    def __call__(self, z):
        return self.value(self.normalization(np.asarray(z, dtype=complex)))

    def ratios(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        den = np.abs(w[..., 0]) ** 2 + np.sum(np.abs(w[..., 1:]) ** 2, axis=-1) ** self.k
        return -np.real(self.value(w)) / den, den

    def violations(self, w, c=None) -> int:
        ratio, den = self.ratios(w)
        keep = den > 1e-300
        return int(np.sum(ratio[keep] < (self.c if c is None else c)))

    def to_json(self) -> dict:
        return {
            "zeta": [[float(z.real), float(z.imag)] for z in self.zeta],
            "normalization": self.normalization.to_json(),
            "K": self.K,
            "k": self.k,
            "c": self.c,
            "r": self.r,
            "samples": self.samples,
            "min_ratio": self.min_ratio,
        }


def support_samples(domain: ModelDomain, zeta, r: float, N: int, seed: int) -> np.ndarray:
    """Half boundary, half interior points of ``W`` within distance ``r`` of ``zeta``."""
    zeta = np.asarray(zeta, dtype=complex)
    rng = np.random.default_rng([seed, domain.n, domain.k, N, 7])
    out = []
    need_b, need_i = N // 2, N - N // 2
    while need_b > 0 or need_i > 0:
        m = 2 * max(need_b, need_i) + 16
        v = rng.standard_normal((m, domain.n)) + 1j * rng.standard_normal((m, domain.n))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        rad = r * rng.random(m) ** (1 / (2 * domain.n))
        if need_b > 0:
            b = domain.radial_project(zeta + rad[:, None] * v)
            b = b[np.linalg.norm(b - zeta, axis=1) < r][:need_b]
            out.append(b)
            need_b -= len(b)
        if need_i > 0:
            q = zeta + rad[:, None] * v
            q = q[domain.rho(q) < 0][:need_i]
            out.append(q)
            need_i -= len(q)
    return np.concatenate(out, axis=0)


def support_function(domain: ModelDomain, zeta, K: float = 1.5, r: float = 0.1, samples: int = 10_000,
                     seed: int = 0, c_min: float = 1e-4) -> SupportFunction:
    """Fit the largest ``c`` on a ``2**(1/4)`` grid with ``Re S <= -c(|w1|^2 + |w'|^(2k))``."""
    l = normalization_map(domain, zeta)
    pts = support_samples(domain, zeta, r, samples, seed)
    S = SupportFunction(np.asarray(zeta, dtype=complex), l, K, domain.k, 0.0, r, len(pts), float("nan"))
    ratio, den = S.ratios(l(pts))
    ratio = ratio[den > 1e-300]
    cstar = float(np.min(ratio))
    S.min_ratio = cstar
    if not np.isfinite(cstar) or cstar < c_min:
        raise EstimateNotFound(f"best constant {cstar:.3e} is below {c_min:.1e} at r = {r}")
    j = math.floor(4 * math.log2(cstar))
    c = 2.0 ** (j / 4)
    while c > cstar:
        j -= 1
        c = 2.0 ** (j / 4)
    S.c = c
    return S


def verify_support_estimate(S: SupportFunction, domain: ModelDomain, samples: int = 10_000, seed: int = 1) -> int:
    """Violations of the estimate on a fresh sample set."""
    pts = support_samples(domain, S.zeta, S.r, samples, seed)
    return S.violations(S.normalization(pts))


# ---------------------------------------------------------------------------
# Exposing isotopy


def mobius_stretch(t: float, reach: float = 1.0):
    """``w -> R M_t(w / R)`` with ``M_t(w) = (w + ti)/(1 + tiw)``."""
    R = float(reach)
    if R == 1.0:
        return lambda w: (w + 1j * t) / (1 + (1j * t) * w)
    return lambda w: R * ((w / R + 1j * t) / (1 + (1j * t / R) * w))


def mobius_velocity(t: float, reach: float = 1.0):
    R = float(reach)
    return lambda w: R * 1j * (1 - (w / R) ** 2) / (1 + (1j * t / R) * w) ** 2


def exposing_isotopy(domain: ModelDomain, reach: float = 1.0) -> Isotopy:
    def ev(t, Z):
        out = list(Z)
        out[-1] = mobius_stretch(t, reach)(Z[-1])
        return pack(Z, out)

    def dv(t, Z):
        out = [0 * z for z in Z]
        out[-1] = mobius_velocity(t, reach)(Z[-1])
        return pack(Z, out)

    return Isotopy(domain.n, ev, dv, "mobius")


# ---------------------------------------------------------------------------
# Verification


@dataclass
class VerificationReport:
    value_at_p: list
    value_error: float
    max_Im: float
    c_exp: float
    margin_exponent: float
    convexity_fit: float
    boundary_samples: int
    near_samples: int
    seed: int
    reach: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "value_at_p": [[float(z.real), float(z.imag)] for z in self.value_at_p],
            "value_error": self.value_error,
            "max_Im": self.max_Im,
            "c_exp": self.c_exp,
            "margin_exponent": self.margin_exponent,
            "convexity_fit": self.convexity_fit,
            "boundary_samples": self.boundary_samples,
            "near_samples": self.near_samples,
            "seed": self.seed,
            "reach": self.reach,
            "passed": self.passed,
            "verdict": "PASS" if self.passed else "FAIL",
            "details": self.details,
        }


def margin_exponent(dist: np.ndarray, margin: np.ndarray, bins: int = 8, lo: float = 0.01, hi: float = 0.1) -> float:
    """Slope of ``log min-margin`` against ``log distance`` over log-spaced bins."""
    edges = np.exp(np.linspace(np.log(lo), np.log(hi), bins + 1))
    xs, ys = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (dist >= a) & (dist < b) & (margin > 0)
        if np.sum(sel) < 3:
            continue
        i = np.argmin(margin[sel])
        xs.append(np.log(dist[sel][i]))
        ys.append(np.log(margin[sel][i]))
    if len(xs) < 3:
        return float("nan")
    return float(np.polyfit(xs, ys, 1)[0])


def verify_exposed(F, domain: ModelDomain, p=None, samples: int = 10_000, seed: int = 0, reach: float = 1.0,
                   near_fraction: float = 0.5) -> VerificationReport:
    """Audit that ``F`` sends ``p`` to ``reach * i e_n`` and the rest of the boundary below it."""
    p = domain.p if p is None else np.asarray(p, dtype=complex)
    n, k = domain.n, domain.k
    apply = F.apply if hasattr(F, "apply") else (lambda Z: np.asarray(F(Z.T)).T)
    target = np.zeros(n, dtype=complex)
    target[-1] = 1j * reach
    val = apply(p[:, None].astype(complex))[:, 0]
    value_error = float(np.linalg.norm(val - target))
    pts = domain.boundary_sample(samples, seed, p, near_fraction)
    img = apply(pts.T.copy())
    dist = np.linalg.norm(pts - p, axis=1)
    keep = dist > 1e-12
    im_n = img[-1].imag
    margin = reach - im_n
    max_im = float(np.max(im_n[keep])) if np.any(keep) else float("nan")
    scale = np.minimum(dist, 1.0) ** (2 * k)
    c_exp = float(np.min(margin[keep] / scale[keep]))
    near = keep & (dist < 0.1)
    expo = margin_exponent(dist[near], margin[near])
    # local graph of the image near the image point: x_2n <= -c (|u'|^2k + x_{2n-1}^2)
    u = img[:, near] - val[:, None]
    den = np.sum(np.abs(u[:-1]) ** 2, axis=0) ** k + u[-1].real ** 2
    good = den > 0
    conv = float(np.min(-u[-1].imag[good] / den[good])) if np.any(good) else float("nan")
    passed = bool(value_error <= 1e-9 and max_im < reach and c_exp > 0)
    details = {"finite": bool(np.all(np.isfinite(img)))}
    if not details["finite"]:
        passed = False
    return VerificationReport(list(val), value_error, max_im, c_exp, expo, conv, int(np.sum(keep)), int(np.sum(near)),
                              seed, reach, passed, details)


# ---------------------------------------------------------------------------
# Pipeline


@dataclass
class ExposeConfig:
    eps: float = 1e-3
    seed: int = 0
    boundary_fit: int = 200
    interior_fit: int = 200
    ball_fit: int = 200
    ball_radius: float = 0.3
    verify_samples: int = 10_000
    budget_N: int = 64
    budget_n: int = 1024
    budget_D: int = 10
    D: int = 6
    jetfix: bool = True
    eps_guard: float = 0.1
    reach: float = 1.0

    def to_json(self) -> dict:
        return dict(self.__dict__)


def fit_samples(domain: ModelDomain, cfg: ExposeConfig) -> np.ndarray:
    """Compact stand-in for the closure: boundary, interior, and a ball about ``p``."""
    rng = np.random.default_rng([cfg.seed, domain.n, domain.k, 3])
    v = rng.standard_normal((cfg.ball_fit, domain.n)) + 1j * rng.standard_normal((cfg.ball_fit, domain.n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = cfg.ball_radius * rng.random(cfg.ball_fit) ** (1 / (2 * domain.n))
    ball = domain.p + r[:, None] * v
    return np.concatenate([
        domain.boundary_sample(cfg.boundary_fit, cfg.seed),
        domain.interior_sample(cfg.interior_fit, cfg.seed),
        ball,
    ])


@dataclass
class ExposeResult:
    word: AutomorphismWord
    report: VerificationReport
    approximation: object
    jetfix: object
    config: ExposeConfig

    def to_json(self) -> dict:
        return {
            "report": self.report.to_json(),
            "approximation": self.approximation.to_json(),
            "jetfix": self.jetfix.to_json() if self.jetfix is not None else None,
            "config": self.config.to_json(),
        }


def expose(domain: ModelDomain, config: ExposeConfig | None = None, raise_on_fail: bool = True) -> ExposeResult:
    """Isotopy -> splitting word -> jet correction at ``p`` (order 2k+1) -> audit."""
    cfg = config or ExposeConfig()
    iso = exposing_isotopy(domain, cfg.reach)
    K = fit_samples(domain, cfg)
    acfg = ApproxConfig(D=cfg.D, max_N=cfg.budget_N, max_substeps=cfg.budget_n, max_D=cfg.budget_D, seed=cfg.seed)
    approx = approximate_isotopy(iso, K, cfg.eps, acfg)
    word = approx.word
    fix = None
    if cfg.jetfix:
        fix = jet_fix(word, iso.time_map(1.0), domain.p, 2 * domain.k + 2, K, cfg.eps_guard, table_seed=cfg.seed)
        word = fix.word
    report = verify_exposed(word, domain, domain.p, cfg.verify_samples, cfg.seed, cfg.reach)
    result = ExposeResult(word, report, approx, fix, cfg)
    if raise_on_fail and not report.passed:
        exc = ExposednessFailed(
            f"exposedness audit failed: value error {report.value_error:.3e}, max Im {report.max_Im:.6f}, c_exp {report.c_exp:.3e}",
            report=report,
        )
        exc.result = result
        raise exc
    return result


# ---------------------------------------------------------------------------
# Parametrized exposing over a boundary circle


def rotation_curve(domain: ModelDomain):
    """``theta -> i (e^{i theta} - 1) e_n``: the orbit of ``p`` under rotation about the center."""

    def zeta(theta):
        z = np.zeros(domain.n, dtype=complex)
        z[-1] = 1j * (np.exp(1j * theta) - 1)
        return z

    return zeta


def constant_curve(domain: ModelDomain):
    return lambda theta: domain.p.copy()


def frame_map(domain: ModelDomain, zeta) -> AffineMap:
    """Unitary + translation sending ``zeta`` to ``p`` and its normal to ``i e_n``."""
    target = np.zeros(domain.n, dtype=complex)
    target[-1] = 1j
    return normalization_map(domain, zeta, target)


def ball_frame(domain: ModelDomain) -> AffineMap:
    """``z -> diag(1, ..., 1, -i)(z + i e_n)``: ``W`` onto ``{|w_n|**2 + |w'|**(2k) < 1}``, ``p`` onto ``e_n``.

    The half-space ``{Im z_n < R}`` becomes ``{Re w_n < R + 1}``.
    """
    U = np.eye(domain.n, dtype=complex)
    U[-1, -1] = -1j
    shift = np.zeros(domain.n, dtype=complex)
    shift[-1] = 1j
    return AffineMap(U, U @ shift)


def in_ball_frame(word: AutomorphismWord, domain: ModelDomain) -> AutomorphismWord:
    """Conjugate ``word`` by :func:`ball_frame`: the same map written in model-ball coordinates."""
    T = ball_frame(domain)
    Tinv = T.inverse()
    pre = Tinv if word.prefix is None else word.prefix.compose(Tinv)
    suf = T if word.suffix is None else T.compose(word.suffix)
    return AutomorphismWord(word.n, word.letters, pre, suf)


@dataclass
class ParamExposeResult:
    family: ParamWordFamily
    sample_reports: list
    heldout: list
    smoothness: dict
    base: ExposeResult
    circle: ParamCircle

    @property
    def passed(self) -> bool:
        return all(r.passed for _, r in self.sample_reports) and all(m < self.base.config.reach for _, m in self.heldout)

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "circle": self.circle.to_json(),
            "samples": [dict(theta=th, **r.to_json()) for th, r in self.sample_reports],
            "heldout": [{"theta": th, "max_Im": m} for th, m in self.heldout],
            "smoothness": self.smoothness,
            "base": self.base.to_json(),
        }


def param_expose(domain: ModelDomain, curve=None, M: int = 8, config: ExposeConfig | None = None,
                 heldout: int = 2, verify_samples: int | None = None) -> ParamExposeResult:
    """Expose every point of a boundary circle with one smooth family of words.

    The frame maps ``A_theta`` send ``zeta(theta)`` to ``p`` and must map the
    domain onto itself (true for the default rotation orbit); the exposing
    word built at ``p`` then works at every angle, and the family is
    ``word o A_theta`` with ``A_theta`` glued over the circle.
    """
    cfg = config or ExposeConfig()
    curve = curve or rotation_curve(domain)
    circle = ParamCircle(M)
    frames = [frame_map(domain, curve(th)) for th in circle.angles]
    probe = domain.boundary_sample(256, cfg.seed + 11)
    for th, A in zip(circle.angles, frames):
        drift = float(np.max(np.abs(domain.rho(A(probe)))))
        if drift > 1e-9:
            raise ValueError(f"frame at angle {th:.4f} does not preserve the domain (rho drift {drift:.2e})")
    base = expose(domain, cfg)
    word = base.word
    slots = [Slot(L.field, L.t, CoefficientFunction(circle, [L.field.coeff] * M), L.tag) for L in word.letters]
    prefix = GluedAffine.from_samples(circle, frames)
    suffix = GluedAffine.from_samples(circle, [word.suffix] * M) if word.suffix is not None else None
    family = ParamWordFamily(circle, domain.n, slots, prefix, suffix)
    nver = verify_samples or cfg.verify_samples

    def audit(th):
        return verify_exposed(family.instantiate(th), domain, curve(th), nver, cfg.seed, cfg.reach)

    reports = per_angle(audit, circle.angles)
    held_angles = circle.midpoints(heldout)
    held = per_angle(audit, held_angles)
    smooth = smoothness_report(family.functions(), circle)
    return ParamExposeResult(family, [(float(t), r) for t, r in zip(circle.angles, reports)],
                             [(float(t), r.max_Im) for t, r in zip(held_angles, held)], smooth, base, circle)
