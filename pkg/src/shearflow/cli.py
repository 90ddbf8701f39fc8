"""Command-line entry point: ``shearflow <command> [flags]``.

Every artifact carries the run configuration that produced it, and nothing
time-dependent is written, so reruns with the same flags are byte-identical.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure,
3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .algebra import PolyVectorField
from .errors import ExposednessFailed, NumericalFailure, ShearflowError
from .expose import ExposeConfig, ModelDomain, expose, exposing_isotopy, fit_samples, param_expose, verify_exposed
from .flows import (ApproxConfig, AutomorphismWord, approximate_isotopy, build_word, rotation_isotopy,
                    scaling_isotopy, shear_isotopy, sup_error)
from .jetfix import jet_defect, jet_fix
from .shears import decompose_field

log = logging.getLogger("shearflow")

ISOTOPIES = {"rotation": rotation_isotopy, "scaling": scaling_isotopy, "shear": shear_isotopy}


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    n: int = 2
    k: int = 1
    eps: float = 1e-3
    budget_N: int = 64
    budget_n: int = 1024
    budget_D: int = 10
    samples: int = 10_000
    out: str = "out"
    jetfix: bool = True
    normal_reach: float = 1.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("budget_N", "budget_n", "budget_D", "samples"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name.replace('_', '-')} must be positive")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    def to_json(self) -> dict:
        return asdict(self)

    def expose_config(self) -> ExposeConfig:
        return ExposeConfig(eps=self.eps, seed=self.seed, verify_samples=self.samples, budget_N=self.budget_N,
                            budget_n=self.budget_n, budget_D=self.budget_D, jetfix=self.jetfix,
                            reach=self.normal_reach)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Writers


def _plain(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: Path, payload: dict, run: RunConfig, compact: bool = False) -> None:
    data = dict(payload, run_config=run.to_json())
    if compact:
        text = json.dumps(data, sort_keys=True, default=_plain, separators=(",", ":"))
    else:
        text = json.dumps(data, sort_keys=True, default=_plain, indent=1)
    path.write_text(text + "\n")


def write_csv(path: Path, header: list[str], rows, run: RunConfig) -> None:
    lines = ["# run_config " + json.dumps(run.to_json(), sort_keys=True, default=_plain), ",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else repr(float(v)) if isinstance(v, float) else str(v)
                              for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_slice_ppm(path: Path, curve: np.ndarray, cloud: np.ndarray, run: RunConfig, reach: float = 1.0,
                    size: int = 512) -> None:
    """Plain PPM of ``(Re z_n, Im z_n)`` for image points; the line ``Im = reach`` in red."""
    pts = np.concatenate([curve, cloud])
    pts = pts[np.isfinite(pts)]
    x0, x1 = float(np.min(pts.real)), float(np.max(pts.real))
    y0, y1 = float(min(np.min(pts.imag), 0.0)), float(max(np.max(pts.imag), reach))
    pad_x, pad_y = 0.05 * (x1 - x0 or 1.0), 0.05 * (y1 - y0 or 1.0)
    x0, x1, y0, y1 = x0 - pad_x, x1 + pad_x, y0 - pad_y, y1 + pad_y
    img = np.full((size, size, 3), 255, dtype=np.uint8)

    def plot(z, color):
        z = z[np.isfinite(z)]
        col = np.clip(((z.real - x0) / (x1 - x0) * (size - 1)).round().astype(int), 0, size - 1)
        row = np.clip(((y1 - z.imag) / (y1 - y0) * (size - 1)).round().astype(int), 0, size - 1)
        img[row, col] = color

    plot(cloud, (170, 170, 170))
    plot(curve, (0, 0, 0))
    line = int(round((y1 - reach) / (y1 - y0) * (size - 1)))
    img[line, :] = (220, 0, 0)
    header = ["P3", "# run_config " + json.dumps(run.to_json(), sort_keys=True, default=_plain),
              f"# x range [{x0!r}, {x1!r}] y range [{y0!r}, {y1!r}]", f"{size} {size}", "255"]
    body = [" ".join(str(int(v)) for v in img[r].reshape(-1)) for r in range(size)]
    path.write_text("\n".join(header + body) + "\n")


def _outdir(run: RunConfig) -> Path:
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _domain(run: RunConfig) -> ModelDomain:
    try:
        return ModelDomain(run.n, run.k)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load_json(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    if not text.strip():
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# Commands


def cmd_decompose(run: RunConfig, args) -> int:
    data = _load_json(args.field)
    out = _outdir(run)
    if data is None:
        parts = []
    else:
        try:
            X = PolyVectorField.from_json(data)
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"{args.field}: not a vector field ({exc})") from exc
        parts = decompose_field(X, seed=run.seed, tol=args.tol)
    payload = {
        "degrees": [{"degree": m, **res.to_json()} for m, res in parts],
        "parts": [E.to_json() for _, res in parts for E in res.parts],
        "residual": max((res.residual for _, res in parts), default=0.0),
    }
    write_json(out / "decomposition.json", payload, run)
    print(f"decomposed into {len(payload['parts'])} elementary fields, residual {payload['residual']:.3e}")
    return 0


def cmd_flow(run: RunConfig, args) -> int:
    iso = ISOTOPIES[args.isotopy](run.n)
    rng = np.random.default_rng([run.seed, run.n, 5])
    K = 0.5 * (rng.uniform(-1, 1, (args.points, run.n)) + 1j * rng.uniform(-1, 1, (args.points, run.n)))
    Z = K.T.copy()
    ref = iso.evaluate(1.0, Z)
    rows = []
    sub = args.start
    while sub <= run.budget_n:
        word, fit = build_word(iso, K, args.steps, sub, args.degree, run.seed, 1e-9)
        rows.append((sub, args.steps, args.degree, len(word), sup_error(word, Z, ref)))
        sub *= 2
    if not rows:
        raise UsageError("--start exceeds --budget-n")
    out = _outdir(run)
    write_csv(out / "flow.csv", ["n_substeps", "N_steps", "D", "letters", "sup_error"], rows, run)
    write_json(out / "flow.json", {"isotopy": args.isotopy, "table": [list(r) for r in rows],
                                   "final_error": rows[-1][-1], "within_eps": rows[-1][-1] <= run.eps}, run)
    for r in rows:
        print(f"n_substeps={r[0]:5d} sup_error={r[-1]:.3e}")
    return 0


def _load_word(path: str | None, n: int) -> AutomorphismWord:
    if path is None:
        return AutomorphismWord(n)
    data = _load_json(path)
    if data is None:
        raise UsageError(f"{path}: empty word file")
    data = data.get("word", data)
    try:
        return AutomorphismWord.from_json(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: not a word ({exc})") from exc


def cmd_expose(run: RunConfig, args) -> int:
    domain = _domain(run)
    out = _outdir(run)
    status = 0
    try:
        result = expose(domain, run.expose_config())
    except ExposednessFailed as exc:
        result = exc.result
        status = 3
    rep = result.report
    write_json(out / "word.json", {"word": result.word.to_json()}, run, compact=True)
    write_json(out / "report.json", dict(result.to_json(), passed=rep.passed, domain=domain.to_json()), run)
    pts = domain.boundary_sample(run.samples, run.seed, domain.p, 0.5)
    img = result.word.apply(pts.T.copy()).T
    rows = []
    for i in range(len(pts)):
        row = [i]
        for j in range(domain.n):
            row += [float(pts[i, j].real), float(pts[i, j].imag)]
        for j in range(domain.n):
            row += [float(img[i, j].real), float(img[i, j].imag)]
        rows.append(row)
    header = ["index"] + [f"{c}_z{j + 1}" for j in range(domain.n) for c in ("re", "im")] \
        + [f"{c}_F{j + 1}" for j in range(domain.n) for c in ("re", "im")]
    write_csv(out / "samples.csv", header, rows, run)
    theta = np.linspace(0, 2 * np.pi, 2048, endpoint=False)
    circle = np.zeros((len(theta), domain.n), dtype=complex)
    circle[:, -1] = -1j + np.exp(1j * theta)
    curve = result.word.apply(circle.T.copy())[-1]
    write_slice_ppm(out / "slice.ppm", curve, img[:, -1], run, run.normal_reach)
    verdict = "PASS" if rep.passed else "FAIL"
    print(f"{verdict}: |F(p) - target| = {rep.value_error:.2e}, max Im = {rep.max_Im:.9f}, "
          f"c_exp = {rep.c_exp:.3e}, margin exponent = {rep.margin_exponent:.3f}, letters = {len(result.word)}")
    return status


def cmd_verify(run: RunConfig, args) -> int:
    domain = _domain(run)
    word = _load_word(args.word, domain.n)
    if word.n != domain.n:
        raise UsageError(f"word acts on C^{word.n} but the domain lives in C^{domain.n}")
    rep = verify_exposed(word, domain, domain.p, run.samples, run.seed, run.normal_reach)
    out = _outdir(run)
    write_json(out / "verify.json", dict(rep.to_json(), domain=domain.to_json(), word=args.word), run)
    print(f"{'PASS' if rep.passed else 'FAIL'}: value error {rep.value_error:.2e}, max Im {rep.max_Im:.9f}, "
          f"c_exp {rep.c_exp:.3e}")
    return 0 if rep.passed else 3


def cmd_jet_match(run: RunConfig, args) -> int:
    domain = _domain(run)
    iso = exposing_isotopy(domain, run.normal_reach)
    target = iso.time_map(1.0)
    cfg = run.expose_config()
    K = fit_samples(domain, cfg)
    if args.word:
        word = _load_word(args.word, domain.n)
        approx = None
    else:
        acfg = ApproxConfig(max_N=run.budget_N, max_substeps=run.budget_n, max_D=run.budget_D, seed=run.seed)
        approx = approximate_isotopy(iso, K, run.eps, acfg)
        word = approx.word
    d = args.order if args.order else 2 * domain.k + 2
    fix = jet_fix(word, target, domain.p, d, K, cfg.eps_guard, table_seed=run.seed)
    after = jet_defect(fix.word, target, domain.p, d - 1)
    out = _outdir(run)
    write_json(out / "jet.json", {"order": d - 1, "jetfix": fix.to_json(), "defect_check": after.deviation(),
                                  "approximation": approx.to_json() if approx else None}, run)
    write_json(out / "word.json", {"word": fix.word.to_json()}, run, compact=True)
    print(f"jet defect {fix.defect_before:.3e} -> {fix.defect_after:.3e} through order {d - 1}, "
          f"guard displacement {fix.displacement:.3e}")
    return 0


def cmd_param_expose(run: RunConfig, args) -> int:
    domain = _domain(run)
    res = param_expose(domain, M=args.M, config=run.expose_config(), heldout=args.heldout)
    out = _outdir(run)
    reports = [dict(theta=th, **r.to_json()) for th, r in res.sample_reports]
    write_json(out / "report.json", {"passed": res.passed, "per_theta": reports,
                                     "heldout": [{"theta": th, "max_Im": m} for th, m in res.heldout],
                                     "smoothness": res.smoothness, "base": res.base.to_json()}, run)
    write_json(out / "family.json", {"family": res.family.to_json()}, run, compact=True)
    rows = [(th, "sample", r.max_Im, r.value_error, "PASS" if r.passed else "FAIL") for th, r in res.sample_reports]
    rows += [(th, "heldout", m, float("nan"), "PASS" if m < run.normal_reach else "FAIL") for th, m in res.heldout]
    write_csv(out / "thetas.csv", ["theta", "kind", "max_Im", "value_error", "verdict"], rows, run)
    print(f"{'PASS' if res.passed else 'FAIL'}: {sum(r.passed for _, r in res.sample_reports)}/{len(reports)} "
          f"sample angles, held-out max Im {max(m for _, m in res.heldout):.9f}, "
          f"max jump {res.smoothness['max_jump']:.2e}")
    return 0 if res.passed else 3


COMMANDS = {
    "decompose": cmd_decompose,
    "expose": cmd_expose,
    "flow": cmd_flow,
    "jet-match": cmd_jet_match,
    "param-expose": cmd_param_expose,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--n", type=int, default=2, help="complex dimension")
    common.add_argument("--k", type=int, default=1, help="type parameter of the model domain")
    common.add_argument("--eps", type=float, default=1e-3, help="target sup-error on the fit set")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--samples", type=int, default=10_000, help="boundary samples for verification")
    common.add_argument("--budget-N", dest="budget_N", type=int, default=64, help="max Euler steps")
    common.add_argument("--budget-n", dest="budget_n", type=int, default=1024, help="max splitting substeps")
    common.add_argument("--budget-D", dest="budget_D", type=int, default=10, help="max fitted field degree")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--no-jetfix", dest="jetfix", action="store_false", help="skip the jet correction")
    common.add_argument("--normal-reach", dest="normal_reach", type=float, default=1.0,
                        help="height R of the image point R*i*e_n")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="shearflow", description="Exposing points with words of shears and overshears.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("decompose", parents=[common], help="split a polynomial field into elementary fields")
    p.add_argument("field", help="vector field JSON")
    p.add_argument("--tol", type=float, default=1e-9)
    sub.add_parser("expose", parents=[common], help="build and audit an exposing automorphism")
    p = sub.add_parser("flow", parents=[common], help="splitting error table for a bundled isotopy")
    p.add_argument("--isotopy", choices=sorted(ISOTOPIES), default="rotation")
    p.add_argument("--steps", type=int, default=1, help="Euler steps")
    p.add_argument("--degree", type=int, default=6, help="fitted field degree")
    p.add_argument("--start", type=int, default=8, help="first substep count")
    p.add_argument("--points", type=int, default=200, help="test points in the half-unit polydisc")
    p = sub.add_parser("jet-match", parents=[common], help="correct the jet of a word at p")
    p.add_argument("--word", help="word JSON (default: approximate the exposing isotopy)")
    p.add_argument("--order", type=int, default=0, help="d; jets agree through order d-1 (default 2k+2)")
    p = sub.add_parser("param-expose", parents=[common], help="expose a circle of boundary points")
    p.add_argument("--M", type=int, default=8, help="sample angles")
    p.add_argument("--heldout", type=int, default=2, help="held-out angles per gap")
    p = sub.add_parser("verify", parents=[common], help="audit a word against the model domain")
    p.add_argument("--word", help="word JSON (default: the identity)")
    return parser


EXTRA_KEYS = ("field", "tol", "isotopy", "steps", "degree", "start", "points", "word", "order", "M", "heldout")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    extra = {key: getattr(args, key) for key in EXTRA_KEYS if hasattr(args, key)}
    try:
        run = RunConfig(args.command, args.seed, args.n, args.k, args.eps, args.budget_N, args.budget_n,
                        args.budget_D, args.samples, args.out, args.jetfix, args.normal_reach, extra)
        return COMMANDS[args.command](run, args)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except ExposednessFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 3
    except (UsageError, ShearflowError, ValueError) as exc:
        print(f"shearflow: error: {exc}", file=sys.stderr)
        return 1

if __name__ == "__main__":
    sys.exit(main())
