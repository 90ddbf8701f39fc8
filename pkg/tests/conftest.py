from __future__ import annotations

import numpy as np
import pytest

from shearflow.algebra import Multipoly, PolyVectorField
from shearflow.shears import ElementaryField, random_pairs

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_poly(rng, n, degrees, scale=1.0, density=1.0):
    from shearflow.algebra import compositions

    terms = {}
    for m in degrees:
        for alpha in compositions(m, n):
            if rng.random() <= density:
                terms[alpha] = scale * complex(rng.standard_normal(), rng.standard_normal())
    return Multipoly(n, terms)


def random_field(rng, n, degrees, scale=1.0):
    return PolyVectorField([random_poly(rng, n, degrees, scale) for _ in range(n)])


def random_elementary(rng, n, m=None, kind=None, scale=1.0):
    kind = kind or ("shear" if rng.random() < 0.5 else "overshear")
    if m is None:
        m = int(rng.integers(0 if kind == "shear" else 1, 5))
    lam, v = random_pairs(rng, n, 1)
    c = scale * complex(rng.standard_normal(), rng.standard_normal())
    return ElementaryField(kind, c, lam[0], v[0], m)


def polydisc(rng, count, n, radius=1.0):
    r = radius * np.sqrt(rng.random((count, n)))
    return r * np.exp(2j * np.pi * rng.random((count, n)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
