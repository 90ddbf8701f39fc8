"""Polynomial automorphisms of C^n built from shears and overshears.

The package approximates isotopies by words of elementary automorphisms,
corrects their jets at a point, and uses both to expose boundary points of
finite-type model domains.
"""
from __future__ import annotations

from .algebra import Jet, Multipoly, PolyMap, PolyVectorField, Series, jet_compose, jet_invert, jet_of
from .errors import (BudgetExhausted, DegenerateNormal, DimensionMismatch, EstimateNotFound, ExposednessFailed,
                     GuardViolated, IllConditioned, IncompatibleJets, NonFinite, NumericalFailure, RankDeficient,
                     ShearflowError, SingularJet)
from .expose import ExposeConfig, ModelDomain, expose, param_expose, support_function, verify_exposed
from .flows import AffineMap, ApproxConfig, AutomorphismWord, Isotopy, approximate_isotopy, rk4_oracle
from .jetfix import jet_fix, jet_interpolate
from .shears import ElementaryAuto, ElementaryField, decompose_field, decompose_homogeneous, monomial_table

__version__ = "0.1.0"
