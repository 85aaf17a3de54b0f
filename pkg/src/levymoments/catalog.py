"""Named processes, weights and test functions used by the checks and the CLI."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .generator import C2Function, bump, gaussian_bump, linear_combination, sine
from .measure import Atom, LevyMeasure, ParametricDensity
from .triplet import LevyTriplet
from .weights import Mollifier, WeightFunction, exp_beta, mollify, poly_p


def brownian(b: float = 0.0, Q: float = 1.0) -> LevyTriplet:
    return LevyTriplet([b], [[Q]], LevyMeasure(1))


def poisson(rate: float = 1.0, size: float = 1.0, b: float = 0.0) -> LevyTriplet:
    return LevyTriplet([b], [[0.0]], LevyMeasure(1, (Atom((size,), rate),)))


def atoms(positions, rates, b: float = 0.0, Q: float = 0.0) -> LevyTriplet:
    nu = LevyMeasure(1, tuple(Atom((float(p),), float(r)) for p, r in zip(positions, rates)))
    return LevyTriplet([b], [[Q]], nu)


def compound_gaussian(rate: float = 1.0, mean: float = 0.0, sd: float = 1.0, b: float = 0.0) -> LevyTriplet:
    dens = ParametricDensity("gaussian", {"rate": rate, "mean": mean, "sd": sd})
    return LevyTriplet([b], [[0.0]], LevyMeasure(1, (), (dens,)))


def tempered_stable(alpha: float = 1.5, lam: float = 3.0, scale: float = 1.0, b: float = 0.0, Q: float = 0.0) -> LevyTriplet:
    dens = ParametricDensity("tempered", {"alpha": alpha, "lam": lam, "scale": scale})
    return LevyTriplet([b], [[Q]], LevyMeasure(1, (), (dens,)))


def power_law(alpha: float = 1.5, scale: float = 1.0, b: float = 0.0, Q: float = 0.0) -> LevyTriplet:
    dens = ParametricDensity("power_law", {"alpha": alpha, "scale": scale})
    return LevyTriplet([b], [[Q]], LevyMeasure(1, (), (dens,)))


PROCESSES = {
    "bm": lambda: brownian(0.0, 1.0),
    "drifted_bm": lambda: brownian(-1.0, 1.0),
    "poisson": lambda: poisson(1.0),
    "cp_gauss": lambda: compound_gaussian(1.0, 0.0, 1.0),
    "tempered": lambda: tempered_stable(1.5, 3.0),
    "power_law": lambda: power_law(1.5),
}

WEIGHTS = {
    "exp1": lambda: exp_beta(1.0),
    "poly3": lambda: poly_p(3.0),
    "exp2": lambda: exp_beta(2.0),
}

# (process, weight) pairs where ∫_{|y|>=1} g dν diverges
DIVERGENT = {("power_law", "exp1"), ("power_law", "poly3"), ("power_law", "exp2")}


@lru_cache(maxsize=None)
def process(name: str) -> LevyTriplet:
    return PROCESSES[name]()


@lru_cache(maxsize=None)
def weight(name: str) -> WeightFunction:
    return WEIGHTS[name]()


@lru_cache(maxsize=None)
def mollified(name: str, epsilon: float = 0.1) -> WeightFunction:
    """Mollified catalog weight; cached because the kink tables are costly."""
    return mollify(weight(name), Mollifier(epsilon))


TEST_FUNCTIONS = {
    "bump": lambda: bump(1.0),
    "wide_bump": lambda: bump(2.0, center=0.5),
    "gauss_bump": lambda: gaussian_bump(0.7),
}


def test_function(name: str) -> C2Function:
    return TEST_FUNCTIONS[name]()


__all__ = [
    "brownian", "poisson", "atoms", "compound_gaussian", "tempered_stable", "power_law",
    "process", "weight", "mollified", "test_function", "PROCESSES", "WEIGHTS", "DIVERGENT",
    "sine", "linear_combination",
]
