"""Lévy measures as atoms plus parametric annulus densities.

All integrals against a measure go through :func:`levy_integral`: atoms are
summed exactly and each density is integrated radially (see
:mod:`levymoments.quadrature`) with divergence detection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .quadrature import QuadratureError, radial_integral, sphere_rule

FAMILIES = ("power_law", "tempered", "gaussian", "tabulated")
REGIONS = ("small_jumps", "large_jumps", "all")
INTEGRABILITY_RTOL = 1e-6


class MeasureError(ValueError):
    """A Lévy measure violates one of its structural invariants."""


@dataclass(frozen=True)
class QuadratureSpec:
    nodes: int = 16
    scheme: str = "gauss-legendre"

    def __post_init__(self):
        if self.scheme != "gauss-legendre":
            raise MeasureError(f"unknown quadrature scheme {self.scheme!r}")
        if self.nodes < 2:
            raise MeasureError("quadrature needs at least 2 nodes")


@dataclass(frozen=True)
class Atom:
    position: tuple[float, ...]
    mass: float

    def __post_init__(self):
        if not self.mass > 0 or not math.isfinite(self.mass):
            raise MeasureError(f"atom mass must be positive and finite, got {self.mass}")
        if all(p == 0.0 for p in self.position):
            raise MeasureError("a Lévy measure assigns no mass to the origin")


@dataclass(frozen=True)
class ParametricDensity:
    """A density with respect to Lebesgue measure, restricted to an annulus.

    Families and their ``params``:

    * ``power_law``: ``scale * |y|**(-1-alpha)``, 0 < alpha < 2
    * ``tempered``: ``scale * exp(-lam*|y|) * |y|**(-1-alpha)``
    * ``gaussian``: ``rate`` times the N(mean, sd^2 I) density
    * ``tabulated``: piecewise-linear ``values`` at ``knots`` (d=1 only)

    In d=1 the radial families also accept ``pos``/``neg`` multipliers for
    the two half-lines, which allows one-sided or skewed measures.
    """

    family: str
    params: Mapping[str, Any]
    support: tuple[float, float] = (0.0, math.inf)
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise MeasureError(f"unknown density family {self.family!r}")
        r_in, r_out = self.support
        if r_in < 0 or r_out <= r_in:
            raise MeasureError(f"bad support annulus {self.support}")
        p = self.params
        if self.family in ("power_law", "tempered"):
            alpha = p.get("alpha")
            if alpha is None or not 0 < alpha < 2:
                raise MeasureError(f"power-law families need 0 < alpha < 2, got {alpha}")
            if p.get("scale", 1.0) <= 0:
                raise MeasureError("scale must be positive")
            if min(p.get("pos", 1.0), p.get("neg", 1.0)) < 0:
                raise MeasureError("side multipliers must be non-negative")
        if self.family == "tempered" and not p.get("lam", 0) > 0:
            raise MeasureError("tempered density needs lam > 0")
        if self.family == "gaussian":
            if not p.get("rate", 0) > 0 or not p.get("sd", 0) > 0:
                raise MeasureError("gaussian jumps need rate > 0 and sd > 0")
        if self.family == "tabulated":
            knots = np.asarray(p.get("knots", ()), dtype=float)
            values = np.asarray(p.get("values", ()), dtype=float)
            if knots.ndim != 1 or knots.size < 2 or knots.shape != values.shape:
                raise MeasureError("tabulated density needs matching 1-D knots and values")
            if np.any(np.diff(knots) <= 0) or np.any(values < 0):
                raise MeasureError("knots must increase and values be non-negative")

    @property
    def radial(self) -> bool:
        return self.family in ("power_law", "tempered")

    def breakpoints(self) -> list[float]:
        pts = [1.0, *[s for s in self.support if 0 < s < math.inf]]
        if self.family == "gaussian":
            mean = np.atleast_1d(np.asarray(self.params.get("mean", 0.0), dtype=float))
            m, sd = float(np.linalg.norm(mean)), float(self.params["sd"])
            pts += [x for x in (m - 8 * sd, m - sd, m, m + sd, m + 8 * sd) if x > 0]
        if self.family == "tabulated":
            pts += [abs(k) for k in self.params["knots"] if k != 0]
        return pts

    def pdf(self, y: np.ndarray) -> np.ndarray:
        """Density at points ``y`` of shape (k, d)."""
        y = np.atleast_2d(y)
        r = np.linalg.norm(y, axis=1)
        r_in, r_out = self.support
        inside = (r >= r_in) & (r < r_out) & (r > 0)
        p = self.params
        out = np.zeros(r.shape)
        rr = np.where(inside, r, 1.0)
        if self.radial:
            base = p.get("scale", 1.0) * rr ** (-1.0 - p["alpha"])
            if self.family == "tempered":
                base = base * np.exp(-p["lam"] * rr)
            if y.shape[1] == 1:
                base = base * np.where(y[:, 0] > 0, p.get("pos", 1.0), p.get("neg", 1.0))
            out = np.where(inside, base, 0.0)
        elif self.family == "gaussian":
            d = y.shape[1]
            mean = np.broadcast_to(np.asarray(p.get("mean", 0.0), dtype=float), (d,))
            sd = p["sd"]
            z2 = np.sum((y - mean) ** 2, axis=1) / sd**2
            dens = p["rate"] * np.exp(-0.5 * z2) / (2 * np.pi * sd**2) ** (d / 2)
            out = np.where(inside, dens, 0.0)
        else:
            if y.shape[1] != 1:
                raise MeasureError("tabulated densities are one-dimensional")
            vals = np.interp(y[:, 0], p["knots"], p["values"], left=0.0, right=0.0)
            out = np.where(inside, vals, 0.0)
        return out

    def with_nodes(self, nodes: int) -> "ParametricDensity":
        return replace(self, quadrature=replace(self.quadrature, nodes=nodes))

    def restricted(self, r_lo: float, r_hi: float) -> "ParametricDensity | None":
        lo, hi = max(self.support[0], r_lo), min(self.support[1], r_hi)
        if hi <= lo:
            return None
        return replace(self, support=(lo, hi))


@dataclass(frozen=True)
class LevyMeasure:
    dim: int = 1
    atoms: tuple[Atom, ...] = ()
    densities: tuple[ParametricDensity, ...] = ()

    def __post_init__(self):
        if self.dim < 1:
            raise MeasureError("dimension must be positive")
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "densities", tuple(self.densities))
        for a in self.atoms:
            if len(a.position) != self.dim:
                raise MeasureError(f"atom {a.position} does not live in R^{self.dim}")
        for dens in self.densities:
            if dens.family == "tabulated" and self.dim != 1:
                raise MeasureError("tabulated densities are one-dimensional")

    @classmethod
    def zero(cls, dim: int = 1) -> "LevyMeasure":
        return cls(dim=dim)

    @property
    def is_zero(self) -> bool:
        return not self.atoms and not self.densities

    def atom_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.atoms:
            return np.zeros((0, self.dim)), np.zeros(0)
        pos = np.array([a.position for a in self.atoms], dtype=float)
        mass = np.array([a.mass for a in self.atoms], dtype=float)
        return pos, mass

    def with_nodes(self, nodes: int) -> "LevyMeasure":
        return replace(self, densities=tuple(d.with_nodes(nodes) for d in self.densities))

    def restricted(self, r_lo: float, r_hi: float = math.inf) -> "LevyMeasure":
        """The measure restricted to the annulus r_lo <= |y| < r_hi."""
        pos, _ = self.atom_arrays()
        r = np.linalg.norm(pos, axis=1)
        atoms = tuple(a for a, ri in zip(self.atoms, r) if r_lo <= ri < r_hi)
        dens = tuple(x for x in (d.restricted(r_lo, r_hi) for d in self.densities) if x is not None)
        return LevyMeasure(self.dim, atoms, dens)

    def validate(self) -> None:
        """Check that ∫ min(|y|², 1) ν(dy) is finite and stable under node doubling."""
        coarse = levy_integral(self, _min_sq_one, "all")
        if not coarse.finite:
            raise MeasureError("∫ min(|y|^2, 1) ν(dy) diverges: not a Lévy measure")
        fine = levy_integral(self.with_nodes(2 * self._nodes()), _min_sq_one, "all")
        denom = max(abs(fine.value), 1e-300)
        if abs(fine.value - coarse.value) / denom > INTEGRABILITY_RTOL:
            raise MeasureError("small-jump second moment is not stable under node doubling")

    def _nodes(self) -> int:
        return max([d.quadrature.nodes for d in self.densities], default=16)


def _min_sq_one(y: np.ndarray) -> np.ndarray:
    return np.minimum(np.sum(y * y, axis=1), 1.0)


@dataclass(frozen=True)
class IntegralResult:
    """Value of a ν-integral; ``value`` is +inf when divergence was detected."""

    value: Any
    finite: bool

    def __float__(self) -> float:
        return float(np.real(self.value))


def _region_bounds(region: str) -> tuple[float, float]:
    if region == "small_jumps":
        return 0.0, 1.0
    if region == "large_jumps":
        return 1.0, math.inf
    if region == "all":
        return 0.0, math.inf
    raise ValueError(f"region must be one of {REGIONS}, got {region!r}")


def levy_integral(
    nu: LevyMeasure,
    f: Callable[[np.ndarray], np.ndarray],
    region: str = "all",
    *,
    rtol: float = 1e-10,
    atol=1e-300,
    reach: float = 0.0,
    breaks: Sequence[float] = (),
    n_angular: int = 16,
) -> IntegralResult:
    """∫_region f(y) ν(dy).

    ``f`` receives points of shape (k, d) and returns shape (k,) or (k, m);
    the result has the matching shape () or (m,).  ``reach`` is a radius the
    outer sweep must cover before it may conclude (use it when f is supported
    far from the origin); ``atol`` is an absolute floor per shell, scalar
    or one entry per output component; ``breaks`` are extra radii where f is not smooth.
    Divergent integrals come back as ``+inf`` with
    ``finite=False``.
    """
    lo, hi = _region_bounds(region)
    d = nu.dim
    probe = np.asarray(f(np.ones((1, d))))
    scalar = probe.ndim == 1
    width = 1 if scalar else probe.shape[1]
    dtype = np.result_type(float, probe.dtype)
    pos, mass = nu.atom_arrays()
    total = np.zeros(width, dtype=dtype)
    if mass.size:
        r = np.linalg.norm(pos, axis=1)
        keep = (r >= lo) & (r < hi)
        if np.any(keep):
            vals = np.asarray(f(pos[keep])).reshape(int(keep.sum()), width)
            if not np.all(np.isfinite(vals)):
                raise QuadratureError("integrand not finite at an atom")
            total = total + mass[keep] @ vals
    dirs, dweights = sphere_rule(d, n_angular)
    for dens in nu.densities:
        r_in, r_out = max(lo, dens.support[0]), min(hi, dens.support[1])
        if r_out <= r_in:
            continue

        def G(r, dens=dens):
            pts = (r[:, None, None] * dirs[None, :, :]).reshape(-1, d)
            dv = dens.pdf(pts)
            nz = np.flatnonzero(dv)
            vals = np.zeros((pts.shape[0], width), dtype=dtype)
            if nz.size:
                vals[nz] = np.asarray(f(pts[nz])).reshape(nz.size, width) * dv[nz, None]
            vals = vals.reshape(r.size, dirs.shape[0], width)
            return np.einsum("kam,a->km", vals, dweights) * (r ** (d - 1))[:, None]

        res = radial_integral(
            G, r_in, r_out, breaks=[*dens.breakpoints(), *breaks], n=dens.quadrature.nodes,
            rtol=rtol, atol=atol, hint_hi=max(reach, 0.0),
        )
        if res.divergent:
            val = np.full(width, math.inf)
            return IntegralResult(float(val[0]) if scalar else val, False)
        total = total + res.value
    return IntegralResult(total[0] if scalar else total, True)
