"""The Lévy generator A = L + J + K acting pointwise on C^2 functions.

    Lu(x) = b.∇u(x) + 1/2 ∇.Q∇u(x)
    Ju(x) = Σ_ik ∫_{0<|y|<1} ∫_0^1 ∂_i∂_k u(x+ty) y_i y_k (1-t) dt ν(dy)
    Ku(x) = ∫_{|y|>=1} (u(x+y) - u(x)) ν(dy)

J is written in Taylor-remainder form so that no cancellation happens for
small |y|; the inner t-integral uses a fixed 16-node Gauss rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .measure import levy_integral
from .quadrature import adaptive_gl, ball_volume, gauss_legendre, mapped_rule
from .triplet import LevyTriplet, MomentCriterionError, jump_moment_criterion
from .weights import WeightFunction, as_points

T_NODES = 16
# beyond this jump size the remainder is taken as a plain difference
Y_DIRECT = 0.05
FD_STEP = 1e-5
FD_RTOL = 1e-4


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class C2Function:
    """A C^2 function on R^dim with gradient and hessian evaluators.

    ``fn`` maps (k, d) -> (k,), ``grad`` (k, d) -> (k, d), ``hess``
    (k, d) -> (k, d, d).  ``center``/``support_radius`` describe a ball
    containing the support (radius inf for global functions).
    """

    fn: Callable[[np.ndarray], np.ndarray]
    grad: Optional[Callable[[np.ndarray], np.ndarray]]
    hess: Optional[Callable[[np.ndarray], np.ndarray]]
    dim: int = 1
    support_radius: float = math.inf
    center: tuple[float, ...] = ()
    smooth: bool = True
    name: str = "u"

    def __post_init__(self):
        if not self.center:
            object.__setattr__(self, "center", (0.0,) * self.dim)

    def __call__(self, x) -> np.ndarray:
        return self.fn(as_points(x, self.dim))

    def gradient(self, x) -> np.ndarray:
        if self.grad is None:
            raise GeneratorError(f"{self.name} has no gradient evaluator")
        return self.grad(as_points(x, self.dim))

    def hessian(self, x) -> np.ndarray:
        if self.hess is None:
            raise GeneratorError(f"{self.name} has no hessian evaluator")
        return self.hess(as_points(x, self.dim))

    @property
    def compact(self) -> bool:
        return math.isfinite(self.support_radius)

    def reflected(self) -> "C2Function":
        """x -> u(-x)."""
        return C2Function(
            fn=lambda x: self.fn(-x),
            grad=None if self.grad is None else (lambda x: -self.grad(-x)),
            hess=None if self.hess is None else (lambda x: self.hess(-x)),
            dim=self.dim, support_radius=self.support_radius,
            center=tuple(-c for c in self.center), smooth=self.smooth, name=f"{self.name}(-x)",
        )

    def scaled(self, a: float) -> "C2Function":
        return linear_combination([a], [self])

    def __add__(self, other: "C2Function") -> "C2Function":
        return linear_combination([1.0, 1.0], [self, other])

    def __mul__(self, other: "C2Function") -> "C2Function":
        return product(self, other)

    def sup_norm_c2(self, radius: Optional[float] = None, samples: int = 4001) -> float:
        """max_{|α|<=2} sup |∂^α u| over the support ball (dense sampling)."""
        pts = _ball_samples(self, radius, samples)
        return float(max(np.max(np.abs(self(pts))), np.max(np.abs(self.gradient(pts))),
                         np.max(np.abs(self.hessian(pts)))))


def _ball_samples(u: C2Function, radius: Optional[float], samples: int) -> np.ndarray:
    r = u.support_radius if radius is None else radius
    if not math.isfinite(r):
        raise GeneratorError("sampling a globally supported function needs an explicit radius")
    c = np.asarray(u.center)
    if u.dim == 1:
        return np.linspace(c[0] - r, c[0] + r, samples)[:, None]
    n = max(3, int(round(samples ** (1.0 / u.dim))))
    axes = [np.linspace(ci - r, ci + r, n) for ci in c]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, u.dim)
    return pts[np.linalg.norm(pts - c, axis=1) <= r]


def check_derivatives(u: C2Function, points: np.ndarray, step: float = FD_STEP, rtol: float = FD_RTOL) -> float:
    """Largest relative mismatch between analytic and central-difference derivatives."""
    x = as_points(points, u.dim)
    d = u.dim
    g_an, h_an = u.gradient(x), u.hessian(x)
    worst = 0.0
    for i in range(d):
        e = np.zeros(d)
        e[i] = step
        g_fd = (u(x + e) - u(x - e)) / (2 * step)
        h_fd = (u.gradient(x + e) - u.gradient(x - e)) / (2 * step)
        scale_g = np.maximum(np.abs(g_an[:, i]), np.max(np.abs(g_an)) * 1e-3 + 1e-12)
        scale_h = np.maximum(np.abs(h_an[:, :, i]), np.max(np.abs(h_an)) * 1e-3 + 1e-12)
        worst = max(worst, float(np.max(np.abs(g_fd - g_an[:, i]) / scale_g)),
                    float(np.max(np.abs(h_fd - h_an[:, :, i]) / scale_h)))
    return worst


# ---------------------------------------------------------------- constructors

def _bump_profile(s: np.ndarray):
    """B(s) = exp(-1/(1-s)) for s < 1 and its first two s-derivatives."""
    inside = s < 1.0
    b = np.zeros_like(s)
    db = np.zeros_like(s)
    ddb = np.zeros_like(s)
    om = 1.0 - s[inside]
    b[inside] = np.exp(-1.0 / om)
    db[inside] = -b[inside] / om**2
    ddb[inside] = b[inside] * (1.0 / om**4 - 2.0 / om**3)
    return b, db, ddb


def _quadratic_form_function(profile, center, scale2, height, dim, radius, name):
    """height * profile(|x-c|^2 / scale2) with derivatives via the chain rule."""
    c = np.asarray(center, dtype=float).reshape(dim)

    def parts(x):
        z = x - c
        s = np.sum(z * z, axis=1) / scale2
        return z, *profile(s)

    def fn(x):
        return height * parts(x)[1]

    def grad(x):
        z, _, d1, _ = parts(x)
        return height * d1[:, None] * 2.0 * z / scale2

    def hess(x):
        z, _, d1, d2 = parts(x)
        outer = np.einsum("ki,kj->kij", z, z)
        return height * (d2[:, None, None] * 4.0 * outer / scale2**2 + d1[:, None, None] * 2.0 * np.eye(dim) / scale2)

    return C2Function(fn, grad, hess, dim=dim, support_radius=radius, center=tuple(c), name=name)


def bump(radius: float = 1.0, center=0.0, height: float = 1.0, dim: int = 1) -> C2Function:
    """height * exp(-1/(1-|x-c|^2/r^2)) on the open ball B_r(c)."""
    return _quadratic_form_function(_bump_profile, center, radius**2, height, dim, radius, f"bump(r={radius})")


def gaussian_bump(sd: float = 1.0, center=0.0, height: float = 1.0, dim: int = 1) -> C2Function:
    """height * exp(-|x-c|^2 / (2 sd^2)); Schwartz class, global support."""

    def prof(s):
        e = np.exp(-0.5 * s)
        return e, -0.5 * e, 0.25 * e

    return _quadratic_form_function(prof, center, sd**2, height, dim, math.inf, f"gauss(sd={sd})")


def sine(freq: float = 1.0, phase: float = 0.0) -> C2Function:
    """sin(freq*x + phase) in d = 1."""
    return C2Function(
        fn=lambda x: np.sin(freq * x[:, 0] + phase),
        grad=lambda x: (freq * np.cos(freq * x[:, 0] + phase))[:, None],
        hess=lambda x: (-freq**2 * np.sin(freq * x[:, 0] + phase))[:, None, None],
        name="sin",
    )


def monomial(power: int) -> C2Function:
    """x^power in d = 1 (use with a cutoff to make it compactly supported)."""
    p = int(power)

    def d(x, k):
        coef = math.perm(p, k) if k <= p else 0
        return coef * x[:, 0] ** max(p - k, 0) if coef else np.zeros(x.shape[0])

    return C2Function(lambda x: d(x, 0), lambda x: d(x, 1)[:, None], lambda x: d(x, 2)[:, None, None], name=f"x^{p}")


def from_weight(g: WeightFunction) -> C2Function:
    if g.grad is None or g.hess is None:
        raise GeneratorError(f"weight {g.family} has no derivative evaluators; mollify it first")
    return C2Function(fn=g.fn, grad=g.grad, hess=g.hess, dim=g.dim, name=f"g[{g.family}]")


def linear_combination(coeffs: Sequence[float], funcs: Sequence[C2Function]) -> C2Function:
    dim = funcs[0].dim
    coeffs = [float(a) for a in coeffs]
    if any(f.dim != dim for f in funcs):
        raise GeneratorError("dimension mismatch in linear combination")

    def comb(attr):
        def h(x):
            return sum(a * getattr(f, attr)(x) for a, f in zip(coeffs, funcs))
        return h

    if all(f.compact for f in funcs):
        c = np.mean([np.asarray(f.center) for f in funcs], axis=0)
        r = max(np.linalg.norm(np.asarray(f.center) - c) + f.support_radius for f in funcs)
    else:
        c, r = np.zeros(dim), math.inf
    has_d = all(f.grad is not None and f.hess is not None for f in funcs)
    return C2Function(
        comb("fn"), comb("grad") if has_d else None, comb("hess") if has_d else None,
        dim=dim, support_radius=r, center=tuple(c), name="lincomb",
    )


def product(u: C2Function, v: C2Function) -> C2Function:
    """Pointwise product with the Leibniz rule for derivatives."""
    if u.dim != v.dim:
        raise GeneratorError("dimension mismatch in product")

    def fn(x):
        return u.fn(x) * v.fn(x)

    def grad(x):
        return u.grad(x) * v.fn(x)[:, None] + v.grad(x) * u.fn(x)[:, None]

    def hess(x):
        gu, gv = u.grad(x), v.grad(x)
        cross = np.einsum("ki,kj->kij", gu, gv)
        return (u.hess(x) * v.fn(x)[:, None, None] + v.hess(x) * u.fn(x)[:, None, None]
                + cross + np.transpose(cross, (0, 2, 1)))

    cand = [f for f in (u, v) if f.compact]
    best = min(cand, key=lambda f: f.support_radius) if cand else None
    return C2Function(
        fn, grad, hess, dim=u.dim,
        support_radius=best.support_radius if best else math.inf,
        center=best.center if best else (), name=f"{u.name}*{v.name}",
    )


# ---------------------------------------------------------------- cutoff

_STEP_EDGES = np.linspace(0.0, 1.0, 513)


def _transition_kernel(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = (s > 0) & (s < 1)
    out[m] = np.exp(-1.0 / (s[m] * (1.0 - s[m])))
    return out


def _build_step_table():
    x, w = mapped_rule(_STEP_EDGES[:-1], _STEP_EDGES[1:], 20)
    cells = np.sum(w * _transition_kernel(x), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(cells)])
    return cum, cum[-1]


_STEP_CUM, _STEP_TOTAL = _build_step_table()


def smooth_step(tau):
    """C^inf transition: 0 for tau <= 0, 1 for tau >= 1 (normalized antiderivative of the bump)."""
    tau = np.clip(np.asarray(tau, dtype=float), 0.0, 1.0)
    idx = np.minimum(np.searchsorted(_STEP_EDGES, tau, side="right") - 1, _STEP_EDGES.size - 2)
    left = _STEP_EDGES[idx]
    x, w = mapped_rule(left, tau, 20)
    partial = np.sum(w * _transition_kernel(x), axis=-1)
    return (_STEP_CUM[idx] + partial) / _STEP_TOTAL


def _smooth_step_d(tau):
    k = _transition_kernel(tau)
    tau = np.asarray(tau, dtype=float)
    dk = np.zeros_like(tau)
    m = (tau > 0) & (tau < 1)
    t = tau[m]
    dk[m] = k[m] * (1.0 - 2.0 * t) / (t * (1.0 - t)) ** 2
    return k / _STEP_TOTAL, dk / _STEP_TOTAL


@dataclass(frozen=True)
class Cutoff:
    """χ_R with 1 on the closed ball B_{R+1} and 0 outside B_{R+2}."""

    R: float
    dim: int = 1

    def __post_init__(self):
        if not self.R > 0:
            raise GeneratorError("cutoff radius must be positive")

    def _radial(self, r):
        tau = r - self.R - 1.0
        q = 1.0 - smooth_step(tau)
        d1, d2 = _smooth_step_d(tau)
        return q, -d1, -d2

    def __call__(self, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        return self._radial(np.linalg.norm(pts, axis=1))[0]

    def as_c2(self) -> C2Function:
        d = self.dim

        def fn(x):
            return self._radial(np.linalg.norm(x, axis=1))[0]

        def grad(x):
            r = np.linalg.norm(x, axis=1)
            _, q1, _ = self._radial(r)
            with np.errstate(invalid="ignore", divide="ignore"):
                unit = np.where(r[:, None] > 0, x / r[:, None], 0.0)
            return q1[:, None] * unit

        def hess(x):
            r = np.linalg.norm(x, axis=1)
            _, q1, q2 = self._radial(r)
            with np.errstate(invalid="ignore", divide="ignore"):
                unit = np.where(r[:, None] > 0, x / r[:, None], 0.0)
                inv_r = np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), 0.0)
            outer = np.einsum("ki,kj->kij", unit, unit)
            return q2[:, None, None] * outer + (q1 * inv_r)[:, None, None] * (np.eye(d) - outer)

        return C2Function(fn, grad, hess, dim=d, support_radius=self.R + 2.0, name=f"chi_{self.R}")


# ---------------------------------------------------------------- the generator

@dataclass(frozen=True)
class GeneratorValue:
    L: np.ndarray
    J: np.ndarray
    K: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.L + self.J + self.K

    def __getitem__(self, i):
        return GeneratorValue(self.L[i], self.J[i], self.K[i])


def _local_part(triplet: LevyTriplet, u: C2Function, x: np.ndarray) -> np.ndarray:
    if not np.any(triplet.b) and not np.any(triplet.Q):
        return np.zeros(x.shape[0])
    return u.gradient(x) @ triplet.b + 0.5 * np.einsum("kij,ij->k", u.hessian(x), triplet.Q)


def _support_breaks(u: C2Function, x: np.ndarray, extra: float = 0.0) -> list[float]:
    """Radii |y| where y -> u(x+y) can switch on or off (d = 1 only)."""
    if not u.compact or u.dim != 1:
        return []
    c, rho = u.center[0], u.support_radius + extra
    pts = np.abs(np.concatenate([c - x[:, 0] - rho, c - x[:, 0] + rho]))
    return sorted(set(np.round(pts[pts > 0], 14).tolist()))


def _near_support(u: C2Function, x: np.ndarray, reach: float) -> np.ndarray:
    if not u.compact:
        return np.ones(x.shape[0], dtype=bool)
    return np.linalg.norm(x - np.asarray(u.center), axis=1) < u.support_radius + reach


def _small_jump_part(triplet: LevyTriplet, u: C2Function, x: np.ndarray, rtol: float) -> np.ndarray:
    nu = triplet.nu.restricted(0.0, 1.0)
    out = np.zeros(x.shape[0])
    if nu.is_zero:
        return out
    active = _near_support(u, x, 1.0)
    if not np.any(active):
        return out
    xa = x[active]
    tn, tw = gauss_legendre(T_NODES)
    t = 0.5 * (tn + 1.0)
    wt = 0.5 * tw * (1.0 - t)
    d = triplet.dim

    ux = u.fn(xa)
    gx = u.gradient(xa)

    def f(y):
        # u(x+y) - u(x) - y.∇u(x): Taylor remainder in integral form for tiny |y|,
        # where the difference cancels; a plain difference otherwise, since
        # fixed t-nodes cannot follow D^2 u across the edge of a compact support
        out = np.empty((y.shape[0], xa.shape[0]))
        big = np.linalg.norm(y, axis=1) > Y_DIRECT
        if np.any(big):
            yb = y[big]
            shifted = u.fn((xa[None, :, :] + yb[:, None, :]).reshape(-1, d)).reshape(yb.shape[0], xa.shape[0])
            out[big] = shifted - ux[None, :] - yb @ gx.T
        if np.any(~big):
            ys = y[~big]
            pts = xa[None, :, None, :] + t[None, None, :, None] * ys[:, None, None, :]
            H = u.hessian(pts.reshape(-1, d)).reshape(ys.shape[0], xa.shape[0], t.size, d, d)
            out[~big] = np.einsum("nmtij,ni,nj,t->nm", H, ys, ys, wt)
        return out

    # absolute floor on the natural scale sup_{|z-x|<=1} |D^2 u(z)| ∫|y|^2 dν, so that
    # points where J u is tiny (bump edges) do not force pointless refinement
    m2 = float(levy_integral(nu, lambda y: np.sum(y * y, axis=1), "small_jumps").value)
    offs = np.linspace(-1.0, 1.0, 17)
    probe = (xa[:, None, :] + offs[None, :, None] * np.ones(d)).reshape(-1, d)
    hscale = np.max(np.abs(u.hessian(probe)).reshape(xa.shape[0], -1), axis=1)
    atol = rtol * m2 * np.maximum(hscale, 1e-300)
    res = levy_integral(nu, f, "small_jumps", rtol=rtol, atol=atol, breaks=_support_breaks(u, xa))
    if not res.finite:
        raise GeneratorError("small-jump integral diverged; is u really C^2?")
    out[active] = np.real(np.atleast_1d(res.value))
    return out


def _large_jump_part(triplet: LevyTriplet, u: C2Function, x: np.ndarray, rtol: float) -> np.ndarray:
    nu = triplet.nu.restricted(1.0)
    if nu.is_zero:
        return np.zeros(x.shape[0])
    d = triplet.dim
    ux = u.fn(x)

    def f(y):
        vals = u.fn((x[None, :, :] + y[:, None, :]).reshape(-1, d)).reshape(y.shape[0], x.shape[0])
        return vals - ux[None, :]

    reach = 0.0
    if u.compact:
        reach = float(np.max(np.linalg.norm(x - np.asarray(u.center), axis=1))) + u.support_radius
    res = levy_integral(nu, f, "large_jumps", rtol=rtol, reach=reach, breaks=_support_breaks(u, x))
    if not res.finite:
        raise GeneratorError("large-jump integral ∫_{|y|>=1} (u(x+y)-u(x)) ν(dy) diverges")
    return np.real(np.atleast_1d(res.value))


def apply_generator(triplet: LevyTriplet, u: C2Function, x, rtol: float = 1e-10) -> GeneratorValue:
    """(L u, J u, K u) at every point of ``x`` (shape (k, d), (k,) in d=1, or a scalar)."""
    if u.dim != triplet.dim:
        raise GeneratorError("u and the triplet live in different dimensions")
    pts = as_points(x, triplet.dim)
    if u.hess is None or u.grad is None:
        raise GeneratorError("apply_generator needs gradient and hessian evaluators")
    return GeneratorValue(
        _local_part(triplet, u, pts),
        _small_jump_part(triplet, u, pts, rtol),
        _large_jump_part(triplet, u, pts, rtol),
    )


def apply_adjoint(triplet: LevyTriplet, phi: C2Function, x, rtol: float = 1e-10) -> GeneratorValue:
    """(A*φ)(x) = (Aφ)(-x)."""
    return apply_generator(triplet, phi, -as_points(x, triplet.dim), rtol=rtol)


# ---------------------------------------------------------------- tabulation

@dataclass
class GeneratorTable:
    """Au sampled on a uniform grid (d = 1) with cubic interpolation inside and
    exact evaluation outside the tabulated range."""

    triplet: LevyTriplet
    u: C2Function
    grid: np.ndarray
    values: np.ndarray
    _spline: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        self._spline = CubicSpline(self.grid, self.values)

    @classmethod
    def build(cls, triplet: LevyTriplet, u: C2Function, lo: float, hi: float, step: float = 1e-2,
              chunk: int = 32, rtol: float = 1e-10) -> "GeneratorTable":
        n = max(8, int(math.ceil((hi - lo) / step)) + 1)
        return cls.from_grid(triplet, u, np.linspace(lo, hi, n), chunk=chunk, rtol=rtol)

    @classmethod
    def from_grid(cls, triplet: LevyTriplet, u: C2Function, grid, chunk: int = 32,
                  rtol: float = 1e-10) -> "GeneratorTable":
        if triplet.dim != 1:
            raise GeneratorError("tabulation is implemented for d = 1")
        grid = np.unique(np.asarray(grid, dtype=float))
        vals = np.concatenate([
            apply_generator(triplet, u, grid[i:i + chunk], rtol=rtol).total for i in range(0, grid.size, chunk)
        ])
        return cls(triplet, u, grid, vals)

    @classmethod
    def covering(cls, triplet: LevyTriplet, u: C2Function, lo: float, hi: float, core: float,
                 step: float = 2e-2, ratio: float = 1.05, rtol: float = 1e-8, tol: float = 1e-5,
                 rounds: int = 6) -> "GeneratorTable":
        """Uniform nodes on [-core, core] ∩ [lo, hi], geometric nodes beyond.

        Intervals whose midpoint misses the spline by more than tol · sup|Au|
        are bisected, so boundary layers of Au get resolved.
        """
        lo, hi = min(lo, -step), max(hi, step)
        a, b = max(lo, -core), min(hi, core)
        parts = [np.linspace(a, b, max(8, int(math.ceil((b - a) / step)) + 1))]
        for sgn, edge in ((1.0, hi), (-1.0, -lo)):
            if edge > core:
                k = int(math.ceil(math.log(edge / core) / math.log(ratio)))
                parts.append(sgn * core * ratio ** np.arange(1, k + 1))
        table = cls.from_grid(triplet, u, np.concatenate(parts), rtol=rtol)
        mids = 0.5 * (table.grid[1:] + table.grid[:-1])
        for _ in range(rounds):
            exact = cls.from_grid(triplet, u, mids, rtol=rtol)
            miss = np.abs(table._spline(exact.grid) - exact.values) > tol * max(table.sup_abs, 1e-300)
            grid = np.concatenate([table.grid, exact.grid])
            vals = np.concatenate([table.values, exact.values])
            order = np.argsort(grid)
            table = cls(triplet, u, grid[order], vals[order])
            if not miss.any():
                break
            # bisect both halves of every interval that missed
            bad = exact.grid[miss]
            idx = np.searchsorted(table.grid, bad)
            mids = np.concatenate([0.5 * (table.grid[idx - 1] + bad), 0.5 * (bad + table.grid[idx + 1])])
        return table

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        out = np.empty_like(flat)
        inside = (flat >= self.grid[0]) & (flat <= self.grid[-1])
        out[inside] = self._spline(flat[inside])
        if np.any(~inside):
            far = np.unique(flat[~inside])
            fv = apply_generator(self.triplet, self.u, far).total
            out[~inside] = fv[np.searchsorted(far, flat[~inside])]
        return out.reshape(x.shape)

    @property
    def sup_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


# ---------------------------------------------------------------- bounds

def small_jump_second_moment(triplet: LevyTriplet) -> float:
    """∫ (1 ∧ |y|^2) ν(dy)."""
    res = levy_integral(triplet.nu, lambda y: np.minimum(np.sum(y * y, axis=1), 1.0), "all")
    return float(res.value)


@dataclass(frozen=True)
class BoundConstants:
    c_local: float
    c_large: float
    c_small: float
    bracket: float

    @property
    def C_eps(self) -> float:
        return max(self.c_local, self.c_large, self.c_small)


def generator_bound_constants(triplet: LevyTriplet, g_eps: WeightFunction) -> BoundConstants:
    """Constants of |A g^ε(x)| <= C_ε (|b| + |Q| + ∫1∧|y|^2 + sup_{|y|<=1} g + ∫_{|y|>=1} g) g(x).

    With c_{ε,α} = c_ε ∫|∂^α j_ε|:
      L: max(max_i c_{ε,i}, 1/2 max_ik c_{ε,ik})
      K: c_ε (c + 1)                      (g >= 1 absorbs the ν-mass term)
      J: 1/2 c sup_{|y|<=1} g Σ_ik c_{ε,ik}
    """
    if g_eps.family != "mollified" or g_eps.base is None:
        raise GeneratorError("the bound applies to mollified weights g^ε")
    g = g_eps.base
    ex = g_eps.extra
    crit = jump_moment_criterion(triplet.nu, g)
    if not crit.finite:
        raise MomentCriterionError("∫_{|y|>=1} g dν is infinite; the bound is void")
    sup1 = g.sup_ball(1.0)
    c_grad, c_hess = np.asarray(ex["c_grad"]), np.asarray(ex["c_hess"])
    c_local = max(float(np.max(c_grad)), 0.5 * float(np.max(c_hess)))
    c_large = ex["c_eps"] * (g.c + 1.0)
    c_small = 0.5 * g.c * sup1 * float(np.sum(c_hess))
    bracket = (np.sum(np.abs(triplet.b)) + np.sum(np.abs(triplet.Q)) + small_jump_second_moment(triplet)
               + sup1 + crit.value)
    return BoundConstants(c_local, c_large, c_small, float(bracket))


def gen09_bound(triplet: LevyTriplet, g_eps: WeightFunction, x) -> tuple[np.ndarray, np.ndarray]:
    """(|A g^ε(x)|, C_ε · bracket · g(x)) at each point."""
    k = generator_bound_constants(triplet, g_eps)
    pts = as_points(x, triplet.dim)
    lhs = np.abs(apply_generator(triplet, from_weight(g_eps), pts).total)
    rhs = k.C_eps * k.bracket * g_eps.base(pts)
    return lhs, rhs


@dataclass(frozen=True)
class AdjointNorm:
    finite: bool
    ball_part: float
    tail_part: float
    rhs: float
    c3: float

    @property
    def value(self) -> float:
        return self.ball_part + self.tail_part

    @property
    def holds(self) -> bool:
        return self.finite and self.value <= self.rhs * (1.0 + 1e-9)


def adjoint_weighted_norm(triplet: LevyTriplet, phi: C2Function, g: WeightFunction,
                          n_panels: int = 16) -> AdjointNorm:
    """‖A*φ‖_{L^1(g)} split as in the (e) => (g) argument (d = 1).

    On |x| <= 2R the integral is computed by quadrature; outside, A*φ(x) is
    the jump integral ∫ φ(y-x) ν(dy) and by Tonelli its g-weighted L^1 norm is
    at most ∫ ν(dy) ∫_{|z|<=R} |φ(z)| g(y-z) 1{|y-z|>2R} dz, which is computed
    as a ν-integral.  R = max(support radius, 1) around the origin.
    """
    if triplet.dim != 1:
        raise GeneratorError("the weighted adjoint norm is implemented for d = 1")
    if not phi.compact:
        raise GeneratorError("φ must be compactly supported")
    R = max(abs(phi.center[0]) + phi.support_radius, 1.0)
    crit = jump_moment_criterion(triplet.nu, g)
    if not crit.finite:
        return AdjointNorm(False, math.inf, math.inf, math.inf, math.inf)

    edges = np.linspace(-2 * R, 2 * R, n_panels + 1)
    xs, ws = mapped_rule(edges[:-1], edges[1:], 16)
    xs, ws = xs.ravel(), ws.ravel()
    av = apply_adjoint(triplet, phi, xs).total
    ball = float(ws @ (np.abs(av) * g(xs)))

    def h(y):
        # z ranges over {|z| <= R, |y - z| > 2R}: an interval hugging the far side
        yv = y[:, 0]
        lo = np.where(yv > 0, -R, np.maximum(-R, yv + 2 * R))
        hi = np.where(yv > 0, np.minimum(R, yv - 2 * R), R)
        hi = np.maximum(hi, lo)
        s_edges = np.linspace(0.0, 1.0, n_panels // 4 + 1)
        s, ws = mapped_rule(s_edges[:-1], s_edges[1:], 16)
        s, ws = s.ravel(), ws.ravel()
        z = lo[:, None] + (hi - lo)[:, None] * s[None, :]
        vals = np.abs(phi(z.reshape(-1, 1))).reshape(z.shape) * g((yv[:, None] - z).reshape(-1, 1)).reshape(z.shape)
        return (vals @ ws) * (hi - lo)

    far = triplet.nu.restricted(R)
    tail = levy_integral(far, h, "large_jumps", breaks=[R, 3 * R]) if not far.is_zero else None
    tail_val = 0.0 if tail is None else float(tail.value)
    if tail is not None and not tail.finite:
        return AdjointNorm(False, ball, math.inf, math.inf, math.inf)

    c2norm = phi.sup_norm_c2()
    c3 = 2.0 * ball_volume(1, 2 * R) * g.sup_ball(2 * R) + g.c * ball_volume(1, R) * g.sup_ball(R)
    bracket = (np.sum(np.abs(triplet.b)) + np.sum(np.abs(triplet.Q)) + small_jump_second_moment(triplet)
               + crit.value)
    return AdjointNorm(True, ball, tail_val, float(c3 * bracket * c2norm), float(c3))
