"""Submultiplicative weight functions and their Friedrichs regularizations."""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .quadrature import gauss_legendre, mapped_rule, sphere_rule

ArrayFn = Callable[[np.ndarray], np.ndarray]


class WeightError(ValueError):
    pass


def as_points(x, dim: int) -> np.ndarray:
    """Coerce scalars, (k,), (d,) or (k, d) input to a (k, d) float array."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1) if dim == 1 else np.full((1, dim), float(x))
    if x.ndim == 1:
        return x[:, None] if dim == 1 else x.reshape(1, dim)
    return x


@dataclass(frozen=True)
class WeightFunction:
    """A locally bounded submultiplicative g >= 1 with constant ``c``.

    ``fn`` maps (k, d) points to (k,) values.  ``profile`` is set for radial
    weights g(x) = profile(|x|) and ``kinks`` lists radii where the profile
    is not smooth (used to place quadrature breakpoints).
    """

    fn: ArrayFn
    c: float
    dim: int = 1
    family: str = "custom"
    params: Mapping[str, Any] = field(default_factory=dict)
    smooth: bool = False
    grad: Optional[ArrayFn] = None
    hess: Optional[ArrayFn] = None
    profile: Optional[Callable[[np.ndarray], np.ndarray]] = None
    increasing: bool = False
    kinks: tuple[float, ...] = ()
    base: Optional["WeightFunction"] = None
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.c >= 1.0:
            raise WeightError(f"submultiplicativity constant must be >= 1, got {self.c}")

    def __call__(self, x) -> np.ndarray:
        pts = as_points(x, self.dim)
        with np.errstate(over="ignore"):
            return self.fn(pts)

    def gradient(self, x) -> np.ndarray:
        if self.grad is None:
            raise WeightError(f"{self.family} weight has no derivative evaluators")
        return self.grad(as_points(x, self.dim))

    def hessian(self, x) -> np.ndarray:
        if self.hess is None:
            raise WeightError(f"{self.family} weight has no derivative evaluators")
        return self.hess(as_points(x, self.dim))

    def scalar(self, x) -> float:
        return float(self(x)[0])

    @property
    def radial(self) -> bool:
        return self.profile is not None

    def sup_ball(self, radius: float, samples: int = 2001) -> float:
        """sup_{|y| <= radius} g(y) by dense sampling (exact for increasing radial g)."""
        if self.profile is not None and self.increasing:
            return float(self.profile(np.array([radius]))[0])
        if self.dim == 1:
            pts = np.linspace(-radius, radius, samples)[:, None]
        else:
            dirs, _ = sphere_rule(self.dim, 12)
            rs = np.linspace(0.0, radius, 64)
            pts = (rs[:, None, None] * dirs[None]).reshape(-1, self.dim)
        return float(np.max(self(pts)))


def _norm(x: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x, axis=1)


def exp_beta(beta: float, dim: int = 1) -> WeightFunction:
    """g(x) = exp(beta |x|), c = 1."""
    if beta < 0:
        raise WeightError("beta must be non-negative")
    prof = lambda r: np.exp(beta * np.asarray(r, dtype=float))
    return WeightFunction(
        fn=lambda x: np.exp(beta * _norm(x)), c=1.0, dim=dim, family="exp_beta",
        params={"beta": beta}, profile=prof, increasing=True, kinks=(0.0,),
    )


def poly_p(p: float, dim: int = 1) -> WeightFunction:
    """g(x) = (1 + |x|)^p, c = 1 for p >= 0."""
    if p < 0:
        raise WeightError("p must be non-negative")
    prof = lambda r: (1.0 + np.asarray(r, dtype=float)) ** p
    return WeightFunction(
        fn=lambda x: (1.0 + _norm(x)) ** p, c=1.0, dim=dim, family="poly_p",
        params={"p": p}, profile=prof, increasing=True, kinks=(0.0,),
    )


def exp_linear(beta) -> WeightFunction:
    """g(x) = 1 + exp(beta . x): the shifted exponential martingale weight, c = 1."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    d = beta.size

    def fn(x):
        return 1.0 + np.exp(x @ beta)

    def grad(x):
        return np.exp(x @ beta)[:, None] * beta[None, :]

    def hess(x):
        return np.exp(x @ beta)[:, None, None] * np.outer(beta, beta)[None]

    return WeightFunction(
        fn=fn, c=1.0, dim=d, family="exp_linear", params={"beta": beta.tolist()},
        smooth=True, grad=grad, hess=hess,
    )


def custom(fn: ArrayFn, c: float, dim: int = 1, box: float = 20.0, samples: int = 4096, seed: int = 0) -> WeightFunction:
    """Wrap a user function; shifted to 1 + g when a sampled value falls below 1."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-box, box, size=(samples, dim))
    vals = np.asarray(fn(pts), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise WeightError("weight is not finite on the sampled box")
    if np.any(vals < 0):
        raise WeightError("weight must be non-negative")
    if np.min(vals) < 1.0:
        return WeightFunction(fn=lambda x: 1.0 + fn(x), c=c, dim=dim, family="custom", params={"shifted": True})
    return WeightFunction(fn=fn, c=c, dim=dim, family="custom", params={"shifted": False})


def cap(g: WeightFunction, n: float) -> WeightFunction:
    """min{g, n}; keeps the constant c of g."""
    if n < 1.0:
        raise WeightError(f"cap level must be >= 1 to keep g >= 1, got {n}")
    prof = None
    kinks = g.kinks
    if g.profile is not None:
        base_prof = g.profile
        prof = lambda r: np.minimum(base_prof(r), n)
        if g.increasing and g.family == "exp_beta" and g.params["beta"] > 0:
            kinks = kinks + (math.log(n) / g.params["beta"],)
        elif g.increasing and g.family == "poly_p" and g.params["p"] > 0:
            kinks = kinks + (n ** (1.0 / g.params["p"]) - 1.0,)
    return WeightFunction(
        fn=lambda x: np.minimum(g.fn(x), n), c=g.c, dim=g.dim, family="bounded_cap",
        params={"n": n, "of": g.family}, profile=prof, increasing=g.increasing,
        kinks=kinks, base=g,
    )


@dataclass(frozen=True)
class SubmultCheck:
    ok: bool
    c_est: float
    violation: Optional[tuple[np.ndarray, np.ndarray]] = None


def check_submultiplicative(
    g, samples: int = 10_000, box: float = 20.0, c_max: Optional[float] = None,
    dim: int = 1, seed: int = 0,
) -> SubmultCheck:
    """Estimate sup g(x+y) / (g(x) g(y)) over random pairs in [-box, box]^d.

    Half the pairs are drawn on the diagonal x = y, where exponential-type
    violations show up first.  With ``c_max`` the first pair exceeding it is
    reported as a violation.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-box, box, size=(samples, dim))
    y = rng.uniform(-box, box, size=(samples, dim))
    y[::2] = x[::2]
    gfun = g if not isinstance(g, WeightFunction) else g
    with np.errstate(over="ignore", invalid="ignore"):
        gx = np.asarray(gfun(x), dtype=float)
        gy = np.asarray(gfun(y), dtype=float)
        if not (np.all(np.isfinite(gx)) and np.all(np.isfinite(gy))):
            raise WeightError("weight is not finite on the sampling box")
        gxy = np.asarray(gfun(x + y), dtype=float)
        ratio = gxy / (gx * gy)
    ratio = np.where(np.isnan(ratio), np.inf, ratio)
    c_est = float(np.max(ratio))
    if c_max is not None:
        bad = np.flatnonzero(ratio > c_max)
        if bad.size:
            i = bad[0]
            return SubmultCheck(False, c_est, (x[i], y[i]))
    return SubmultCheck(True, c_est)


def growth_ceiling(g: WeightFunction, radii: np.ndarray) -> tuple[float, float]:
    """Fit (a, b) with g(x) <= a exp(b |x|) on points at the given radii."""
    radii = np.asarray(radii, dtype=float)
    if g.dim == 1:
        pts = np.concatenate([radii, -radii])[:, None]
    else:
        e = np.zeros((radii.size, g.dim))
        e[:, 0] = radii
        pts = np.concatenate([e, -e])
    r = _norm(pts)
    logs = np.log(g(pts))
    g0 = math.log(g.scalar(np.zeros(g.dim)))
    pos = r > 0
    b = max(float(np.max((logs[pos] - g0) / r[pos])), 0.0)
    a = float(np.max(np.exp(logs - b * r)))
    return a, b


# ---------------------------------------------------------------- mollifiers


def _bump(s: np.ndarray) -> np.ndarray:
    """exp(-1/(1-s)) for s = |x|^2 < 1, zero otherwise."""
    inside = s < 1.0
    out = np.zeros_like(s, dtype=float)
    out[inside] = np.exp(-1.0 / (1.0 - s[inside]))
    return out


@dataclass(frozen=True)
class Mollifier:
    """Rotationally symmetric C^inf bump of unit mass supported in the closed ε-ball."""

    epsilon: float
    dim: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise WeightError("epsilon must be positive")

    @property
    def norm_const(self) -> float:
        return _bump_normalizer(self.dim)

    def _scaled(self, y):
        y = as_points(y, self.dim)
        u = y / self.epsilon
        return y, u, np.sum(u * u, axis=1)

    def __call__(self, y) -> np.ndarray:
        _, _, s = self._scaled(y)
        return self.norm_const * self.epsilon ** (-self.dim) * _bump(s)

    def grad(self, y) -> np.ndarray:
        y, u, s = self._scaled(y)
        inside = s < 1.0
        phi = _bump(s)
        dphi = np.zeros_like(s)
        dphi[inside] = -phi[inside] / (1.0 - s[inside]) ** 2
        scale = self.norm_const * self.epsilon ** (-self.dim)
        return scale * dphi[:, None] * 2.0 * u / self.epsilon

    def hess(self, y) -> np.ndarray:
        y, u, s = self._scaled(y)
        inside = s < 1.0
        phi = _bump(s)
        dphi = np.zeros_like(s)
        ddphi = np.zeros_like(s)
        om = 1.0 - s[inside]
        dphi[inside] = -phi[inside] / om**2
        ddphi[inside] = phi[inside] * (1.0 / om**4 - 2.0 / om**3)
        scale = self.norm_const * self.epsilon ** (-self.dim)
        eye = np.eye(self.dim)[None]
        outer = np.einsum("ki,kj->kij", u, u)
        return scale * (ddphi[:, None, None] * 4.0 * outer + dphi[:, None, None] * 2.0 * eye) / self.epsilon**2

    def ball_rule(self, n: int = 64) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes/weights on the ε-ball (product rule in polar form for d > 1)."""
        if self.dim == 1:
            y, w = mapped_rule(-self.epsilon, self.epsilon, n)
            return y[:, None], w
        r, wr = mapped_rule(0.0, self.epsilon, n)
        dirs, wd = sphere_rule(self.dim, max(8, n // 4))
        pts = (r[:, None, None] * dirs[None]).reshape(-1, self.dim)
        w = (wr[:, None] * r[:, None] ** (self.dim - 1) * wd[None]).ravel()
        return pts, w

    def mass(self, n: int = 256) -> float:
        y, w = self.ball_rule(n)
        return float(w @ self(y))

    def derivative_l1(self, n: int = 256) -> tuple[np.ndarray, np.ndarray]:
        """∫|∂_i j_ε| and ∫|∂_i∂_k j_ε| by quadrature."""
        y, w = self.ball_rule(n)
        g1 = np.abs(self.grad(y)).T @ w
        g2 = np.einsum("kij,k->ij", np.abs(self.hess(y)), w)
        return g1, g2


_NORMALIZERS: dict[int, float] = {}


def _bump_normalizer(d: int) -> float:
    if d not in _NORMALIZERS:
        area = 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)
        val, _ = integrate.quad(lambda r: math.exp(-1.0 / (1.0 - r * r)) * r ** (d - 1), 0.0, 1.0, epsabs=0.0, epsrel=1e-12)
        _NORMALIZERS[d] = 1.0 / (area * val)
    return _NORMALIZERS[d]


CHUNK = 4096
SMOOTH_NODES = 96
TABLE_POINTS = 1025


class _Convolver:
    """Evaluates (kernel * g)(x) with breakpoints at the kinks of a radial g (d = 1)."""

    def __init__(self, g: WeightFunction, m: Mollifier, n: int = 64, rtol: float = 1e-12, max_panels: int = 64):
        self.g, self.m, self.n, self.rtol, self.max_panels = g, m, n, rtol, max_panels
        self._tables: dict = {}
        self._lock = threading.Lock()
        self._outer = _outer_closed_form(g, m)

    def _rule_1d(self, x: np.ndarray, panels: int):
        eps = self.m.epsilon
        cuts = [np.full_like(x, -eps), np.full_like(x, eps)]
        for k in self.g.kinks:
            for s in (x - k, x + k) if k > 0 else (x,):
                cuts.append(np.clip(s, -eps, eps))
        edges = np.sort(np.stack(cuts, axis=1), axis=1)
        pieces = []
        for j in range(edges.shape[1] - 1):
            a, b = edges[:, j], edges[:, j + 1]
            h = (b - a) / panels
            for p in range(panels):
                pieces.append(mapped_rule(a + p * h, a + (p + 1) * h, self.n))
        y = np.concatenate([pc[0] for pc in pieces], axis=1)
        w = np.concatenate([pc[1] for pc in pieces], axis=1)
        return y, w

    def apply(self, x: np.ndarray, kernel: Callable[[np.ndarray], np.ndarray], key: Optional[str] = None) -> np.ndarray:
        """∫ g(x - y) kernel(y) dy for every row of x; kernel returns (k, ...) arrays.

        With a ``key`` (d = 1), points within ε of a kink of g are served from
        spline tables built once from the refined rule.
        """
        if x.shape[0] > CHUNK:
            return np.concatenate([self.apply(x[i:i + CHUNK], kernel, key) for i in range(0, x.shape[0], CHUNK)])
        d = self.g.dim
        if d == 1:
            xs = x[:, 0]
            near = np.zeros(xs.shape, dtype=bool)
            for k in self.g.kinks:
                near |= (np.abs(np.abs(xs) - k) < self.m.epsilon)
            probe = kernel(np.zeros((1, 1)))
            out = np.empty((xs.size,) + probe.shape[1:])
            if np.any(~near):
                if self._outer is not None and key is not None:
                    out[~near] = self._outer(xs[~near], key).reshape((-1,) + probe.shape[1:])
                else:
                    out[~near] = self._smooth(xs[~near], kernel)
            if np.any(near):
                out[near] = self._refined(xs[near], kernel) if key is None else self._tabled(xs[near], kernel, key)
            return out
        y, w = self.m.ball_rule(self.n)
        gv = self.g.fn((x[:, None, :] - y[None]).reshape(-1, d)).reshape(x.shape[0], -1)
        kv = kernel(y)
        return np.einsum("kn,n...->k...", gv * w[None], kv)

    def _smooth(self, xs, kernel):
        # y -> g(x - y) is smooth on the ε-ball: one high-order panel suffices
        y, w = mapped_rule(-self.m.epsilon, self.m.epsilon, SMOOTH_NODES)
        kv = kernel(y[:, None])
        gv = self.g.fn((xs[:, None] - y[None, :]).reshape(-1, 1)).reshape(xs.size, y.size)
        return np.einsum("kn,n...->k...", gv * w[None], kv)

    def _windows(self):
        eps = self.m.epsilon
        centers = sorted({c for k in self.g.kinks for c in ((0.0,) if k == 0 else (k, -k))})
        return [(c - eps, c + eps) for c in centers]

    def _tabled(self, xs, kernel, key):
        with self._lock:
            if key not in self._tables:
                tabs = []
                for lo, hi in self._windows():
                    grid = np.linspace(lo, hi, TABLE_POINTS)
                    vals = self._refined(grid, kernel)
                    tabs.append((lo, hi, CubicSpline(grid, vals, axis=0)))
                self._tables[key] = tabs
        tabs = self._tables[key]
        out = None
        done = np.zeros(xs.shape, dtype=bool)
        for lo, hi, sp in tabs:
            sel = (xs >= lo) & (xs <= hi) & ~done
            if np.any(sel):
                v = sp(xs[sel])
                if out is None:
                    out = np.empty((xs.size,) + v.shape[1:])
                out[sel] = v
                done |= sel
        if not np.all(done):
            v = self._refined(xs[~done], kernel)
            if out is None:
                out = np.empty((xs.size,) + v.shape[1:])
            out[~done] = v
        return out

    def _refined(self, xs, kernel):
        prev = None
        panels = 1
        while True:
            y, w = self._rule_1d(xs, panels)
            gv = self.g.fn((xs[:, None] - y).reshape(-1, 1)).reshape(y.shape)
            kv = kernel(y.reshape(-1, 1))
            kv = kv.reshape(y.shape + kv.shape[1:])
            val = np.einsum("kn,kn...->k...", w * gv, kv)
            if prev is not None:
                scale = np.abs(val) + np.abs(prev)
                if np.all(np.abs(val - prev) <= self.rtol * np.maximum(scale, 1e-300)) or panels >= self.max_panels:
                    return val
            prev = val
            panels *= 2


def _outer_closed_form(g: WeightFunction, m: Mollifier):
    """Exact j_ε * g for |x| >= ε when g has its only kink at 0 (d = 1).

    There |x - y| = |x| - sign(x) y on the ε-ball, so e^{β|x|} picks up the
    factor ∫ j_ε cosh(βy) and (1+|x|)^p (integer p) expands into even
    moments of j_ε.
    """
    if g.dim != 1 or g.kinks != (0.0,):
        return None
    y, w = m.ball_rule(256)
    y = y[:, 0]
    jw = m(y[:, None]) * w
    if g.family == "exp_beta":
        beta = g.params["beta"]
        M = float(jw @ np.cosh(beta * y))

        def outer(xs, key):
            e = M * np.exp(beta * np.abs(xs))
            if key == "fn":
                return e
            if key == "grad":
                return beta * np.sign(xs) * e
            return beta * beta * e

        return outer
    if g.family == "poly_p" and float(g.params["p"]).is_integer():
        p = int(g.params["p"])
        coef = [math.comb(p, k) * float(jw @ y**k) if k % 2 == 0 else 0.0 for k in range(p + 1)]

        def outer(xs, key):
            r1 = 1.0 + np.abs(xs)
            if key == "fn":
                return sum(c * r1 ** (p - k) for k, c in enumerate(coef))
            if key == "grad":
                return np.sign(xs) * sum(c * (p - k) * r1 ** (p - k - 1) for k, c in enumerate(coef) if k < p)
            return sum(c * (p - k) * (p - k - 1) * r1 ** (p - k - 2) for k, c in enumerate(coef) if k < p - 1) + 0.0 * xs

        return outer
    return None


def mollify(g: WeightFunction, m: Mollifier, n: int = 64) -> WeightFunction:
    """Friedrichs regularization g^ε = j_ε * g, with derivative evaluators.

    The returned weight stores ``c_eps`` = c · sup_{|y|<=ε} g(y), the constant
    of the two-sided bound g/c_eps <= g^ε <= c_eps g, and the derivative
    constants c_{α,ε} = c_eps · ∫|∂^α j_ε| under ``extra``.
    """
    if m.dim != g.dim:
        raise WeightError("mollifier and weight live in different dimensions")
    conv = _Convolver(g, m, n=n)
    sup_eps = g.sup_ball(m.epsilon)
    c_eps = g.c * sup_eps
    l1_grad, l1_hess = m.derivative_l1()
    extra = {
        "epsilon": m.epsilon,
        "c_eps": c_eps,
        "sup_eps": sup_eps,
        "c_grad": c_eps * l1_grad,
        "c_hess": c_eps * l1_hess,
        "mollifier": m,
    }

    def fn(x):
        return conv.apply(x, lambda y: m(y), "fn")

    def grad(x):
        return conv.apply(x, lambda y: m.grad(y), "grad")

    def hess(x):
        return conv.apply(x, lambda y: m.hess(y), "hess")

    prof = None
    if g.profile is not None and g.dim == 1:
        prof = lambda r: fn(np.asarray(r, dtype=float).reshape(-1, 1))
    return WeightFunction(
        fn=fn, c=c_eps**3 * g.c, dim=g.dim, family="mollified",
        params={"epsilon": m.epsilon, "of": g.family, **dict(g.params)},
        smooth=True, grad=grad, hess=hess, profile=prof, increasing=g.increasing,
        base=g, extra=extra,
    )
