"""Gauss-Legendre machinery shared by every integral against a Lévy measure.

Radial integrals are computed in the logarithmic variable ``s = log r`` over
dyadic shells.  Inner (r -> 0) and outer (r -> inf) tails are swept shell by
shell; a sweep stops when the shell contributions become negligible, when
they decay geometrically (the remaining tail is then summed in closed form),
or it reports divergence when partial sums blow past ``DIVERGENCE_LIMIT``
times the first shell or stop decaying.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

DIVERGENCE_LIMIT = 1e12
MAX_SHELLS = 1000
MAX_DEPTH = 40
MAX_PANELS = 4000
_NO_DECAY_RUN = 8
_LOG2 = math.log(2.0)


class QuadratureError(RuntimeError):
    """Raised when adaptive refinement fails to reach the requested tolerance."""


class NonFiniteIntegrand(QuadratureError):
    """The integrand returned inf or nan at a quadrature node."""


@lru_cache(maxsize=64)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the ``n``-point rule on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def mapped_rule(a, b, n: int):
    """GL rule mapped to [a, b]; ``a`` and ``b`` may be arrays (broadcast)."""
    x, w = gauss_legendre(n)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


@lru_cache(maxsize=16)
def sphere_rule(d: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit directions and weights integrating over the sphere S^{d-1}.

    Weights sum to the surface area.  d=1 gives the two points {-1, +1}.
    """
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if d == 2:
        m = 4 * n
        phi = 2.0 * np.pi * (np.arange(m) + 0.5) / m
        dirs = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        return dirs, np.full(m, 2.0 * np.pi / m)
    if d == 3:
        ct, wt = gauss_legendre(n)
        m = 2 * n
        phi = 2.0 * np.pi * (np.arange(m) + 0.5) / m
        st = np.sqrt(1.0 - ct**2)
        dirs = np.stack(
            [np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)), np.outer(ct, np.ones(m))],
            axis=-1,
        ).reshape(-1, 3)
        weights = np.outer(wt, np.full(m, 2.0 * np.pi / m)).ravel()
        return dirs, weights
    raise ValueError(f"angular rules are provided for d <= 3, got d={d}")


def ball_volume(d: int, r: float) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * r**d


def _as_2d(values: np.ndarray, k: int) -> np.ndarray:
    values = np.asarray(values)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != k:
        raise ValueError("integrand returned wrong leading dimension")
    return values


def adaptive_gl(
    F: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    n: int = 16,
    rtol: float = 1e-10,
    atol=1e-300,
) -> tuple[np.ndarray, bool]:
    """Adaptive Gauss-Legendre on [a, b] comparing n- and 2n-point rules.

    ``F`` maps a 1-D node array of length k to an array of shape (k,) or
    (k, m).  ``atol`` may be a length-m array (per-component floors, scaled
    by the panel's share of [a, b]).  Returns the integral as a length-m
    array and a flag telling whether every accepted panel met the tolerance.
    """
    atol = np.asarray(atol, dtype=float)
    total = None
    ok = True
    stack = [(a, b, 0)]
    panels = 0
    while stack:
        lo, hi, depth = stack.pop()
        panels += 1
        if panels > MAX_PANELS:
            raise QuadratureError(f"adaptive refinement budget exhausted on [{a:.6g}, {b:.6g}]")
        if hi <= lo:
            continue
        x1, w1 = mapped_rule(lo, hi, n)
        x2, w2 = mapped_rule(lo, hi, 2 * n)
        nodes = np.concatenate([x1, x2])
        vals = _as_2d(F(nodes), nodes.size)
        if not np.all(np.isfinite(vals)):
            raise NonFiniteIntegrand(f"integrand not finite on [{lo:.6g}, {hi:.6g}]")
        i1 = w1 @ vals[:n]
        i2 = w2 @ vals[n:]
        err = np.abs(i2 - i1)
        share = (hi - lo) / (b - a)
        if np.all(err <= np.maximum(atol * share, rtol * np.abs(i2))):
            total = i2 if total is None else total + i2
        elif depth >= MAX_DEPTH:
            ok = False
            total = i2 if total is None else total + i2
        else:
            mid = 0.5 * (lo + hi)
            stack.append((mid, hi, depth + 1))
            stack.append((lo, mid, depth + 1))
    if total is None:
        total = np.zeros(1)
    return total, ok


@dataclass(frozen=True)
class RadialResult:
    value: np.ndarray
    divergent: bool
    converged: bool = True


def _log_integral(G, r_a: float, r_b: float, n: int, rtol: float, atol):
    """∫_{r_a}^{r_b} G(r) dr with the substitution r = e^s, split in dyadic shells."""
    if r_b <= r_a:
        return None, True
    sa, sb = math.log(r_a), math.log(r_b)
    pieces = max(1, math.ceil((sb - sa) / _LOG2 - 1e-9))
    edges = np.linspace(sa, sb, pieces + 1)

    def H(s):
        r = np.exp(s)
        v = _as_2d(G(r), s.size)
        return v * r[:, None]

    total, ok = None, True
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, good = adaptive_gl(H, lo, hi, n=n, rtol=rtol, atol=atol)
        ok &= good
        total = v if total is None else total + v
    return total, ok


def _tail_sweep(G, anchor: float, direction: int, hint: float, n: int, rtol: float, atol):
    """Sweep dyadic shells from ``anchor`` outward (direction=+1) or inward (-1)."""
    total = None
    mags: list[float] = []
    qs: list[float] = []
    no_decay = 0
    r = anchor
    prev_shell = None
    scale = None
    for _ in range(MAX_SHELLS):
        if direction > 0:
            lo, hi = r, 2.0 * r
            passed_hint = lo >= hint
        else:
            lo, hi = 0.5 * r, r
            passed_hint = hi <= hint
        try:
            shell, _ = _log_integral(G, lo, hi, n, rtol, atol)
        except NonFiniteIntegrand:
            # integrand overflowed inside the shell: growth without bound
            return RadialResult(total if total is not None else np.zeros(1), True)
        total = shell if total is None else total + shell
        big = float(np.max(np.abs(total)))
        if scale is None:
            # divergence is judged relative to the first shell, so that large but
            # finite integrands (heavy weights far out) are not mistaken for it
            scale = max(1.0, float(np.max(np.abs(shell))))
        if not np.isfinite(big) or big > DIVERGENCE_LIMIT * scale:
            return RadialResult(total, True)
        m = float(np.max(np.abs(shell)))
        mags.append(m)
        r = hi if direction > 0 else lo
        if len(mags) >= 2 and passed_hint:
            if m == 0.0 and mags[-2] == 0.0:
                return RadialResult(total, False)
            if mags[-2] > 0:
                q = m / mags[-2]
                qs.append(q)
                if q >= 1.0 - 1e-9:
                    no_decay += 1
                    if no_decay >= _NO_DECAY_RUN:
                        return RadialResult(total, True)
                else:
                    no_decay = 0
                if q < 1.0:
                    tail = m * q / (1.0 - q)
                    if tail <= rtol * big or (q < 0.5 and tail <= 1e-3 * rtol * max(big, 1.0)):
                        return RadialResult(total, False)
                    stable = len(qs) >= 3 and abs(qs[-1] - qs[-2]) <= 1e-9 and abs(qs[-2] - qs[-3]) <= 1e-9
                    if stable and prev_shell is not None:
                        with np.errstate(divide="ignore", invalid="ignore"):
                            qc = np.where(np.abs(prev_shell) > 0, shell / prev_shell, 0.0)
                        qc = np.where(np.abs(qc) < 1.0, qc, 0.0)
                        return RadialResult(total + shell * qc / (1.0 - qc), False)
        prev_shell = shell
    raise QuadratureError("tail sweep exhausted the shell budget without settling")


def radial_integral(
    G: Callable[[np.ndarray], np.ndarray],
    r_lo: float,
    r_hi: float,
    breaks: Sequence[float] = (1.0,),
    n: int = 16,
    rtol: float = 1e-10,
    atol=1e-300,
    hint_hi: float = 0.0,
    hint_lo: float = math.inf,
) -> RadialResult:
    """∫_{r_lo}^{r_hi} G(r) dr for r_lo >= 0 and r_hi <= inf.

    ``hint_hi`` forces the outer sweep to keep going at least to that radius
    (integrands supported far out, e.g. shifted bumps); ``hint_lo`` plays the
    same role for the inner sweep.
    """
    if r_hi <= r_lo:
        return RadialResult(np.zeros(1), False)
    finite_pts = [p for p in breaks if r_lo < p < r_hi and p > 0]
    if r_lo > 0:
        finite_pts.append(r_lo)
    if math.isfinite(r_hi):
        finite_pts.append(r_hi)
    if hint_hi > r_lo and hint_hi < r_hi:
        finite_pts.append(hint_hi)
    if not finite_pts:
        finite_pts = [min(1.0, r_hi)] if r_hi > 0 else []
    pts = sorted(set(finite_pts))
    total = None
    divergent = False
    ok = True

    if r_lo == 0.0:
        res = _tail_sweep(G, pts[0], -1, min(hint_lo, pts[0]), n, rtol, atol)
        total = res.value
        divergent |= res.divergent
    for a, b in zip(pts[:-1], pts[1:]):
        v, good = _log_integral(G, a, b, n, rtol, atol)
        ok &= good
        total = v if total is None else total + v
    if math.isinf(r_hi) and not divergent:
        res = _tail_sweep(G, pts[-1], +1, max(hint_hi, pts[-1]), n, rtol, atol)
        total = res.value if total is None else total + res.value
        divergent |= res.divergent
    if total is None:
        total = np.zeros(1)
    return RadialResult(total, divergent, ok)
