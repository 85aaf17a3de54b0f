"""Monte Carlo path ensembles of a Lévy process on a time grid.

The simulated process has the triplet returned by :func:`truncated_triplet`:
jumps of infinite-activity densities below ``delta`` are removed and either
dropped, compensated in the drift, or replaced by a moment-matched Gaussian.
What remains has a finite Lévy measure and is simulated exactly on the grid

    X_t = (b_s - ∫_{|y|<1} y ν_s(dy)) t + Q_s^{1/2} W_t + Σ_{τ_j <= t} ΔX_j .

W is generated by a dyadic Brownian bridge whose level-l normals depend only
on (seed, block, l), so halving Δt refines a path without changing its
values at the coarse nodes.  Jumps are compound Poisson in two bands
(|y| >= 1 and |y| < 1) with their own streams.  Paths are generated in
blocks of BLOCK and every random number is addressed by (seed, block, ...),
so the result does not depend on how many threads run the blocks.
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .measure import Atom, LevyMeasure, ParametricDensity, levy_integral
from .rng import stream
from .triplet import LevyTriplet
from .weights import WeightFunction, as_points

BLOCK = 2048
MAX_JUMPS_PER_STEP = 1e3
SMALL_JUMP_MODES = ("discard", "compensate_drift", "gaussian_approx")
GRID_TOL = 1e-9


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    T: float = 1.0
    dt: Optional[float] = None
    N: int = 10_000
    delta: float = 0.1
    mode: str = "gaussian_approx"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.dt is None:
            object.__setattr__(self, "dt", self.T / 1024)
        if not self.T > 0:
            raise SimulationError("horizon T must be positive")
        if not self.dt > 0:
            raise SimulationError("grid step dt must be positive")
        if not 0 < self.delta <= 1:
            raise SimulationError(f"small-jump cutoff must lie in (0, 1], got {self.delta}")
        if self.N < 1:
            raise SimulationError("need at least one path")
        if self.mode not in SMALL_JUMP_MODES:
            raise SimulationError(f"unknown small-jump mode {self.mode!r}")
        if not 0 <= self.seed < 2**64:
            raise SimulationError("seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise SimulationError("workers must be >= 1")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > GRID_TOL * steps:
            raise SimulationError(f"T/dt = {steps} is not an integer")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass(frozen=True)
class SimulatedTriplet:
    """The finite-activity triplet that is actually simulated."""

    triplet: LevyTriplet
    drift: np.ndarray  # b_s minus the compensator of ν_s on |y| < 1
    sigma_delta: np.ndarray  # ∫_{|y|<δ} y y^T ν(dy) over the removed part
    removed_mean: np.ndarray  # ∫_{δ<=|y|<1} y ν(dy) over the split densities
    mode: str
    delta: float


def _infinite_activity(dens: ParametricDensity) -> bool:
    return dens.radial and dens.support[0] == 0.0


def _outer(d: int):
    def f(y):
        return (y[:, :, None] * y[:, None, :]).reshape(len(y), d * d)

    return f


def truncated_triplet(triplet: LevyTriplet, delta: float, mode: str = "gaussian_approx") -> SimulatedTriplet:
    """Finite-activity approximation of ``triplet`` at small-jump cutoff ``delta``.

    * ``discard``: jumps below delta are dropped and those in [delta, 1) are
      summed raw, which shifts the drift by ∫_{δ<=|y|<1} y ν(dy).
    * ``compensate_drift``: jumps below delta are dropped, the compensator of
      the kept ones is kept, so b and Q are unchanged.
    * ``gaussian_approx``: as compensate_drift, plus a Brownian part with
      covariance ∫_{|y|<δ} y y^T ν(dy).
    """
    if mode not in SMALL_JUMP_MODES:
        raise SimulationError(f"unknown small-jump mode {mode!r}")
    d = triplet.dim
    nu = triplet.nu
    kept, removed, split = [], [], []
    for dens in nu.densities:
        if _infinite_activity(dens):
            hi = dens.restricted(delta, math.inf)
            lo = dens.restricted(0.0, delta)
            if hi is not None:
                kept.append(hi)
                split.append(hi)
            if lo is not None:
                removed.append(lo)
        else:
            kept.append(dens)
    sigma = np.zeros((d, d))
    if removed:
        res = levy_integral(LevyMeasure(d, (), tuple(removed)), _outer(d), "all")
        sigma = np.asarray(res.value, dtype=float).reshape(d, d)
    mid_mean = np.zeros(d)
    if split:
        res = levy_integral(LevyMeasure(d, (), tuple(split)), lambda y: y, "small_jumps")
        mid_mean = np.atleast_1d(np.asarray(res.value, dtype=float))
    b, Q = triplet.b.copy(), triplet.Q.copy()
    if mode == "discard":
        b = b + mid_mean
    elif mode == "gaussian_approx":
        Q = Q + 0.5 * (sigma + sigma.T)
    nu_s = LevyMeasure(d, nu.atoms, tuple(kept))
    sim = LevyTriplet(b, Q, nu_s)
    return SimulatedTriplet(sim, b - _small_jump_mean(nu_s), sigma, mid_mean, mode, delta)


def _small_jump_mean(nu: LevyMeasure) -> np.ndarray:
    pos, mass = nu.atom_arrays()
    out = np.zeros(nu.dim)
    if mass.size:
        small = np.linalg.norm(pos, axis=1) < 1.0
        out += mass[small] @ pos[small]
    if nu.densities:
        res = levy_integral(LevyMeasure(nu.dim, (), nu.densities), lambda y: y, "small_jumps")
        out += np.atleast_1d(np.asarray(res.value, dtype=float))
    return out


def _psd_root(Q: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(Q)
    return V * np.sqrt(np.clip(w, 0.0, None))


# ---------------------------------------------------------------- jump samplers


class _Component:
    """One piece of ν_s restricted to a band lo <= |y| < hi, with a sampler."""

    def __init__(self, mass: float):
        self.mass = mass

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError


class _AtomComponent(_Component):
    def __init__(self, pos: np.ndarray, mass: np.ndarray):
        super().__init__(float(mass.sum()))
        self.pos = pos
        self.p = mass / mass.sum()

    def sample(self, rng, n):
        return self.pos[rng.choice(len(self.p), size=n, p=self.p)]


def _directions(rng, n, d, dens):
    if d == 1:
        pos, neg = dens.params.get("pos", 1.0), dens.params.get("neg", 1.0)
        up = rng.random(n) < pos / (pos + neg)
        return np.where(up, 1.0, -1.0)[:, None]
    z = rng.standard_normal((n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


class _RadialComponent(_Component):
    """scale·r^{-1-α} (times e^{-λr}) on a <= r < b with a > 0."""

    def __init__(self, dens: ParametricDensity, d: int, mass: float):
        super().__init__(mass)
        self.dens, self.d = dens, d
        self.a, self.b = dens.support
        self.alpha = dens.params["alpha"]
        self.lam = dens.params.get("lam", 0.0) if dens.family == "tempered" else 0.0
        if self.a <= 0:
            raise SimulationError("radial sampler needs a positive inner radius")

    def _power(self, u):
        al, a, b = self.alpha, self.a, self.b
        top = a**-al
        bot = 0.0 if math.isinf(b) else b**-al
        return (top - u * (top - bot)) ** (-1.0 / al)

    def sample(self, rng, n):
        r = np.empty(n)
        filled = 0
        while filled < n:
            m = n - filled
            if self.lam == 0.0:
                r[filled:] = self._power(rng.random(m))
                filled = n
                break
            # exact rejection from the untempered law; acceptance e^{-λ(r-a)}
            k = max(2 * m, 64)
            cand = self._power(rng.random(k))
            ok = rng.random(k) < np.exp(-self.lam * (cand - self.a))
            take = cand[ok][:m]
            r[filled:filled + take.size] = take
            filled += take.size
        return r[:, None] * _directions(rng, n, self.d, self.dens)


class _GaussianComponent(_Component):
    def __init__(self, dens: ParametricDensity, d: int, mass: float):
        super().__init__(mass)
        p = dens.params
        self.mean = np.broadcast_to(np.asarray(p.get("mean", 0.0), dtype=float), (d,))
        self.sd, self.d = p["sd"], d
        self.lo, self.hi = dens.support
        self.accept = mass / p["rate"]
        if self.accept < 1e-6:
            raise SimulationError("gaussian jump band has acceptance below 1e-6")

    def sample(self, rng, n):
        out = np.empty((n, self.d))
        filled = 0
        while filled < n:
            k = max(int(1.2 * (n - filled) / self.accept) + 16, 64)
            y = self.mean + self.sd * rng.standard_normal((k, self.d))
            r = np.linalg.norm(y, axis=1)
            y = y[(r >= self.lo) & (r < self.hi) & (r > 0)][: n - filled]
            out[filled:filled + len(y)] = y
            filled += len(y)
        return out


class _TabulatedComponent(_Component):
    """Piecewise-linear density; sampled by exact inversion on each segment."""

    def __init__(self, dens: ParametricDensity):
        knots = np.asarray(dens.params["knots"], dtype=float)
        lo, hi = dens.support
        cuts = [c for s in (lo, hi) if math.isfinite(s) for c in (-s, s)]
        grid = np.unique(np.concatenate([knots, [c for c in cuts if knots[0] < c < knots[-1]]]))
        u, v = grid[:-1], grid[1:]
        mid = np.abs(0.5 * (u + v))
        inside = (mid >= lo) & (mid < hi)
        vals = dens.params["values"]
        fl = np.where(inside, np.interp(u, knots, vals), 0.0)
        fr = np.where(inside, np.interp(v, knots, vals), 0.0)
        seg = 0.5 * (fl + fr) * (v - u)
        super().__init__(float(seg.sum()))
        self.u, self.w, self.fl, self.fr = u, v - u, fl, fr
        self.p = seg / seg.sum() if seg.sum() > 0 else seg

    def sample(self, rng, n):
        k = rng.choice(len(self.p), size=n, p=self.p)
        U = rng.random(n)
        fl, fr = self.fl[k], self.fr[k]
        a = 0.5 * (fr - fl)
        c = -U * 0.5 * (fl + fr)
        disc = np.sqrt(np.maximum(fl * fl - 4 * a * c, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(fl + disc > 0, -2 * c / (fl + disc), U)
        return (self.u[k] + np.clip(s, 0.0, 1.0) * self.w[k])[:, None]


@dataclass
class _Band:
    name: str
    comps: list
    rate: float


def _band(nu: LevyMeasure, name: str, lo: float, hi: float) -> _Band:
    d = nu.dim
    part = nu.restricted(lo, hi)
    comps = []
    pos, mass = part.atom_arrays()
    if mass.size:
        comps.append(_AtomComponent(pos, mass))
    for dens in part.densities:
        single = LevyMeasure(d, (), (dens,))
        m = levy_integral(single, lambda y: np.ones(len(y)), "all")
        if not m.finite:
            raise SimulationError("a simulated jump band has infinite mass")
        if m.value <= 0:
            continue
        if dens.radial:
            comps.append(_RadialComponent(dens, d, float(m.value)))
        elif dens.family == "gaussian":
            comps.append(_GaussianComponent(dens, d, float(m.value)))
        else:
            comps.append(_TabulatedComponent(dens))
    return _Band(name, comps, float(sum(c.mass for c in comps)))


def _sample_band(band: _Band, rng, n_paths: int, T: float, d: int):
    counts = rng.poisson(band.rate * T, size=n_paths) if band.rate > 0 else np.zeros(n_paths, dtype=np.int64)
    total = int(counts.sum())
    paths = np.repeat(np.arange(n_paths), counts)
    times = rng.uniform(0.0, T, size=total)
    sizes = np.zeros((total, d))
    if total:
        p = np.array([c.mass for c in band.comps]) / band.rate
        which = rng.choice(len(p), size=total, p=p)
        for i, comp in enumerate(band.comps):
            sel = which == i
            if sel.any():
                sizes[sel] = comp.sample(rng, int(sel.sum()))
    return paths, times, sizes


# ---------------------------------------------------------------- ensembles


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Simulated paths on the grid ``times`` plus their jump records.

    ``states`` has shape (N, n+1, d).  Jumps are sorted by (path, time);
    ``jump_left`` holds X_{τ-}.  ``running_max`` is sup_{s<=t_k} |X_s| taken
    over grid nodes and both sides of every jump.
    """

    times: np.ndarray
    states: np.ndarray
    jump_path: np.ndarray
    jump_time: np.ndarray
    jump_size: np.ndarray
    jump_left: np.ndarray
    jump_step: np.ndarray
    running_max: np.ndarray
    config: SimConfig
    simulated: SimulatedTriplet
    source: LevyTriplet

    @property
    def N(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def index_of(self, t: float) -> int:
        k = int(round(t / self.dt))
        if k < 0 or k >= len(self.times) or abs(self.times[k] - t) > GRID_TOL * max(1.0, abs(t)):
            raise SimulationError(f"t={t} is not on the simulation grid")
        return k

    def state_at(self, t: float) -> np.ndarray:
        return self.states[:, self.index_of(t)]

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.times, self.states, self.jump_path, self.jump_time, self.jump_size, self.running_max):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def skeleton_blocks(self, size: int = BLOCK) -> Iterator["Skeleton"]:
        for start in range(0, self.N, size):
            yield self.skeleton(start, min(start + size, self.N))

    def skeleton(self, start: int, stop: int) -> "Skeleton":
        """Grid nodes merged with jump nodes for paths start..stop-1.

        A jump in (t_{k-1}, t_k] is placed just before grid node k, so the
        merge is done by computing positions instead of sorting.
        """
        n1 = len(self.times)
        P = stop - start
        j0, j1 = np.searchsorted(self.jump_path, [start, stop])
        jp = self.jump_path[j0:j1] - start
        counts = np.bincount(jp, minlength=P) + n1
        starts = np.concatenate([[0], np.cumsum(counts)])
        M = int(starts[-1])
        first = np.searchsorted(jp, jp, side="left")
        pos_j = starts[jp] + self.jump_step[j0:j1] + (np.arange(j1 - j0) - first)
        is_jump = np.zeros(M, dtype=bool)
        is_jump[pos_j] = True
        pos_g = np.flatnonzero(~is_jump)
        path = np.empty(M, dtype=np.int64)
        path[pos_g] = np.repeat(np.arange(P), n1)
        path[pos_j] = jp
        time = np.empty(M)
        time[pos_g] = np.tile(self.times, P)
        time[pos_j] = self.jump_time[j0:j1]
        grid = self.states[start:stop].reshape(P * n1, self.dim)
        left = np.empty((M, self.dim))
        right = np.empty((M, self.dim))
        left[pos_g] = grid
        right[pos_g] = grid
        left[pos_j] = self.jump_left[j0:j1]
        right[pos_j] = self.jump_left[j0:j1] + self.jump_size[j0:j1]
        return Skeleton(start, path, time, left, right, is_jump, starts)

    def dump(self, path) -> None:
        """Columnar text file: path id, time, state components, jump flag."""
        cfg = self.config
        cols = ["path", "time"] + [f"x{i}" for i in range(self.dim)] + ["jump"]
        with open(path, "w") as fh:
            fh.write(f"# seed={cfg.seed} T={cfg.T!r} dt={cfg.dt!r} N={cfg.N} delta={cfg.delta!r} mode={cfg.mode}\n")
            fh.write(f"# sha256={self.digest()}\n")
            fh.write(",".join(cols) + "\n")
            for sk in self.skeleton_blocks():
                rows = np.column_stack([sk.path + sk.offset, sk.time, sk.right, sk.is_jump.astype(float)])
                np.savetxt(fh, rows, delimiter=",", fmt=["%d", "%.17e"] + ["%.17e"] * self.dim + ["%d"])


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Jump-augmented path skeleton for a block of paths.

    Node j of path p has time ``time[j]``, value ``left[j]`` just before it
    and ``right[j]`` just after it; between consecutive nodes the path is
    continuous (Brownian, reconstructed linearly).
    """

    offset: int
    path: np.ndarray
    time: np.ndarray
    left: np.ndarray
    right: np.ndarray
    is_jump: np.ndarray
    starts: np.ndarray

    @property
    def P(self) -> int:
        return len(self.starts) - 1

    def segment_mask(self) -> np.ndarray:
        """True at node j when node j+1 belongs to the same path."""
        m = np.ones(len(self.time), dtype=bool)
        m[self.starts[1:] - 1] = False
        return m

    def value_at(self, t: np.ndarray) -> np.ndarray:
        """X_t for each path at its own time t[p] (right-continuous)."""
        t = np.broadcast_to(np.asarray(t, dtype=float), (self.P,))
        le = self.time <= t[self.path] + 1e-15
        last = self.starts[:-1] + np.add.reduceat(le.astype(np.int64), self.starts[:-1]) - 1
        out = self.right[last].copy()
        nxt = np.minimum(last + 1, len(self.time) - 1)
        inner = (last + 1 < self.starts[1:]) & (self.time[last] < t)
        if inner.any():
            j, k = last[inner], nxt[inner]
            w = (t[inner] - self.time[j]) / (self.time[k] - self.time[j])
            out[inner] = self.right[j] + w[:, None] * (self.left[k] - self.right[j])
        return out


def _bridge(rng_for_level, P: int, L: int, T: float, d: int) -> np.ndarray:
    n = 2**L
    W = np.zeros((P, n + 1, d))
    W[:, n] = math.sqrt(T) * rng_for_level(0).standard_normal((P, d))
    dt = T / n
    for level in range(1, L + 1):
        step = n >> level
        mids = np.arange(step, n, 2 * step)
        z = rng_for_level(level).standard_normal((P, len(mids), d))
        W[:, mids] = 0.5 * (W[:, mids - step] + W[:, mids + step]) + math.sqrt(step * dt / 2) * z
    return W


def _brownian(seed, block, P, n, T, d):
    L = int(round(math.log2(n))) if n > 0 else 0
    if 2**L == n:
        return _bridge(lambda lv: stream(seed, block, "bridge", lv), P, L, T, d)
    z = stream(seed, block, "increments").standard_normal((P, n, d)) * math.sqrt(T / n)
    W = np.zeros((P, n + 1, d))
    np.cumsum(z, axis=1, out=W[:, 1:])
    return W


def _simulate_block(block, start, stop, cfg, sim, bands, root, times):
    P = stop - start
    d = sim.triplet.dim
    n = cfg.steps
    W = _brownian(cfg.seed, block, P, n, cfg.T, d)
    C = times[None, :, None] * sim.drift[None, None, :] + W @ root.T
    jp, jt, js = [], [], []
    for band in bands:
        p, t, s = _sample_band(band, stream(cfg.seed, block, "jumps", band.name), P, cfg.T, d)
        jp.append(p)
        jt.append(t)
        js.append(s)
    jp, jt, js = np.concatenate(jp), np.concatenate(jt), np.concatenate(js)
    order = np.lexsort((jt, jp))
    jp, jt, js = jp[order], jt[order], js[order]
    # grid index of the first node at or after each jump
    idx = np.minimum(np.ceil(jt / cfg.dt - 1e-12).astype(np.int64), n)
    idx = np.maximum(idx, 1)
    inc = np.zeros((P, n + 1, d))
    np.add.at(inc, (jp, idx), js)
    Jcum = np.cumsum(inc, axis=1)
    X = C + Jcum
    # left limits: continuous part interpolated, plus jumps strictly before
    w = (jt - times[idx - 1]) / cfg.dt
    c_tau = (1 - w)[:, None] * C[jp, idx - 1] + w[:, None] * C[jp, idx]
    csum = np.cumsum(js, axis=0)
    first = np.searchsorted(jp, jp, side="left")
    base = np.where(first[:, None] > 0, csum[np.maximum(first - 1, 0)], 0.0)
    before = csum - js - base
    left = c_tau + before
    rmax = np.linalg.norm(X, axis=2)
    if len(jp):
        jm = np.maximum(np.linalg.norm(left, axis=1), np.linalg.norm(left + js, axis=1))
        np.maximum.at(rmax, (jp, idx), jm)
    np.maximum.accumulate(rmax, axis=1, out=rmax)
    return X, jp + start, jt, js, left, idx, rmax


def sample_paths(triplet: LevyTriplet, cfg: SimConfig) -> PathEnsemble:
    """Simulate ``cfg.N`` paths of the process with ``triplet`` on [0, T]."""
    sim = truncated_triplet(triplet, cfg.delta, cfg.mode)
    nu_s = sim.triplet.nu
    bands = [_band(nu_s, "large", 1.0, math.inf), _band(nu_s, "mid", 0.0, 1.0)]
    rate = sum(b.rate for b in bands)
    if rate * cfg.dt > MAX_JUMPS_PER_STEP:
        raise SimulationError(
            f"expected {rate * cfg.dt:.3g} jumps per grid step exceeds {MAX_JUMPS_PER_STEP:g}; "
            "raise the small-jump cutoff delta or shrink dt"
        )
    n = cfg.steps
    times = np.arange(n + 1) * cfg.dt
    times[-1] = cfg.T
    root = _psd_root(sim.triplet.Q)
    starts = list(range(0, cfg.N, BLOCK))
    jobs = [(i, s, min(s + BLOCK, cfg.N)) for i, s in enumerate(starts)]

    def run(job):
        return _simulate_block(*job, cfg, sim, bands, root, times)

    if cfg.workers == 1 or len(jobs) == 1:
        parts = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(run, jobs))
    states = np.concatenate([p[0] for p in parts])
    return PathEnsemble(
        times=times,
        states=states,
        jump_path=np.concatenate([p[1] for p in parts]),
        jump_time=np.concatenate([p[2] for p in parts]),
        jump_size=np.concatenate([p[3] for p in parts]),
        jump_left=np.concatenate([p[4] for p in parts]),
        jump_step=np.concatenate([p[5] for p in parts]),
        running_max=np.concatenate([p[6] for p in parts]),
        config=cfg,
        simulated=sim,
        source=triplet,
    )


# ---------------------------------------------------------------- stopping


STOPPING_KINDS = ("deterministic", "exit_ball", "level_g", "capped_composition")


@dataclass(frozen=True, eq=False)
class StoppingRule:
    kind: str
    cap: float
    radius: float = math.inf
    threshold: float = math.inf
    g: Optional[WeightFunction] = None
    rules: tuple = ()

    def __post_init__(self):
        if self.kind not in STOPPING_KINDS:
            raise SimulationError(f"unknown stopping rule {self.kind!r}")
        if not self.cap >= 0:
            raise SimulationError("stopping cap must be non-negative")
        if self.kind == "exit_ball" and not self.radius > 0:
            raise SimulationError("exit radius must be positive")
        if self.kind == "level_g" and self.g is None:
            raise SimulationError("level_g needs a weight")

    @classmethod
    def deterministic(cls, t: float) -> "StoppingRule":
        return cls("deterministic", t)

    @classmethod
    def exit_ball(cls, R: float, cap: float) -> "StoppingRule":
        return cls("exit_ball", cap, radius=R)

    @classmethod
    def level_g(cls, threshold: float, g: WeightFunction, cap: float) -> "StoppingRule":
        return cls("level_g", cap, threshold=threshold, g=g)

    @classmethod
    def compose(cls, rules: Sequence["StoppingRule"], cap: float) -> "StoppingRule":
        return cls("capped_composition", cap, rules=tuple(rules))

    @property
    def label(self) -> str:
        if self.kind == "deterministic":
            return f"t={self.cap:g}"
        if self.kind == "exit_ball":
            return f"exit|x|>={self.radius:g}^{self.cap:g}"
        if self.kind == "level_g":
            return f"g>{self.threshold:g}^{self.cap:g}"
        return "min(" + ",".join(r.label for r in self.rules) + f")^{self.cap:g}"


@dataclass(frozen=True)
class StoppedPaths:
    times: np.ndarray  # σ ∧ cap per path
    states: np.ndarray  # X at that time
    hit: np.ndarray  # σ < cap or the event occurred exactly at the cap


def _first_event(node_ev, seg_ev, path, P):
    """Per path, the first node (code 2j) or segment (code 2j+1) flagged;
    int64 max where nothing is flagged."""
    none = np.iinfo(np.int64).max
    out = np.full(P, none, dtype=np.int64)
    j = np.flatnonzero(node_ev | seg_ev)
    if j.size:
        p, first = np.unique(path[j], return_index=True)
        jj = j[first]
        out[p] = np.where(node_ev[jj], 2 * jj, 2 * jj + 1)
    return out


def _exit_ball_block(ens, sk, R, cap, ukey, block):
    if sk.left.shape[1] == 1:
        rl, rr = np.abs(sk.left[:, 0]), np.abs(sk.right[:, 0])
    else:
        rl, rr = np.linalg.norm(sk.left, axis=1), np.linalg.norm(sk.right, axis=1)
    M = len(sk.time)
    seg = sk.segment_mask()
    nxt = np.minimum(np.arange(1, M + 1), M - 1)
    node_ev = sk.is_jump & (rr >= R) & (sk.time <= cap)
    rb = rl[nxt]
    cross = seg & (rb >= R) & (rr < R)
    t_event = np.full(M, np.inf)
    ci = np.flatnonzero(cross)
    a, b = sk.right[ci], sk.left[ci + 1]
    v = b - a
    if sk.left.shape[1] == 1:
        # first crossing of the sphere on the straight segment a -> b
        s = (np.copysign(R, b[:, 0]) - a[:, 0]) / v[:, 0]
    else:
        A = np.sum(v * v, axis=1)
        Bq = 2 * np.sum(a * v, axis=1)
        s = (-Bq + np.sqrt(np.maximum(Bq * Bq - 4 * A * (rr[ci] ** 2 - R**2), 0.0))) / (2 * A)
    s = np.clip(s, 0.0, 1.0)
    t_event[ci] = sk.time[ci] + s * (sk.time[ci + 1] - sk.time[ci])
    x_event_val = a + s[:, None] * v
    var = float(ens.simulated.triplet.Q[0, 0]) if ens.dim == 1 else 0.0
    bi = np.zeros(0, dtype=np.int64)
    up = np.zeros(0, dtype=bool)
    if ens.dim == 1 and var > 0:
        # Brownian-bridge excursion between two inside nodes
        # exp(-2 gap_a gap_b / (var h)) < e^-40 unless one gap is below sqrt(20 var h)
        near = np.flatnonzero(np.maximum(rr, rb) > R - math.sqrt(20 * var * ens.dt))
        near = near[seg[near] & (rr[near] < R) & (rb[near] < R)]
        hh = sk.time[near + 1] - sk.time[near]
        keep = 2 * (R - rr[near]) * (R - rb[near]) / (var * hh) < 40.0
        cand, hh = near[keep], hh[keep]
        x0, x1 = sk.right[cand, 0], sk.left[cand + 1, 0]
        p_up = np.exp(-2 * (R - x0) * (R - x1) / (var * hh))
        p_dn = np.exp(-2 * (R + x0) * (R + x1) / (var * hh))
        U = stream(ens.config.seed, "stopping", ukey, block).random(len(cand))
        hitb = U < np.minimum(p_up + p_dn, 1.0)
        bi = cand[hitb]
        up = U[hitb] < p_up[hitb]
        t_event[bi] = sk.time[bi] + 0.5 * hh[hitb]
    seg_ev = np.isfinite(t_event) & (t_event <= cap)
    first = _first_event(node_ev, seg_ev, sk.path, sk.P)
    times = np.full(sk.P, float(cap))
    states = sk.value_at(times)
    hit = first < np.iinfo(np.int64).max
    if hit.any():
        code = first[hit]
        j = code // 2
        on_seg = (code % 2) == 1
        times[hit] = np.where(on_seg, t_event[j], sk.time[j])
        xs = sk.right[j].copy()
        sj = j[on_seg]
        # cross and bridge segments are disjoint: a bridge needs the far end inside
        k = np.minimum(np.searchsorted(ci, sj), max(len(ci) - 1, 0))
        is_cross = (len(ci) > 0) & (ci[k] == sj) if len(ci) else np.zeros(len(sj), dtype=bool)
        vals = np.empty((len(sj), sk.right.shape[1]))
        vals[is_cross] = x_event_val[k[is_cross]]
        if len(bi):
            kb = np.minimum(np.searchsorted(bi, sj[~is_cross]), len(bi) - 1)
            vals[~is_cross] = np.where(up[kb], R, -R)[:, None]
        xs[on_seg] = vals
        states[hit] = xs
    return StoppedPaths(times, states, hit)


def _radial_level(g: WeightFunction, threshold: float) -> Optional[float]:
    """Radius where an increasing radial g crosses ``threshold``."""
    if g.profile is None or not g.increasing:
        return None
    if g.profile(np.array([0.0]))[0] > threshold:
        return 0.0
    lo, hi = 0.0, 1.0
    while g.profile(np.array([hi]))[0] <= threshold:
        lo, hi = hi, 2 * hi
        if hi > 1e300:
            return math.inf
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g.profile(np.array([mid]))[0] <= threshold:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return hi


def _level_block(ens, sk, g, thr, cap):
    gl = g(sk.left)
    gr = g(sk.right)
    seg = sk.segment_mask()
    nxt = np.minimum(np.arange(len(sk.time)) + 1, len(sk.time) - 1)
    node_ev = sk.is_jump & (gr > thr) & (sk.time <= cap)
    a, b = sk.right, sk.left[nxt]
    h = np.where(seg, sk.time[nxt] - sk.time, 0.0)
    cross = seg & (gl[nxt] > thr) & (gr <= thr)
    s_lo = np.zeros(len(sk.time))
    s_hi = np.ones(len(sk.time))
    idx = np.flatnonzero(cross)
    for _ in range(50):
        mid = 0.5 * (s_lo[idx] + s_hi[idx])
        above = g(a[idx] + mid[:, None] * (b[idx] - a[idx])) > thr
        s_hi[idx] = np.where(above, mid, s_hi[idx])
        s_lo[idx] = np.where(above, s_lo[idx], mid)
    t_cross = sk.time + s_hi * h
    seg_ev = cross & (t_cross <= cap)
    first = _first_event(node_ev, seg_ev, sk.path, sk.P)
    times = np.full(sk.P, float(cap))
    states = sk.value_at(times)
    hit = first < np.iinfo(np.int64).max
    if hit.any():
        j = first[hit] // 2
        on_seg = (first[hit] % 2) == 1
        times[hit] = np.where(on_seg, t_cross[j], sk.time[j])
        xs = sk.right[j].copy()
        xs[on_seg] = a[j[on_seg]] + s_hi[j[on_seg], None] * (b[j[on_seg]] - a[j[on_seg]])
        states[hit] = xs
    return StoppedPaths(times, states, hit)


def _evaluate_block(ens, sk, rule, block):
    cap = rule.cap
    if rule.kind == "deterministic":
        times = np.full(sk.P, float(cap))
        return StoppedPaths(times, sk.value_at(times), np.zeros(sk.P, dtype=bool))
    if rule.kind == "exit_ball":
        return _exit_ball_block(ens, sk, rule.radius, cap, rule.label, block)
    if rule.kind == "level_g":
        R = _radial_level(rule.g, rule.threshold)
        if R is not None:
            if R == 0.0:
                z = np.zeros(sk.P)
                return StoppedPaths(z, sk.value_at(z), np.ones(sk.P, dtype=bool))
            if math.isinf(R):
                return _evaluate_block(ens, sk, StoppingRule.deterministic(cap), block)
            # {g > thr} = {|x| > R}; the boundary sphere has probability zero
            return _exit_ball_block(ens, sk, R, cap, rule.label, block)
        return _level_block(ens, sk, rule.g, rule.threshold, cap)
    parts = [_evaluate_block(ens, sk, r, block) for r in rule.rules]
    parts.append(_evaluate_block(ens, sk, StoppingRule.deterministic(cap), block))
    T = np.stack([p.times for p in parts])
    k = np.argmin(T, axis=0)
    rows = np.arange(sk.P)
    states = np.stack([p.states for p in parts])[k, rows]
    hit = np.stack([p.hit for p in parts])[k, rows]
    return StoppedPaths(T[k, rows], states, hit)


def evaluate_stopping(ensemble: PathEnsemble, rule: StoppingRule) -> StoppedPaths:
    """Stopping times σ ∧ cap and stopped states for every path."""
    return evaluate_stopping_many(ensemble, [rule])[0]


def evaluate_stopping_many(ensemble: PathEnsemble, rules: Sequence[StoppingRule]) -> list[StoppedPaths]:
    """Evaluate several rules in one sweep over the skeleton blocks."""
    for rule in rules:
        if rule.cap > ensemble.times[-1] * (1 + GRID_TOL):
            raise SimulationError(f"rule cap {rule.cap} exceeds the simulated horizon {ensemble.times[-1]}")
    out = [[] for _ in rules]
    for b, sk in enumerate(ensemble.skeleton_blocks()):
        for i, rule in enumerate(rules):
            out[i].append(_evaluate_block(ensemble, sk, rule, b))
    return [
        StoppedPaths(
            np.concatenate([o.times for o in parts]),
            np.concatenate([o.states for o in parts]),
            np.concatenate([o.hit for o in parts]),
        )
        for parts in out
    ]


def time_integral(ensemble: PathEnsemble, f, until: np.ndarray) -> np.ndarray:
    """∫_0^{until[p]} f(X_s) ds per path, trapezoid on the jump-augmented skeleton.

    ``f`` maps (k, d) points to (k,) values; jump nodes contribute through
    their left and right limits.
    """
    until = np.asarray(until, dtype=float)
    out = np.zeros(ensemble.N)
    for sk in ensemble.skeleton_blocks():
        seg = sk.segment_mask()
        j = np.flatnonzero(seg)
        t0, t1 = sk.time[j], sk.time[j + 1]
        end = np.minimum(t1, until[sk.path[j] + sk.offset])
        live = end > t0
        j, t0, t1, end = j[live], t0[live], t1[live], end[live]
        a, b = sk.right[j], sk.left[j + 1]
        w = ((end - t0) / (t1 - t0))[:, None]
        xe = a + w * (b - a)
        contrib = 0.5 * (end - t0) * (f(a) + f(xe))
        out[sk.offset:sk.offset + sk.P] = np.bincount(sk.path[j], weights=contrib, minlength=sk.P)
    return out


@dataclass(frozen=True)
class SupTracks:
    sup_g: np.ndarray  # sup_{s<=t_k} g(X_s), shape (N, n+1)
    g_of_sup: np.ndarray  # g(sup_{s<=t_k} |X_s|)


def running_sup_g(ensemble: PathEnsemble, g: WeightFunction) -> SupTracks:
    """Both running-supremum tracks of g along each path on the grid."""
    n1 = len(ensemble.times)
    sup = np.empty((ensemble.N, n1))
    dt = ensemble.dt
    for sk in ensemble.skeleton_blocks():
        vals = np.maximum(g(sk.left), g(sk.right))
        k = np.clip(np.ceil(sk.time / dt - 1e-9).astype(np.int64), 0, n1 - 1)
        block = np.full((sk.P, n1), -np.inf)
        np.maximum.at(block, (sk.path, k), vals)
        np.maximum.accumulate(block, axis=1, out=block)
        sup[sk.offset:sk.offset + sk.P] = block
    e1 = np.zeros((1, ensemble.dim))
    e1[0, 0] = 1.0
    r = ensemble.running_max.reshape(-1)
    gos = g(r[:, None] * e1).reshape(ensemble.running_max.shape)
    return SupTracks(sup, gos)
