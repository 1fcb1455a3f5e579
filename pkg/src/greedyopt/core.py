"""Shared numeric foundations: iterates, traces, step rules, rate fits.

Everything downstream works on plain 1-D ``float64`` numpy arrays. Matrix
variables (PSD or rectangular) are carried in flattened form; atoms remember
their rank-1 factors so long runs never store dense payloads per atom.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

# Default absolute tolerance on weight arithmetic (convex-combination checks).
WEIGHT_TOL = 1e-9
# Componentwise tolerance under which two atom payloads are the same atom.
DEDUP_TOL = 1e-12


class NonFiniteError(ValueError):
    """An objective or gradient probe returned NaN/Inf."""


class ZeroDirectionError(ValueError):
    """A step rule was asked to move along a zero direction."""


class DegenerateTraceError(ValueError):
    """A rate fit has too few usable residuals to say anything."""


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based Philox generator for a named stream.

    The same ``(seed, stream)`` pair always yields the same draws, on any
    platform, which is what makes solver traces byte-reproducible. Extra
    stream components split a seed into independent substreams (one per
    restart, per worker, per solver, ...).
    """
    entropy = (int(seed),) + tuple(int(s) for s in stream)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def as_vector(x, dimension: int | None = None) -> np.ndarray:
    """Validate and return ``x`` as a finite 1-D float64 array."""
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if dimension is not None and v.shape[0] != dimension:
        raise ValueError(f"expected dimension {dimension}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError("vector has non-finite entries")
    return v


def payload_key(vector: np.ndarray, tol: float = DEDUP_TOL) -> bytes:
    """Hashable key identifying a payload up to componentwise ``tol``."""
    return np.round(vector / tol).astype(np.int64).tobytes()


class Objective:
    """Value/gradient interface every solver consumes.

    Subclasses must provide ``value`` and ``gradient``; they may declare a
    smoothness upper bound ``smoothness`` (the constant L of the quadratic
    upper bound), support ``stochastic_gradient`` for the stochastic solvers,
    and expose exact line search via ``curvature_along`` when quadratic.
    """

    dimension: int
    smoothness: float | None = None
    is_quadratic: bool = False
    has_stochastic_gradient: bool = False

    def value(self, point: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, point: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def stochastic_gradient(self, point: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no stochastic gradient")

    def curvature_along(self, direction: np.ndarray) -> float:
        """d^T H d for quadratic objectives (exact line search support)."""
        raise NotImplementedError(f"{type(self).__name__} is not quadratic")


class Atom:
    """Handle for one dictionary element.

    ``factors`` keeps the rank-1 structure of spectral atoms:
    ``("sym", scale, v)`` stands for ``scale * v v^T`` flattened row-major and
    ``("rect", scale, u, v)`` for ``scale * u v^T``. Dense payloads of
    factored atoms are materialized on demand and not cached, so long runs
    stay cheap in memory.
    """

    __slots__ = ("_vector", "factors")

    def __init__(self, vector: np.ndarray | None = None, factors: tuple | None = None):
        if vector is None and factors is None:
            raise ValueError("atom needs a payload vector or factors")
        self._vector = None if vector is None else np.asarray(vector, dtype=np.float64)
        self.factors = factors

    @property
    def vector(self) -> np.ndarray:
        if self._vector is not None:
            return self._vector
        kind, scale, *uv = self.factors
        if kind == "sym":
            (v,) = uv
            return (scale * np.outer(v, v)).ravel()
        u, v = uv
        return (scale * np.outer(u, v)).ravel()

    @property
    def dimension(self) -> int:
        if self._vector is not None:
            return self._vector.shape[0]
        kind, _, *uv = self.factors
        if kind == "sym":
            return uv[0].shape[0] ** 2
        return uv[0].shape[0] * uv[1].shape[0]

    def norm_squared(self) -> float:
        if self._vector is not None:
            return float(self._vector @ self._vector)
        kind, scale, *uv = self.factors
        if kind == "sym":
            (v,) = uv
            return float(scale * scale * (v @ v) ** 2)
        u, v = uv
        return float(scale * scale * (u @ u) * (v @ v))

    def inner(self, direction: np.ndarray) -> float:
        """<direction, atom> without materializing factored payloads."""
        if self._vector is not None:
            return float(direction @ self._vector)
        kind, scale, *uv = self.factors
        n = uv[0].shape[0]
        if kind == "sym":
            (v,) = uv
            return float(scale * (v @ direction.reshape(n, n) @ v))
        u, v = uv
        return float(scale * (u @ direction.reshape(n, v.shape[0]) @ v))

    def __repr__(self):  # pragma: no cover - debugging aid
        if self.factors is not None:
            return f"Atom(factors={self.factors[0]}, dim={self.dimension})"
        return f"Atom(dim={self.dimension})"


DOMAIN_KINDS = ("convexHull", "conicHull", "linearSpan")


class AtomicCombination:
    """An iterate stored as weighted active atoms plus a cached dense point.

    The cache tracks the weighted sum incrementally; ``validate`` recomputes
    it from scratch and checks the domain invariants. Weight rescaling is
    O(1) thanks to a lazy global scale factor, which matters for solvers that
    shrink every weight each iteration.
    """

    def __init__(self, dimension: int, domain: str):
        if domain not in DOMAIN_KINDS:
            raise ValueError(f"unknown domain kind {domain!r}")
        self.dimension = int(dimension)
        self.domain = domain
        self.atoms: list[Atom] = []
        self._raw_weights = np.zeros(0)
        self._scale = 1.0
        self._index: dict[bytes, int] = {}
        self.point = np.zeros(self.dimension)

    # -- weights ----------------------------------------------------------

    @property
    def weights(self) -> np.ndarray:
        return self._raw_weights[: len(self.atoms)] * self._scale

    def weight_of(self, atom: Atom) -> float:
        idx = self._index.get(payload_key(atom.vector))
        return 0.0 if idx is None else float(self._raw_weights[idx] * self._scale)

    def total_weight(self) -> float:
        return float(self._raw_weights[: len(self.atoms)].sum() * self._scale)

    # -- mutation ---------------------------------------------------------

    def add(self, atom: Atom, weight: float) -> int:
        """Accumulate ``weight`` on ``atom``, deduping by payload, and
        update the cached point. Returns the atom's slot index."""
        vec = atom.vector
        key = payload_key(vec)
        idx = self._index.get(key)
        if idx is None:
            idx = len(self.atoms)
            self.atoms.append(atom)
            if idx >= self._raw_weights.shape[0]:
                grown = np.zeros(max(8, 2 * self._raw_weights.shape[0]))
                grown[: idx] = self._raw_weights[: idx]
                self._raw_weights = grown
            self._raw_weights[idx] = 0.0
            self._index[key] = idx
        self._raw_weights[idx] += weight / self._scale
        self.point += weight * vec
        return idx

    def scale(self, factor: float) -> None:
        """Multiply all weights (and the cached point) by ``factor``."""
        if factor == 0.0:
            self._raw_weights[: len(self.atoms)] = 0.0
            self.point = np.zeros(self.dimension)
            self._scale = 1.0
            return
        self._scale *= factor
        self.point *= factor
        if abs(self._scale) < 1e-100:  # fold before underflow bites
            self._raw_weights[: len(self.atoms)] *= self._scale
            self._scale = 1.0

    def set_weight(self, idx: int, weight: float) -> None:
        """Assign a weight exactly (used by clipped drop steps)."""
        old = self._raw_weights[idx] * self._scale
        self._raw_weights[idx] = weight / self._scale
        self.point += (weight - old) * self.atoms[idx].vector

    def purge_zero_weights(self, min_weight: float = 0.0) -> int:
        """Drop atoms whose weight is <= ``min_weight``; returns how many."""
        w = self.weights
        keep = np.flatnonzero(w > min_weight)
        dropped = len(self.atoms) - keep.size
        if dropped:
            self.atoms = [self.atoms[i] for i in keep]
            raw = np.zeros(max(8, 2 * keep.size))
            raw[: keep.size] = w[keep]
            self._raw_weights = raw
            self._scale = 1.0
            self._index = {payload_key(a.vector): i for i, a in enumerate(self.atoms)}
        return dropped

    def recompute_point(self) -> np.ndarray:
        point = np.zeros(self.dimension)
        for atom, w in zip(self.atoms, self.weights):
            point += w * atom.vector
        return point

    def copy(self) -> "AtomicCombination":
        dup = AtomicCombination(self.dimension, self.domain)
        for atom, w in zip(self.atoms, self.weights):
            dup.add(atom, w)
        return dup

    # -- invariants -------------------------------------------------------

    def validate(self, cache_rtol: float = 1e-10, weight_tol: float = WEIGHT_TOL) -> None:
        """Check the domain and cache invariants, raising on violation."""
        w = self.weights
        exact = self.recompute_point()
        scale = max(1.0, float(np.linalg.norm(exact)))
        if np.linalg.norm(self.point - exact) > cache_rtol * scale:
            raise AssertionError("cached point drifted from the weighted atom sum")
        if self.domain in ("convexHull", "conicHull"):
            if w.size and w.min() < -weight_tol:
                raise AssertionError("negative weight in a hull combination")
        if self.domain == "convexHull":
            if abs(w.sum() - 1.0) > weight_tol:
                raise AssertionError(f"convex weights sum to {w.sum()}, not 1")

    @staticmethod
    def from_atom(atom: Atom, domain: str, weight: float = 1.0) -> "AtomicCombination":
        combo = AtomicCombination(atom.dimension, domain)
        combo.add(atom, weight)
        return combo


STEP_KINDS = ("fw", "away", "pairwise", "corrective", "mp", "drop", "stationary")


class ConvergenceTrace:
    """Per-iteration record consumed by the rate-fit diagnostics and CLI."""

    def __init__(self):
        self.iters: list[int] = []
        self.wall_ms: list[float] = []
        self.objectives: list[float] = []
        self.gaps: list[float | None] = []
        self.feasibilities: list[float | None] = []
        self.step_kinds: list[str] = []
        self.good_steps: list[bool | None] = []  # corrective-variant diagnostic
        self.notes: list[tuple[int, str]] = []
        self._start = time.perf_counter()

    def append(self, iteration: int, objective: float, gap: float | None = None,
               feasibility: float | None = None, step_kind: str = "fw",
               good_step: bool | None = None) -> None:
        if self.iters and iteration <= self.iters[-1]:
            raise ValueError("trace iterations must be strictly increasing")
        if step_kind not in STEP_KINDS:
            raise ValueError(f"unknown step kind {step_kind!r}")
        self.iters.append(int(iteration))
        self.wall_ms.append((time.perf_counter() - self._start) * 1e3)
        self.objectives.append(float(objective))
        self.gaps.append(None if gap is None else float(gap))
        self.feasibilities.append(None if feasibility is None else float(feasibility))
        self.step_kinds.append(step_kind)
        self.good_steps.append(good_step)

    def note(self, iteration: int, message: str) -> None:
        self.notes.append((int(iteration), message))

    def __len__(self):
        return len(self.iters)

    def objective_array(self) -> np.ndarray:
        return np.asarray(self.objectives)

    def iter_array(self) -> np.ndarray:
        return np.asarray(self.iters)

    def final_objective(self) -> float:
        return self.objectives[-1]


@dataclass
class RateFit:
    """Least-squares fit of a convergence trend."""

    slope: float
    r_squared: float
    model: str
    num_points: int


def finite_diff_check(obj: Objective, point: np.ndarray, h: float) -> float:
    """Max relative error between central differences and ``obj.gradient``.

    Error per coordinate is ``|central - grad| / max(1, |grad|)``.
    """
    if h <= 0:
        raise ValueError("finite-difference step h must be positive")
    point = as_vector(point, getattr(obj, "dimension", None))
    grad = np.asarray(obj.gradient(point), dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("gradient has non-finite entries")
    worst = 0.0
    probe = point.copy()
    for i in range(point.shape[0]):
        probe[i] = point[i] + h
        f_plus = obj.value(probe)
        probe[i] = point[i] - h
        f_minus = obj.value(probe)
        probe[i] = point[i]
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError("objective returned NaN/Inf at a probe point")
        central = (f_plus - f_minus) / (2.0 * h)
        err = abs(central - grad[i]) / max(1.0, abs(grad[i]))
        worst = max(worst, err)
    return worst


def step_on_upper_bound(grad: np.ndarray, direction: np.ndarray, L: float,
                        clip_to: tuple[float, float] | None = None) -> float:
    """Step size minimizing the quadratic upper bound along ``direction``.

    gamma = <-grad, direction> / (L ||direction||^2), optionally clipped.
    """
    if L <= 0:
        raise ValueError("smoothness bound L must be positive")
    norm_sq = float(direction @ direction)
    if norm_sq == 0.0:
        raise ZeroDirectionError("cannot step along a zero direction")
    gamma = float(-(grad @ direction)) / (L * norm_sq)
    if clip_to is not None:
        gamma = min(max(gamma, clip_to[0]), clip_to[1])
    return gamma


def fixed_fw_step(k: int) -> float:
    """The 2/(k+2) open-loop step size."""
    if k < 0:
        raise ValueError("iteration index must be >= 0")
    return 2.0 / (k + 2.0)


def fit_rate(trace: ConvergenceTrace, model: str, window: tuple[int, int],
             optimum: float | None = None) -> RateFit:
    """Fit a decay model to the suboptimality of a trace.

    ``powerLaw`` regresses log(eps) on log(k); ``geometric`` regresses
    log(eps) on k. Only rows in the iteration ``window`` (inclusive) whose
    residual ``objective - optimum`` is positive enter the fit; fewer than 10
    such rows raises ``DegenerateTraceError``.
    """
    if model not in ("powerLaw", "geometric"):
        raise ValueError(f"unknown rate model {model!r}")
    iters = trace.iter_array()
    resid = trace.objective_array() - (0.0 if optimum is None else optimum)
    lo, hi = window
    mask = (iters >= lo) & (iters <= hi) & (resid > 0.0)
    if model == "powerLaw":
        mask &= iters > 0
    k = iters[mask].astype(np.float64)
    eps = resid[mask]
    if k.size < 10:
        raise DegenerateTraceError(f"only {k.size} usable rows in window {window}")
    y = np.log(eps)
    if np.ptp(y) == 0.0:
        raise DegenerateTraceError("all residuals identical; nothing to fit")
    x = np.log(k) if model == "powerLaw" else k
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), r_squared, model, int(k.size))
