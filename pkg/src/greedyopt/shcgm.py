"""Stochastic Homotopy Conditional Gradient Method for composite problems
min E_w f(theta, w) + g(A theta) over conv(A), with the deterministic
homotopy baseline and the two shipped applications (k-means SDP and
box-constrained matrix completion)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .atoms import AtomSet, NuclearNormBall, Spectrahedron, lmo_approx_spectral, lmo_exact
from .core import Atom, AtomicCombination, ConvergenceTrace, make_rng
from .objectives import Objective

PURGE_WEIGHT = 1e-15


# -- constraint sets ---------------------------------------------------------

class ConstraintSet:
    """A simple convex set with a cheap Euclidean projection."""

    def project(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def distance(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(x - self.project(x)))


class PointSet(ConstraintSet):
    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)

    def project(self, x):
        return np.broadcast_to(self.value, x.shape).copy()


class BoxSet(ConstraintSet):
    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if np.any(self.lo > self.hi):
            raise ValueError("box needs lo <= hi componentwise")

    def project(self, x):
        return np.clip(x, self.lo, self.hi)


class NonNegOrthant(ConstraintSet):
    def project(self, x):
        return np.maximum(x, 0.0)


class ProductSet(ConstraintSet):
    """Blockwise product of constraint sets over contiguous index ranges."""

    def __init__(self, parts: list[tuple[int, int, ConstraintSet]]):
        spans = sorted((lo, hi) for lo, hi, _ in parts)
        for (a, b), (c, d) in zip(spans, spans[1:]):
            if b != c:
                raise ValueError("product ranges must partition the codomain")
        self.parts = parts

    def project(self, x):
        out = x.copy()
        for lo, hi, part in self.parts:
            out[lo:hi] = part.project(x[lo:hi])
        return out


# -- composite problems ------------------------------------------------------

@dataclass
class LinearMap:
    """A linear map given by its action and adjoint on flat vectors."""

    in_dim: int
    out_dim: int
    apply: callable
    adjoint: callable

    @staticmethod
    def identity(n: int) -> "LinearMap":
        return LinearMap(n, n, lambda x: x, lambda v: v)


@dataclass
class IndicatorPenalty:
    """g = indicator of a simple convex set; prox is the projection."""

    constraint: ConstraintSet

    def prox(self, v: np.ndarray, beta: float) -> np.ndarray:
        return self.constraint.project(v)


@dataclass
class LipschitzProxPenalty:
    """Lipschitz g given through the prox of beta*g."""

    prox_fn: callable  # (v, beta) -> prox_{beta g}(v)

    def prox(self, v: np.ndarray, beta: float) -> np.ndarray:
        return self.prox_fn(v, beta)


class L1Prox:
    """prox of beta * lam * ||.||_1 (soft threshold)."""

    def __init__(self, lam: float = 1.0):
        self.lam = lam

    def __call__(self, v, beta):
        cut = beta * self.lam
        return np.sign(v) * np.maximum(np.abs(v) - cut, 0.0)


@dataclass
class CompositeProblem:
    """Smooth stochastic term + linear map + penalty over an atom set."""

    smooth: Objective
    linear_map: LinearMap
    penalty: IndicatorPenalty | LipschitzProxPenalty
    atom_set: AtomSet
    f_star_estimate: float | None = None

    def check_adjoint(self, num_probes: int = 100, seed: int = 0, tol: float = 1e-8) -> float:
        """Max relative mismatch of <A x, v> vs <x, A^T v> on random probes."""
        rng = make_rng(seed, 0xAD7)
        worst = 0.0
        for _ in range(num_probes):
            x = rng.standard_normal(self.linear_map.in_dim)
            v = rng.standard_normal(self.linear_map.out_dim)
            lhs = float(self.linear_map.apply(x) @ v)
            rhs = float(x @ self.linear_map.adjoint(v))
            worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
        if worst > tol:
            raise AssertionError(f"adjoint mismatch {worst:.3e} exceeds {tol}")
        return worst


@dataclass
class Schedules:
    """The three coupled learning rates of the stochastic homotopy loop."""

    beta0: float

    def __post_init__(self):
        if self.beta0 <= 0:
            raise ValueError("beta0 must be positive")

    def at(self, k: int) -> tuple[float, float, float]:
        return schedules_at(k, self.beta0)


def schedules_at(k: int, beta0: float) -> tuple[float, float, float]:
    """(eta, beta, rho) at iteration k >= 1:
    eta = 9/(k+8), beta = beta0/sqrt(k+8), rho = 4/(k+7)^(2/3)."""
    if k < 1:
        raise ValueError("schedules are defined for k >= 1")
    eta = 9.0 / (k + 8.0)
    beta = beta0 / math.sqrt(k + 8.0)
    # float pow can land a hair above 1 at k=1; the invariant is rho in (0, 1]
    rho = min(4.0 / (k + 7.0) ** (2.0 / 3.0), 1.0)
    return eta, beta, rho


def update_gradient_estimate(d_prev: np.ndarray, stoch_grad: np.ndarray,
                             rho: float) -> np.ndarray:
    """Biased low-variance estimator d = (1 - rho) d_prev + rho g."""
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must be in (0, 1]")
    return (1.0 - rho) * d_prev + rho * stoch_grad


def smoothed_penalty_gradient(problem: CompositeProblem, theta: np.ndarray,
                              beta: float) -> np.ndarray:
    """Gradient of the beta-smoothed penalty, A^T (A theta - prox_{beta g}(A theta)) / beta.

    For indicator penalties the prox is the Euclidean projection onto the
    constraint set (Moreau decomposition of the smoothed indicator).
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    u = problem.linear_map.apply(theta)
    return problem.linear_map.adjoint(u - problem.penalty.prox(u, beta)) / beta


def feasibility_gap(problem: CompositeProblem, theta: np.ndarray) -> float:
    """Euclidean distance from A theta to the constraint set K."""
    if not isinstance(problem.penalty, IndicatorPenalty):
        raise ValueError("feasibility gap is defined for indicator penalties")
    return problem.penalty.constraint.distance(problem.linear_map.apply(theta))


@dataclass
class LmoSettings:
    """Spectral-oracle settings for the homotopy loops.

    ``mode`` picks the oracle for spectral atom sets: ``auto`` uses the dense
    exact solve while it is affordable (dimension <= 64) and warm-started
    power iteration beyond, ``power`` forces the approximate oracle.
    """

    max_power_iters: int = 100
    tol: float = 1e-8
    warm_start: bool = True
    mode: str = "auto"


def _dense_affordable(atom_set: AtomSet) -> bool:
    if isinstance(atom_set, Spectrahedron):
        return atom_set.n <= 64
    if isinstance(atom_set, NuclearNormBall):
        return max(atom_set.rows, atom_set.cols) <= 64
    return False


def _spectral_lmo(atom_set: AtomSet, direction: np.ndarray, settings: LmoSettings,
                  warm: np.ndarray | None):
    if isinstance(atom_set, (Spectrahedron, NuclearNormBall)):
        if settings.mode != "power" and _dense_affordable(atom_set):
            return lmo_exact(atom_set, direction), None
        result = lmo_approx_spectral(atom_set, direction,
                                     max_power_iters=settings.max_power_iters,
                                     tol=settings.tol,
                                     init=warm if settings.warm_start else None)
        kind, _, *uv = result.atom.factors
        return result, uv[-1]
    return lmo_exact(atom_set, direction), None


def _homotopy_loop(problem: CompositeProblem, max_iter: int,
                   rates, gradient_source, settings: LmoSettings,
                   use_penalty: bool) -> tuple[AtomicCombination, ConvergenceTrace]:
    """Shared loop of the stochastic and deterministic homotopy methods.

    ``rates(k) -> (eta, beta)`` and ``gradient_source(k, theta) -> d_k``
    differ between the two; everything else (smoothed penalty, LMO, convex
    averaging, trace bookkeeping) is identical.
    """
    atom_set = problem.atom_set
    start, _ = _spectral_lmo(atom_set, np.zeros(atom_set.dimension), settings, None)
    theta = AtomicCombination.from_atom(start.atom, "convexHull")
    indicator = isinstance(problem.penalty, IndicatorPenalty)
    trace = ConvergenceTrace()
    warm = None
    flagged = 0
    for k in range(1, max_iter + 1):
        eta, beta = rates(k)
        d = gradient_source(k, theta.point)
        v = d + smoothed_penalty_gradient(problem, theta.point, beta) if use_penalty else d
        result, warm = _spectral_lmo(atom_set, v, settings, warm)
        if not result.converged and flagged < 10:
            trace.note(k, f"lmo unconverged, residual {result.residual:.3e}")
            flagged += 1
        theta.scale(1.0 - eta)
        theta.add(result.atom, eta)
        trace.append(k, problem.smooth.value(theta.point),
                     feasibility=feasibility_gap(problem, theta.point) if indicator else None,
                     step_kind="fw")
    # open-loop weights decay fast; one final sweep keeps the active list clean
    theta.purge_zero_weights(PURGE_WEIGHT)
    return theta, trace


def run_shcgm(problem: CompositeProblem, schedules: Schedules, max_iter: int,
              seed: int, lmo_settings: LmoSettings | None = None,
              use_penalty: bool = True) -> tuple[AtomicCombination, ConvergenceTrace]:
    """Stochastic homotopy conditional gradient.

    Per iteration: refresh the averaged gradient estimate d_k, add the
    smoothed penalty gradient, take the LMO atom of the sum, and move with
    step eta_k. With ``use_penalty=False`` the loop degrades to plain
    stochastic FW on the smooth term (the unconstrained baseline).
    """
    settings = lmo_settings or LmoSettings()
    rng = make_rng(seed, 0x5C6)
    state = {"d": np.zeros(problem.atom_set.dimension)}

    def gradient_source(k, point):
        _, _, rho = schedules.at(k)
        g = problem.smooth.stochastic_gradient(point, rng)
        state["d"] = update_gradient_estimate(state["d"], g, rho)
        return state["d"]

    def rates(k):
        eta, beta, _ = schedules.at(k)
        return eta, beta

    return _homotopy_loop(problem, max_iter, rates, gradient_source, settings,
                          use_penalty)


def run_hcgm(problem: CompositeProblem, beta0: float, max_iter: int,
             lmo_settings: LmoSettings | None = None) -> tuple[AtomicCombination, ConvergenceTrace]:
    """Deterministic homotopy CGM baseline: full gradients with
    eta = 2/(k+1) and beta = beta0/sqrt(k+1)."""
    settings = lmo_settings or LmoSettings()

    def gradient_source(k, point):
        return problem.smooth.gradient(point)

    def rates(k):
        return 2.0 / (k + 1.0), beta0 / math.sqrt(k + 1.0)

    return _homotopy_loop(problem, max_iter, rates, gradient_source, settings,
                          use_penalty=True)


# -- shipped applications ----------------------------------------------------

class KmeansSdpObjective(Objective):
    """<D, theta> with a minibatch-of-pairs stochastic gradient.

    The minibatch samples unordered entry pairs of the symmetric distance
    matrix without replacement and rescales by inverse inclusion probability,
    so the estimator is unbiased and stays symmetric.
    """

    has_stochastic_gradient = True
    is_quadratic = True

    def __init__(self, distances: np.ndarray, minibatch_fraction: float):
        D = np.asarray(distances, dtype=np.float64)
        n = D.shape[0]
        self.D = D
        self.n = n
        self.dimension = n * n
        self.smoothness = 0.0
        iu = np.triu_indices(n)
        self.pair_rows, self.pair_cols = iu
        self.num_pairs = self.pair_rows.shape[0]
        self.batch = max(1, round(minibatch_fraction * self.num_pairs))
        self._flat = D.ravel()

    def value(self, x):
        return float(self._flat @ x)

    def gradient(self, x):
        return self._flat.copy()

    def curvature_along(self, d):
        return 0.0

    def stochastic_gradient(self, x, rng):
        sel = rng.choice(self.num_pairs, size=self.batch, replace=False)
        scale = self.num_pairs / self.batch
        G = np.zeros((self.n, self.n))
        r, c = self.pair_rows[sel], self.pair_cols[sel]
        G[r, c] = self.D[r, c] * scale
        G[c, r] = G[r, c]
        return G.ravel()


def build_kmeans_sdp(points, k: int, minibatch_fraction: float = 0.1) -> CompositeProblem:
    """SDP relaxation of k-means over n points (dense distances, n <= 200).

    Minimize <D, theta> over the spectrahedron of trace k subject to
    theta 1 = 1 and theta >= 0 entrywise; D holds pairwise squared
    Euclidean distances.
    """
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if n > 200:
        raise ValueError("dense k-means SDP is limited to n <= 200")
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(D, 0.0)
    D = np.maximum(D, 0.0)

    def apply(x):
        M = x.reshape(n, n)
        return np.concatenate([M.sum(axis=1), x])

    def adjoint(v):
        u1 = v[:n]
        out = np.repeat(u1, n)  # (A1^T u)_{ij} = u_i
        return out + v[n:]

    constraint = ProductSet([(0, n, PointSet(np.ones(n))),
                             (n, n + n * n, NonNegOrthant())])
    return CompositeProblem(
        smooth=KmeansSdpObjective(D, minibatch_fraction),
        linear_map=LinearMap(n * n, n + n * n, apply, adjoint),
        penalty=IndicatorPenalty(constraint),
        atom_set=Spectrahedron(n, float(k)),
    )


class MatrixCompletionObjective(Objective):
    """sum over observed entries of (X_ij - Y_ij)^2, minibatch-subsampled."""

    has_stochastic_gradient = True
    is_quadratic = True

    def __init__(self, rows, cols, values, shape, minibatch_fraction: float):
        self.shape = tuple(shape)
        self.dimension = self.shape[0] * self.shape[1]
        self.flat_idx = np.asarray(rows) * self.shape[1] + np.asarray(cols)
        self.values = np.asarray(values, dtype=np.float64)
        self.num_obs = self.values.shape[0]
        self.batch = max(1, round(minibatch_fraction * self.num_obs))
        self.smoothness = 2.0

    def value(self, x):
        r = x[self.flat_idx] - self.values
        return float(r @ r)

    def gradient(self, x):
        g = np.zeros(self.dimension)
        np.add.at(g, self.flat_idx, 2.0 * (x[self.flat_idx] - self.values))
        return g

    def curvature_along(self, d):
        return float(2.0 * np.sum(d[self.flat_idx] ** 2))

    def stochastic_gradient(self, x, rng):
        sel = rng.choice(self.num_obs, size=self.batch, replace=False)
        idx = self.flat_idx[sel]
        g = np.zeros(self.dimension)
        np.add.at(g, idx, 2.0 * (x[idx] - self.values[sel]) * (self.num_obs / self.batch))
        return g


def points_from_csv(path) -> np.ndarray:
    """Data points for the k-means builder, one point per CSV row (a
    non-numeric first line is treated as a header)."""
    with open(path) as fh:
        first = fh.readline()
    skip = 0
    try:
        [float(tok) for tok in first.replace(",", " ").split()]
    except ValueError:
        skip = 1
    return np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)


def observations_from_csv(path) -> list[tuple[int, int, float]]:
    """Matrix-completion observations from CSV rows ``i,j,value``."""
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.shape[1] != 3:
        raise ValueError("observations CSV needs exactly i,j,value columns")
    return [(int(i), int(j), float(v)) for i, j, v in data]


def build_matrix_completion(observed_entries, shape, beta1: float,
                            box=(1.0, 5.0), minibatch_fraction: float = 0.1) -> CompositeProblem:
    """Nuclear-norm-ball matrix completion with a hard entrywise box.

    ``observed_entries`` is a sequence of (i, j, value) with values inside
    the box; the objective is the sum of squared errors on the observed
    entries and the affine constraint keeps every entry of X in the box.
    """
    rows = [int(i) for i, _, _ in observed_entries]
    cols = [int(j) for _, j, _ in observed_entries]
    vals = [float(v) for _, _, v in observed_entries]
    lo, hi = box
    if vals and (min(vals) < lo or max(vals) > hi):
        raise ValueError("observed values must lie inside the box")
    if beta1 <= 0:
        raise ValueError("beta1 must be positive")
    smooth = MatrixCompletionObjective(rows, cols, vals, shape, minibatch_fraction)
    return CompositeProblem(
        smooth=smooth,
        linear_map=LinearMap.identity(smooth.dimension),
        penalty=IndicatorPenalty(BoxSet(lo, hi)),
        atom_set=NuclearNormBall(shape[0], shape[1], beta1),
    )
