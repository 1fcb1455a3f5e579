"""Atom sets, linear minimization oracles, and atomic norms.

An atom set is the only domain access the solvers get: it answers linear
minimization queries (which atom has the smallest inner product with a
direction) and, where defined, gauge/atomic-norm queries. Spectral sets keep
their atoms as rank-1 factors and answer queries by power iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .core import Atom, AtomicCombination, as_vector, make_rng

GAUGE_RESIDUAL_TOL = 1e-8
STATIONARITY_TOL = 1e-10


class DimensionMismatchError(ValueError):
    """Query direction does not match the atom set's ambient dimension."""


class UseApproxOracleError(ValueError):
    """Exact LMO unavailable at this size; call lmo_approx_spectral."""


class UnsupportedNormError(ValueError):
    """The atomic norm has no implementation for this set variant."""


@dataclass
class LmoResult:
    """Outcome of a linear minimization query.

    ``accuracy`` is one of ``exact``, ``multiplicative`` (value = delta-hat),
    or ``additive`` (value = slack bound). Approximate oracles that hit their
    iteration cap still return a result, with ``converged`` False and the
    achieved residual attached.
    """

    atom: Atom
    inner_product: float
    accuracy: str = "exact"
    accuracy_value: float | None = None
    converged: bool = True
    residual: float = 0.0
    origin_directed: bool = False  # set by cone_augmented_lmo for -theta/||theta|| picks


class AtomSet:
    """Base interface: immutable after construction, pure LMO calls."""

    dimension: int
    symmetric: bool = False

    def _check(self, direction: np.ndarray) -> np.ndarray:
        d = np.asarray(direction, dtype=np.float64).ravel()
        if d.shape[0] != self.dimension:
            raise DimensionMismatchError(
                f"direction has dimension {d.shape[0]}, set expects {self.dimension}")
        return d


class FiniteAtomSet(AtomSet):
    """An explicit list of atoms, one per row of ``matrix``."""

    def __init__(self, atoms, symmetric: bool = False):
        Z = np.asarray(atoms, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[0] == 0:
            raise ValueError("need a non-empty (num_atoms, dim) array")
        if not np.all(np.isfinite(Z)):
            raise ValueError("atoms must be finite")
        if np.any(np.linalg.norm(Z, axis=1) == 0.0):
            raise ValueError("atoms must be nonzero")
        self.matrix = Z
        self.dimension = Z.shape[1]
        self.symmetric = bool(symmetric)
        if self.symmetric and not self._closed_under_negation():
            raise ValueError("symmetric=True but the atom list is not sign-closed")

    def _closed_under_negation(self, tol: float = 1e-12) -> bool:
        for z in self.matrix:
            if not np.any(np.all(np.abs(self.matrix + z) <= tol, axis=1)):
                return False
        return True

    @property
    def num_atoms(self) -> int:
        return self.matrix.shape[0]

    def atom(self, index: int) -> Atom:
        return Atom(self.matrix[index])

    def normalized_to_unit_norm(self) -> "FiniteAtomSet":
        """Copy with every atom rescaled to unit Euclidean norm (cone use)."""
        Z = self.matrix / np.linalg.norm(self.matrix, axis=1, keepdims=True)
        return FiniteAtomSet(Z, symmetric=self.symmetric)

    @staticmethod
    def from_csv(path, symmetric: bool = False) -> "FiniteAtomSet":
        """Load atoms from a CSV of row vectors; a non-numeric first line is
        treated as a header and skipped."""
        with open(path) as fh:
            first = fh.readline()
        skip = 0
        try:
            [float(tok) for tok in first.replace(",", " ").split()]
        except ValueError:
            skip = 1
        Z = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
        return FiniteAtomSet(Z, symmetric=symmetric)


class SignedCoordinates(AtomSet):
    """Vertices +-e_i of the L1 ball; atom index order is +e_0..+e_{n-1},
    then -e_0..-e_{n-1} (ties resolve to the lowest index)."""

    symmetric = True

    def __init__(self, dimension: int):
        self.dimension = int(dimension)

    def atom(self, index: int) -> Atom:
        v = np.zeros(self.dimension)
        if index < self.dimension:
            v[index] = 1.0
        else:
            v[index - self.dimension] = -1.0
        return Atom(v)


class SimplexVertices(AtomSet):
    """Standard basis vectors e_i (vertices of the probability simplex)."""

    symmetric = False

    def __init__(self, dimension: int):
        self.dimension = int(dimension)

    def atom(self, index: int) -> Atom:
        v = np.zeros(self.dimension)
        v[index] = 1.0
        return Atom(v)


class L2Ball(AtomSet):
    """The Euclidean sphere of a given radius (continuous atom set)."""

    symmetric = True

    def __init__(self, dimension: int, radius: float = 1.0):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.dimension = int(dimension)
        self.radius = float(radius)


class Spectrahedron(AtomSet):
    """Rank-1 atoms beta * v v^T of {X PSD, tr X <= beta}, flattened row-major."""

    symmetric = False

    def __init__(self, n: int, trace_bound: float):
        if trace_bound <= 0:
            raise ValueError("trace bound must be positive")
        self.n = int(n)
        self.trace_bound = float(trace_bound)
        self.dimension = self.n * self.n


class NuclearNormBall(AtomSet):
    """Rank-1 atoms beta1 * u v^T of the nuclear-norm ball, flattened row-major."""

    symmetric = True

    def __init__(self, rows: int, cols: int, radius: float):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.rows = int(rows)
        self.cols = int(cols)
        self.radius = float(radius)
        self.dimension = self.rows * self.cols


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flip sign so the first nonzero entry is positive (determinism)."""
    nz = np.flatnonzero(v)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def lmo_exact(atom_set: AtomSet, direction) -> LmoResult:
    """argmin over the atom set of <direction, z>, deterministically.

    Ties break to the lowest atom index for enumerable sets and by first
    coordinate sign for continuous sets. Spectral sets above dimension 64
    must use ``lmo_approx_spectral`` instead.
    """
    d = atom_set._check(direction)
    if isinstance(atom_set, FiniteAtomSet):
        ips = atom_set.matrix @ d
        idx = int(np.argmin(ips))
        return LmoResult(atom_set.atom(idx), float(ips[idx]))
    if isinstance(atom_set, SignedCoordinates):
        stacked = np.concatenate([d, -d])
        idx = int(np.argmin(stacked))
        return LmoResult(atom_set.atom(idx), float(stacked[idx]))
    if isinstance(atom_set, SimplexVertices):
        idx = int(np.argmin(d))
        return LmoResult(atom_set.atom(idx), float(d[idx]))
    if isinstance(atom_set, L2Ball):
        norm = float(np.linalg.norm(d))
        if norm == 0.0:
            v = np.zeros(atom_set.dimension)
            v[0] = atom_set.radius
            return LmoResult(Atom(v), 0.0)
        payload = -(atom_set.radius / norm) * d
        return LmoResult(Atom(payload), -atom_set.radius * norm)
    if isinstance(atom_set, Spectrahedron):
        if atom_set.n > 64:
            raise UseApproxOracleError("dense eigensolve beyond n=64; use lmo_approx_spectral")
        G = d.reshape(atom_set.n, atom_set.n)
        G = 0.5 * (G + G.T)  # the inner product only sees the symmetric part
        eigvals, eigvecs = np.linalg.eigh(G)
        v = _canonical_sign(eigvecs[:, 0])
        atom = Atom(factors=("sym", atom_set.trace_bound, v))
        return LmoResult(atom, float(atom_set.trace_bound * eigvals[0]))
    if isinstance(atom_set, NuclearNormBall):
        if max(atom_set.rows, atom_set.cols) > 64:
            raise UseApproxOracleError("dense SVD beyond 64; use lmo_approx_spectral")
        G = d.reshape(atom_set.rows, atom_set.cols)
        U, s, Vt = np.linalg.svd(G)
        u, v = -U[:, 0], Vt[0]
        if _canonical_sign(u) is not u:
            u, v = -u, -v
        atom = Atom(factors=("rect", atom_set.radius, u, v))
        return LmoResult(atom, float(-atom_set.radius * s[0]))
    raise TypeError(f"no exact LMO for {type(atom_set).__name__}")


def _gershgorin_upper(G: np.ndarray) -> float:
    """Row-sum upper bound on the largest eigenvalue of symmetric G."""
    abs_off = np.sum(np.abs(G), axis=1) - np.abs(np.diag(G))
    return float(np.max(np.diag(G) + abs_off))


def _power_start(n: int, init: np.ndarray | None) -> np.ndarray:
    if init is not None:
        v = np.asarray(init, dtype=np.float64).copy()
        norm = np.linalg.norm(v)
        if norm > 0:
            return v / norm
    v = make_rng(0x9E3779B9, n).standard_normal(n)
    return v / np.linalg.norm(v)


def lmo_approx_spectral(atom_set, direction, max_power_iters: int = 200,
                        tol: float = 1e-9, init: np.ndarray | None = None) -> LmoResult:
    """Approximate LMO for spectral sets by (shifted) power iteration.

    Spectrahedron: power iteration on sigma*I - G with sigma the Gershgorin
    upper bound on lambda_max(G), so the dominant eigenvector of the shifted
    matrix is the minimum eigenvector of G. NuclearNormBall: alternating
    power steps for the top singular pair of -G. The returned delta-hat
    (``accuracy_value``) is achieved/exact inner product when a dense solve
    is affordable (n <= 64), otherwise a residual-based lower estimate.
    """
    if max_power_iters < 1:
        raise ValueError("max_power_iters must be >= 1")
    d = atom_set._check(direction)
    if isinstance(atom_set, Spectrahedron):
        n, beta = atom_set.n, atom_set.trace_bound
        G = d.reshape(n, n)
        G = 0.5 * (G + G.T)
        sigma = _gershgorin_upper(G)
        v = _power_start(n, init)
        residual = 0.0
        for _ in range(max_power_iters):
            w = sigma * v - G @ v
            lam = float(v @ w)
            residual = float(np.linalg.norm(w - lam * v))
            norm_w = float(np.linalg.norm(w))
            if norm_w == 0.0:  # G is sigma*I: every direction is optimal
                break
            v = w / norm_w
            if residual <= tol * max(1.0, abs(lam)):
                break
        v = _canonical_sign(v)
        achieved = float(beta * (v @ G @ v))
        converged = residual <= tol * max(1.0, abs(sigma))
        if n <= 64:
            exact = float(beta * np.linalg.eigvalsh(G)[0])
        else:
            shifted = float(v @ (sigma * v - G @ v))
            exact = float(beta * (sigma - (shifted + residual)))
        if exact < 0.0:
            delta = float(np.clip(achieved / exact, 0.0, 1.0))
        else:
            delta = 1.0
        return LmoResult(Atom(factors=("sym", beta, v)), achieved,
                         accuracy="multiplicative", accuracy_value=delta,
                         converged=converged, residual=residual)
    if isinstance(atom_set, NuclearNormBall):
        m, n, beta = atom_set.rows, atom_set.cols, atom_set.radius
        G = d.reshape(m, n)
        v = _power_start(n, init)
        sigma_est = 0.0
        residual = 0.0
        u = np.zeros(m)
        for _ in range(max_power_iters):
            Gv = G @ v
            sigma_est = float(np.linalg.norm(Gv))
            if sigma_est == 0.0:
                u = np.zeros(m)
                u[0] = 1.0
                break
            u = Gv / sigma_est
            w = G.T @ u
            residual = float(np.linalg.norm(w - sigma_est * v))
            v = w / np.linalg.norm(w)
            if residual <= tol * max(1.0, sigma_est):
                break
        w = -u  # the atom's left factor; canonicalize its leading sign
        nz = np.flatnonzero(w)
        if nz.size and w[nz[0]] < 0:
            u, v = -u, -v
        atom = Atom(factors=("rect", beta, -u, v))
        achieved = float(-beta * (u @ G @ v))
        converged = residual <= tol * max(1.0, sigma_est)
        if max(m, n) <= 64:
            exact = float(-beta * np.linalg.svd(G, compute_uv=False)[0])
        else:
            exact = float(-beta * (sigma_est + residual))
        delta = float(np.clip(achieved / exact, 0.0, 1.0)) if exact < 0 else 1.0
        return LmoResult(atom, achieved, accuracy="multiplicative",
                         accuracy_value=delta, converged=converged, residual=residual)
    raise TypeError("lmo_approx_spectral handles Spectrahedron and NuclearNormBall only")


def _gauge_lp(columns: np.ndarray, point: np.ndarray, residual_tol: float) -> float:
    """min sum(alpha) s.t. columns @ alpha = point, alpha >= 0, else +inf.

    Solved with the HiGHS LP solver (an active-set style method); a second
    pass allows a componentwise residual of ``residual_tol`` so points that
    are only float-noise away from the hull still get a finite value.
    """
    num = columns.shape[1]
    cost = np.ones(num)
    res = linprog(cost, A_eq=columns, b_eq=point, bounds=(0, None), method="highs")
    if res.status == 0:
        return float(res.fun)
    dim = point.shape[0]
    A_ub = np.vstack([columns, -columns])
    b_ub = np.concatenate([point + residual_tol, residual_tol - point])
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=(0, None), method="highs")
    if res.status == 0 and np.linalg.norm(columns @ res.x - point, np.inf) <= 2 * residual_tol:
        return float(res.fun)
    return math.inf


def atomic_norm(atom_set: AtomSet, point) -> float:
    """Gauge of the convex hull of the atoms at ``point`` (possibly +inf).

    Closed forms for the structured sets; finite sets solve the weighted
    cover LP over the (symmetrized, when flagged) atom list.
    """
    x = as_vector(point, atom_set.dimension)
    if isinstance(atom_set, SignedCoordinates):
        return float(np.abs(x).sum())
    if isinstance(atom_set, SimplexVertices):
        if np.min(x) < -1e-12:
            return math.inf
        return float(x.sum())
    if isinstance(atom_set, L2Ball):
        return float(np.linalg.norm(x) / atom_set.radius)
    if isinstance(atom_set, FiniteAtomSet):
        Z = atom_set.matrix.T
        if atom_set.symmetric:
            Z = np.hstack([Z, -Z])
        return _gauge_lp(Z, x, GAUGE_RESIDUAL_TOL)
    raise UnsupportedNormError(
        f"atomic norm not defined for {type(atom_set).__name__}; "
        "use trace/nuclear norms directly")


def dual_atomic_norm(atom_set: AtomSet, direction) -> float:
    """sup over atoms of <z, direction> (the support function of the set)."""
    if atom_set.symmetric:
        return -lmo_exact(atom_set, direction).inner_product
    d = atom_set._check(direction)
    return -lmo_exact(atom_set, -d).inner_product


def cone_augmented_lmo(atom_set: AtomSet, direction, iterate: AtomicCombination,
                       stationarity_tol: float = STATIONARITY_TOL,
                       iterate_norm: float | None = None) -> LmoResult | None:
    """LMO over the atoms augmented with the away-toward-origin direction.

    For a nonzero conic iterate theta the candidate -theta/||theta||_A
    competes with the best set atom; whichever has the smaller inner product
    wins. Returns ``None`` (stationary) when even the best candidate cannot
    descend: that certifies optimality over the cone.

    ``iterate_norm`` overrides the stored atomic-norm upper bound (the sum of
    active weights, valid when atoms have unit self-norm).
    """
    if iterate.domain != "conicHull":
        raise ValueError("cone_augmented_lmo needs a conicHull iterate")
    d = atom_set._check(direction)
    best = lmo_exact(atom_set, d)
    theta = iterate.point
    if float(np.linalg.norm(theta)) > 0.0:
        norm_a = iterate.total_weight() if iterate_norm is None else float(iterate_norm)
        if norm_a > 0.0:
            payload = -theta / norm_a
            ip = float(d @ payload)
            if ip < best.inner_product:
                best = LmoResult(Atom(payload), ip, origin_directed=True)
    if best.inner_product >= -stationarity_tol:
        return None
    return best


def estimate_mdw(atom_set: FiniteAtomSet, num_directions: int, seed: int) -> float:
    """Sampled lower-confidence estimate of the minimal directional width.

    Minimum over unit directions in lin(A) of the best atom alignment,
    estimated from uniform sphere samples plus 200 projected-subgradient
    refinement steps from the best sample. Diagnostic only.
    """
    Z = atom_set.matrix
    if atom_set.dimension > 32 or Z.shape[0] > 1000:
        raise ValueError("mdw estimator is limited to dim <= 32 and <= 1000 atoms")
    # Orthonormal basis of lin(A).
    _, s, Vt = np.linalg.svd(Z, full_matrices=False)
    rank = int(np.sum(s > 1e-12 * s[0]))
    basis = Vt[:rank]  # (rank, dim)

    def width(d: np.ndarray) -> float:
        return float(np.max(Z @ d) / np.linalg.norm(d))

    rng = make_rng(seed, 0xB1D)
    best_d = None
    best_val = math.inf
    for _ in range(int(num_directions)):
        g = rng.standard_normal(rank)
        d = basis.T @ g
        norm = np.linalg.norm(d)
        if norm == 0.0:
            continue
        val = width(d)
        if val < best_val:
            best_val, best_d = val, d / norm
    if best_d is None:
        raise ValueError("no usable sampled direction")
    # Local refinement: projected subgradient descent on the width.
    d = best_d
    projector = basis.T @ basis
    for t in range(200):
        ips = Z @ d
        z_star = Z[int(np.argmax(ips))]
        norm = np.linalg.norm(d)
        grad = z_star / norm - (float(z_star @ d) / norm ** 3) * d
        d = projector @ (d - 0.5 / (t + 10.0) * grad)
        norm = np.linalg.norm(d)
        if norm == 0.0:
            break
        d /= norm
        val = width(d)
        if val < best_val:
            best_val = val
    return best_val
