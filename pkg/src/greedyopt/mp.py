"""Linear-span solvers: generalized MP, affine-invariant MP, steepest and
random coordinate pursuit, and their accelerated variants.

The accelerated methods maintain two coupled sequences whose schedule is
driven by the sampling geometry (the second-moment matrix of the sampling
distribution and the constants derived from it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .atoms import AtomSet, FiniteAtomSet, L2Ball, SignedCoordinates, atomic_norm, lmo_exact
from .core import (Atom, AtomicCombination, ConvergenceTrace, make_rng,
                   payload_key)
from .objectives import Objective


class DegenerateSamplingError(ValueError):
    """The sampling distribution cannot see all of lin(A)."""


@dataclass
class AffineCurvature:
    """Atomic-norm smoothness constant L_A plus how it was obtained.

    ``level_radius`` is a diagnostic estimate of the level-set radius in the
    atomic norm; no algorithm consumes it.
    """

    l_a: float
    method: str  # sampledSup | radiusBound
    safety_factor: float = 1.2
    level_radius: float | None = None

    def __post_init__(self):
        if self.l_a <= 0:
            raise ValueError("L_A must be positive")


@dataclass
class SamplingGeometry:
    """Distribution over a finite atom list and the derived geometry.

    ``ptilde`` is the exact second moment E[z z^T]; ``pinv`` its
    pseudo-inverse. ``nu`` and ``nu_prime`` bound the schedule of the
    accelerated solvers; they are exact for uniform coordinates and sampled
    estimates otherwise (``estimated`` says which).
    """

    atoms: np.ndarray
    weights: np.ndarray
    ptilde: np.ndarray
    pinv: np.ndarray
    nu: float
    nu_prime: float
    estimated: bool

    def sample_index(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.atoms.shape[0], p=self.weights))


def _uniform_coordinates(atoms: np.ndarray, weights: np.ndarray) -> bool:
    m, dim = atoms.shape
    if m != dim or not np.allclose(weights, 1.0 / m, atol=1e-15):
        return False
    return np.array_equal(atoms, np.eye(dim))


def _ratio_maximizer(ratio_fn, basis: np.ndarray, num_samples: int, seed: int) -> float:
    """max over unit directions in the span of ``basis`` rows of ``ratio_fn``,
    by sphere sampling plus local finite-difference ascent refinement."""
    rng = make_rng(seed, 0x7A71)
    rank = basis.shape[0]
    best_val, best_d = -math.inf, None
    for _ in range(num_samples):
        d = basis.T @ rng.standard_normal(rank)
        norm = np.linalg.norm(d)
        if norm == 0.0:
            continue
        d /= norm
        val = ratio_fn(d)
        if val > best_val:
            best_val, best_d = val, d
    d = best_d
    h = 1e-5
    for t in range(200):
        grad = np.zeros_like(d)
        base = ratio_fn(d)
        for j in range(d.shape[0]):
            probe = d.copy()
            probe[j] += h
            grad[j] = (ratio_fn(probe) - base) / h
        d = basis.T @ (basis @ (d + 0.2 / (t + 5.0) * grad))
        norm = np.linalg.norm(d)
        if norm == 0.0:
            break
        d /= norm
        best_val = max(best_val, ratio_fn(d))
    return best_val


def build_sampling_geometry(atoms, weights, num_samples: int = 2000,
                            seed: int = 0) -> SamplingGeometry:
    """Second-moment geometry of a sampling distribution over finite atoms.

    Raises ``DegenerateSamplingError`` when the distribution's second moment
    does not cover lin(A) (some direction would never be explored).
    """
    Z = np.asarray(atoms, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if Z.ndim != 2 or w.shape != (Z.shape[0],):
        raise ValueError("need (m, dim) atoms and m weights")
    if np.min(w) < 0 or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be a probability vector")
    ptilde = (Z * w[:, None]).T @ Z
    eigvals, eigvecs = np.linalg.eigh(ptilde)
    cutoff = 1e-10 * max(eigvals.max(), 0.0)
    kept = eigvals > cutoff
    inv = np.zeros_like(eigvals)
    inv[kept] = 1.0 / eigvals[kept]
    pinv = (eigvecs * inv) @ eigvecs.T
    # lin(A) must sit inside range(Ptilde), else delta-hat^2 = 0.
    projector = pinv @ ptilde
    for z in Z:
        if np.linalg.norm(z - projector @ z) > 1e-8 * max(1.0, np.linalg.norm(z)):
            raise DegenerateSamplingError("sampling second moment does not span lin(A)")
    if _uniform_coordinates(Z, w):
        n = Z.shape[0]
        return SamplingGeometry(Z, w, ptilde, pinv, nu=float(n), nu_prime=float(n),
                                estimated=False)
    # Estimated constants: maximize the defining ratios over sampled directions.
    _, s, Vt = np.linalg.svd(Z, full_matrices=False)
    basis = Vt[: int(np.sum(s > 1e-12 * s[0]))]
    p_quad = np.einsum("ij,jk,ik->i", Z, pinv, Z)  # z_i^T P z_i
    row_norm_sq = np.einsum("ij,ij->i", Z, Z)

    def nu_ratio(d):
        ips = Z @ d
        num = float(np.sum(w * ips ** 2 * p_quad))
        j = int(np.argmax(np.abs(ips)))
        if ips[j] == 0.0:
            return -math.inf
        return num * row_norm_sq[j] / ips[j] ** 2

    def nu_prime_ratio(d):
        ips_sq = (Z @ d) ** 2
        denom = float(np.sum(w * ips_sq / row_norm_sq))
        if denom == 0.0:
            return -math.inf
        return float(np.sum(w * ips_sq * p_quad)) / denom

    nu = _ratio_maximizer(nu_ratio, basis, num_samples, seed)
    nu_prime = _ratio_maximizer(nu_prime_ratio, basis, num_samples, seed + 1)
    return SamplingGeometry(Z, w, ptilde, pinv, nu=float(nu), nu_prime=float(nu_prime),
                            estimated=True)


def _as_start(start, dimension: int) -> AtomicCombination:
    if start is None:
        return AtomicCombination(dimension, "linearSpan")
    if isinstance(start, AtomicCombination):
        return start.copy()
    vec = np.asarray(start, dtype=np.float64)
    combo = AtomicCombination(dimension, "linearSpan")
    if np.any(vec != 0.0):
        combo.add(Atom(vec), 1.0)
    return combo


def run_mp(obj: Objective, atom_set: AtomSet, L: float, max_iter: int,
           start=None) -> tuple[AtomicCombination, ConvergenceTrace]:
    """Generalized matching pursuit: theta <- theta - <grad, z> z / (L ||z||^2).

    With a least-squares objective this is classical MP; over signed
    coordinates it is steepest coordinate descent.
    """
    theta = _as_start(start, atom_set.dimension)
    trace = ConvergenceTrace()
    for k in range(max_iter):
        grad = obj.gradient(theta.point)
        result = lmo_exact(atom_set, grad)
        if result.inner_product >= 0.0:
            trace.append(k, obj.value(theta.point), step_kind="stationary")
            break
        gamma = -result.inner_product / (L * result.atom.norm_squared())
        theta.add(result.atom, gamma)
        trace.append(k, obj.value(theta.point), step_kind="mp")
    return theta, trace


def run_affine_mp(obj: Objective, atom_set: AtomSet, curvature: AffineCurvature,
                  max_iter: int, start=None) -> tuple[AtomicCombination, ConvergenceTrace]:
    """Affine-invariant MP: the step divides by L_A instead of L ||z||^2.

    With atoms of unit atomic norm the two coincide; under an invertible
    reparameterization the iterate sequences map onto each other.
    """
    theta = _as_start(start, atom_set.dimension)
    trace = ConvergenceTrace()
    for k in range(max_iter):
        grad = obj.gradient(theta.point)
        result = lmo_exact(atom_set, grad)
        if result.inner_product >= 0.0:
            trace.append(k, obj.value(theta.point), step_kind="stationary")
            break
        gamma = -result.inner_product / curvature.l_a
        theta.add(result.atom, gamma)
        trace.append(k, obj.value(theta.point), step_kind="mp")
    return theta, trace


def run_steepest_cd(obj: Objective, dim: int, L: float, max_iter: int,
                    start=None) -> tuple[AtomicCombination, ConvergenceTrace]:
    """Steepest coordinate descent: update the coordinate with the largest
    absolute gradient entry by -grad_i / L.

    Coordinate selection follows the signed-coordinate LMO ordering
    (+e_0..+e_{n-1}, -e_0..-e_{n-1}, lowest index on ties) so the iterate
    sequence matches run_mp over SignedCoordinates exactly.
    """
    theta = _as_start(start, dim)
    trace = ConvergenceTrace()
    for k in range(max_iter):
        grad = obj.gradient(theta.point)
        stacked = np.concatenate([grad, -grad])
        idx = int(np.argmin(stacked))
        if stacked[idx] >= 0.0:
            trace.append(k, obj.value(theta.point), step_kind="stationary")
            break
        i = idx if idx < dim else idx - dim
        sign = 1.0 if idx < dim else -1.0
        payload = np.zeros(dim)
        payload[i] = sign
        gamma = -stacked[idx] / L
        theta.add(Atom(payload), gamma)
        trace.append(k, obj.value(theta.point), step_kind="mp")
    return theta, trace


def run_random_pursuit(obj: Objective, geometry: SamplingGeometry, L: float,
                       max_iter: int, seed: int,
                       start=None) -> tuple[AtomicCombination, ConvergenceTrace]:
    """MP with the oracle replaced by sampling from the given distribution.

    The step optimizes the quadratic bound along the sampled atom, so the
    sign of the alignment is handled automatically and every step descends.
    """
    rng = make_rng(seed, 0x5A3)
    dim = geometry.atoms.shape[1]
    theta = _as_start(start, dim)
    trace = ConvergenceTrace()
    for k in range(max_iter):
        grad = obj.gradient(theta.point)
        z = geometry.atoms[geometry.sample_index(rng)]
        ip = float(grad @ z)
        gamma = -ip / (L * float(z @ z))
        if gamma != 0.0:
            theta.add(Atom(z), gamma)
        trace.append(k, obj.value(theta.point), step_kind="mp")
    return theta, trace


def estimate_curvature_LA(obj: Objective, atom_set: AtomSet, num_segments: int,
                          seed: int, safety_factor: float = 1.2) -> AffineCurvature:
    """Estimate the atomic-norm smoothness constant L_A.

    Samples secants 2 [f(x + g z) - f(x) - g <grad f(x), z>] / g^2 along
    unit-atomic-norm atoms and takes the max, inflated by ``safety_factor``;
    when the objective declares a smoothness bound L, the L * radius^2
    fallback is computed too and the smaller of the two wins.
    """
    rng = make_rng(seed, 0x1A)
    dim = atom_set.dimension
    if isinstance(atom_set, FiniteAtomSet):
        gauges = np.array([atomic_norm(atom_set, z) for z in atom_set.matrix])
        unit_atoms = atom_set.matrix / gauges[:, None]
        _, s, Vt = np.linalg.svd(atom_set.matrix, full_matrices=False)
        basis = Vt[: int(np.sum(s > 1e-12 * s[0]))]
    elif isinstance(atom_set, SignedCoordinates):
        unit_atoms = np.vstack([np.eye(dim), -np.eye(dim)])
        basis = np.eye(dim)
    elif isinstance(atom_set, L2Ball):
        unit_atoms = None  # sampled fresh per segment
        basis = np.eye(dim)
    else:
        raise ValueError(f"curvature sampling unsupported for {type(atom_set).__name__}")
    sup = 0.0
    for _ in range(int(num_segments)):
        x = basis.T @ rng.standard_normal(basis.shape[0])
        if unit_atoms is None:
            z = rng.standard_normal(dim)
            z *= atom_set.radius / np.linalg.norm(z)
        else:
            z = unit_atoms[rng.integers(unit_atoms.shape[0])]
        g = rng.uniform(1e-2, 1.0)
        secant = 2.0 * (obj.value(x + g * z) - obj.value(x)
                        - g * float(obj.gradient(x) @ z)) / (g * g)
        sup = max(sup, secant)
    sampled = sup * safety_factor
    if obj.smoothness is not None and obj.smoothness > 0:
        if isinstance(atom_set, SignedCoordinates):
            radius = 1.0
        elif isinstance(atom_set, L2Ball):
            radius = atom_set.radius
        else:
            radius = float(np.max(np.linalg.norm(unit_atoms, axis=1)))
        bound = obj.smoothness * radius * radius
        if bound < sampled or sampled <= 0.0:
            return AffineCurvature(bound, "radiusBound", safety_factor)
    return AffineCurvature(sampled, "sampledSup", safety_factor)


def estimate_level_radius(obj: Objective, atom_set: AtomSet, theta_star,
                          theta0, num_samples: int, seed: int) -> float:
    """Diagnostic sampled estimate of the level-set radius in the atomic norm
    (max ||theta - theta*||_A over f(theta) <= f(theta0)). Not used by any
    solver."""
    rng = make_rng(seed, 0xAD)
    level = obj.value(np.asarray(theta0, dtype=np.float64))
    best = 0.0
    theta_star = np.asarray(theta_star, dtype=np.float64)
    for _ in range(num_samples):
        probe = theta_star + rng.standard_normal(atom_set.dimension)
        # walk toward theta* until inside the level set
        for _ in range(60):
            if obj.value(probe) <= level:
                best = max(best, atomic_norm(atom_set, probe - theta_star))
                break
            probe = theta_star + 0.7 * (probe - theta_star)
    return best


def _positive_root(beta: float, l_nu: float) -> float:
    """Positive root of alpha^2 L_nu - alpha - beta = 0."""
    return (1.0 + math.sqrt(1.0 + 4.0 * beta * l_nu)) / (2.0 * l_nu)


def _rep_lookup(geometry: SamplingGeometry) -> dict[bytes, tuple[int, float]]:
    table: dict[bytes, tuple[int, float]] = {}
    for i, z in enumerate(geometry.atoms):
        table[payload_key(z)] = (i, 1.0)
        table[payload_key(-z)] = (i, -1.0)
    return table


def _accelerated_loop(obj: Objective, atom_set: AtomSet | None,
                      geometry: SamplingGeometry, L: float, max_iter: int,
                      seed: int, start, nu: float | None,
                      greedy_theta: bool) -> tuple[AtomicCombination, ConvergenceTrace]:
    if nu is None:
        scale = geometry.nu if greedy_theta else geometry.nu_prime
        # Sampled constants get a 1.5 safety margin; overestimating nu only
        # slows the schedule, never breaks it.
        nu = scale * (1.5 if geometry.estimated else 1.0)
    l_nu = L * nu
    if l_nu <= 0:
        raise ValueError("L * nu must be positive")
    rng = make_rng(seed, 0xACC)
    atoms = geometry.atoms
    m, dim = atoms.shape
    reps = _rep_lookup(geometry)
    start_vec = np.zeros(dim) if start is None else np.asarray(start, dtype=np.float64)
    theta_w = np.zeros(m)
    v_w = np.zeros(m)
    theta_pt = start_vec.copy()
    v_pt = start_vec.copy()
    beta = 0.0
    trace = ConvergenceTrace()
    for k in range(max_iter):
        alpha = _positive_root(beta, l_nu)
        beta += alpha
        tau = alpha / beta
        y_pt = (1.0 - tau) * theta_pt + tau * v_pt
        y_w = (1.0 - tau) * theta_w + tau * v_w
        grad = obj.gradient(y_pt)
        idx_sample = geometry.sample_index(rng)
        if greedy_theta:
            result = lmo_exact(atom_set, grad)
            hit = reps.get(payload_key(result.atom.vector))
            if hit is None:
                raise DegenerateSamplingError(
                    "LMO atom is not among the sampling representatives")
            j, sign = hit
            ip_theta = result.inner_product
            z_theta = result.atom.vector
            j_theta, sign_theta = j, sign
        else:
            j_theta, sign_theta = idx_sample, 1.0
            z_theta = atoms[idx_sample]
            ip_theta = float(grad @ z_theta)
        gamma = -ip_theta / (L * float(z_theta @ z_theta))
        theta_pt = y_pt + gamma * z_theta
        theta_w = y_w.copy()
        theta_w[j_theta] += gamma * sign_theta
        z_v = atoms[idx_sample]
        coeff = -alpha * float(grad @ z_v)
        v_pt = v_pt + coeff * z_v
        v_w[idx_sample] += coeff
        trace.append(k, obj.value(theta_pt), step_kind="mp")
    combo = AtomicCombination(dim, "linearSpan")
    if np.any(start_vec != 0.0):
        combo.add(Atom(start_vec), 1.0)
    for j in range(m):
        if theta_w[j] != 0.0:
            combo.add(Atom(atoms[j]), float(theta_w[j]))
    return combo, trace


def run_accelerated_mp(obj: Objective, atom_set: AtomSet, geometry: SamplingGeometry,
                       L: float, max_iter: int, seed: int, start=None,
                       nu: float | None = None) -> tuple[AtomicCombination, ConvergenceTrace]:
    """Accelerated MP: greedy LMO atom for the primal sequence, a sampled
    atom for the estimate sequence, coupled through the alpha/beta/tau
    schedule (positive root of alpha^2 L nu = beta + alpha)."""
    return _accelerated_loop(obj, atom_set, geometry, L, max_iter, seed, start,
                             nu, greedy_theta=True)


def run_accelerated_random_pursuit(obj: Objective, geometry: SamplingGeometry,
                                   L: float, max_iter: int, seed: int, start=None,
                                   nu: float | None = None) -> tuple[AtomicCombination, ConvergenceTrace]:
    """Accelerated random pursuit: both sequences move along the same sampled
    atom each iteration."""
    return _accelerated_loop(obj, None, geometry, L, max_iter, seed, start,
                             nu, greedy_theta=False)
