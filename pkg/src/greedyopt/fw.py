"""Convex-hull solvers: vanilla FW variants, away-step, pairwise, and
fully-corrective, plus the duality-gap certificate and simplex projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .atoms import AtomSet, LmoResult, Spectrahedron, NuclearNormBall, lmo_exact, lmo_approx_spectral
from .core import (Atom, AtomicCombination, ConvergenceTrace, fixed_fw_step,
                   step_on_upper_bound)
from .objectives import Objective

FW_VARIANTS = ("fixedStep", "lineSearch", "clippedDiamStep", "clippedDirStep")
CORRECTIVE_VARIANTS = ("fullyCorrectiveNorm", "fullyCorrectiveExact")


class InfeasibleStartError(ValueError):
    """The starting combination violates the convex-hull invariants."""


@dataclass
class FwConfig:
    """Knobs shared by the convex-hull solvers.

    ``lmo_delta`` declares the multiplicative accuracy of the oracle in use
    (1.0 = exact); gap-based stopping divides the measured gap by it so the
    certificate stays an upper bound. Corrective variants use the inner
    projected-gradient settings.
    """

    variant: str = "lineSearch"
    max_iter: int = 1000
    gap_tol: float = 0.0
    lmo_delta: float = 1.0
    inner_max_iter: int = 500
    inner_tol: float = 1e-10
    diameter: float | None = None
    max_power_iters: int = 200

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.gap_tol < 0:
            raise ValueError("gap_tol must be >= 0")
        if not 0.0 < self.lmo_delta <= 1.0:
            raise ValueError("lmo_delta must be in (0, 1]")


def _lmo(atom_set: AtomSet, direction: np.ndarray, config: FwConfig) -> LmoResult:
    if isinstance(atom_set, (Spectrahedron, NuclearNormBall)):
        return lmo_approx_spectral(atom_set, direction, max_power_iters=config.max_power_iters)
    return lmo_exact(atom_set, direction)


def duality_gap(obj: Objective, atom_set: AtomSet, point: np.ndarray,
                gradient: np.ndarray | None = None) -> float:
    """FW gap g(theta) = <theta - s, grad f(theta)> with s the LMO atom.

    For convex f this upper-bounds the primal error. With a multiplicative
    delta-accurate oracle, the returned value divided by delta is still an
    upper bound.
    """
    grad = obj.gradient(point) if gradient is None else gradient
    result = lmo_exact(atom_set, grad)
    return float(grad @ point) - result.inner_product


def project_simplex(w) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = 1} (sort and threshold)."""
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ValueError("cannot project non-finite weights")
    u = np.sort(w)[::-1]
    cumulative = np.cumsum(u) - 1.0
    indices = np.arange(1, w.size + 1)
    rho = int(np.nonzero(u * indices > cumulative)[0][-1])
    tau = cumulative[rho] / (rho + 1.0)
    return np.maximum(w - tau, 0.0)


def _check_convex_start(start: AtomicCombination) -> None:
    if start.domain != "convexHull":
        raise InfeasibleStartError("starting combination must live in a convex hull")
    try:
        start.validate()
    except AssertionError as exc:
        raise InfeasibleStartError(str(exc)) from exc


def _step_size(obj: Objective, grad: np.ndarray, direction: np.ndarray,
               gamma_max: float, config: FwConfig, k: int) -> float:
    """Step size on [0, gamma_max] for the configured variant."""
    variant = config.variant
    if variant == "fixedStep":
        return min(fixed_fw_step(k), gamma_max)
    if variant == "clippedDiamStep":
        diam = config.diameter
        if diam is None:
            raise ValueError("clippedDiamStep needs config.diameter")
        L = obj.smoothness
        gamma = float(-(grad @ direction)) / (diam * diam * L)
        return min(max(gamma, 0.0), gamma_max)
    if variant in ("lineSearch", "clippedDirStep"):
        if variant == "lineSearch" and obj.is_quadratic:
            curv = obj.curvature_along(direction)
            if curv > 0.0:
                gamma = float(-(grad @ direction)) / curv
                return min(max(gamma, 0.0), gamma_max)
            # zero curvature: objective is linear along d
            return gamma_max if float(grad @ direction) < 0 else 0.0
        return step_on_upper_bound(grad, direction, obj.smoothness, (0.0, gamma_max))
    raise ValueError(f"unknown FW variant {variant!r}")


def run_fw(obj: Objective, atom_set: AtomSet, config: FwConfig,
           start: AtomicCombination) -> tuple[AtomicCombination, ConvergenceTrace]:
    """Vanilla Frank-Wolfe with the configured step rule.

    Iterates theta <- theta + gamma (z - theta), staying inside conv(A);
    every iteration logs the duality gap and stops once gap / lmo_delta
    drops to ``gap_tol``.
    """
    if config.variant not in FW_VARIANTS:
        raise ValueError(f"run_fw handles {FW_VARIANTS}, not {config.variant!r}")
    _check_convex_start(start)
    theta = start.copy()
    trace = ConvergenceTrace()
    for k in range(config.max_iter):
        grad = obj.gradient(theta.point)
        result = _lmo(atom_set, grad, config)
        gap = float(grad @ theta.point) - result.inner_product
        if gap / config.lmo_delta <= config.gap_tol:
            trace.append(k, obj.value(theta.point), gap=gap, step_kind="stationary")
            break
        trace.append(k, obj.value(theta.point), gap=gap, step_kind="fw")
        direction = result.atom.vector - theta.point
        gamma = _step_size(obj, grad, direction, 1.0, config, k)
        theta.scale(1.0 - gamma)
        theta.add(result.atom, gamma)
        theta.purge_zero_weights()
    return theta, trace


def _away_atom(theta: AtomicCombination, grad: np.ndarray) -> tuple[int, float]:
    """Index and inner product of the active atom most aligned with grad."""
    ips = np.array([atom.inner(grad) for atom in theta.atoms])
    idx = int(np.argmax(ips))
    return idx, float(ips[idx])


def run_away_fw(obj: Objective, atom_set: AtomSet, config: FwConfig,
                start: AtomicCombination) -> tuple[AtomicCombination, ConvergenceTrace]:
    """Away-step Frank-Wolfe over the maintained active set.

    Chooses the FW direction when its aligned descent is at least the away
    direction's (ties go to FW); away steps cap at gamma_max =
    alpha_v / (1 - alpha_v) and clipping drops the away atom exactly.
    """
    _check_convex_start(start)
    theta = start.copy()
    trace = ConvergenceTrace()
    for k in range(config.max_iter):
        grad = obj.gradient(theta.point)
        result = _lmo(atom_set, grad, config)
        gap = float(grad @ theta.point) - result.inner_product
        if gap / config.lmo_delta <= config.gap_tol:
            trace.append(k, obj.value(theta.point), gap=gap, step_kind="stationary")
            break
        d_fw = result.atom.vector - theta.point
        away_idx, away_ip = _away_atom(theta, grad)
        d_away = theta.point - theta.atoms[away_idx].vector
        fw_score = float(-(grad @ d_fw))
        away_score = float(-(grad @ d_away))
        # Ties go to the FW direction; a degenerate (zero) away direction too.
        take_fw = fw_score >= away_score or float(d_away @ d_away) == 0.0
        if take_fw:
            gamma = _step_size(obj, grad, d_fw, 1.0, config, k)
            step_kind = "fw"
        else:
            alpha_v = theta.weights[away_idx]
            gamma_max = alpha_v / (1.0 - alpha_v) if alpha_v < 1.0 else np.inf
            gamma = _step_size(obj, grad, d_away, min(gamma_max, 1e12), config, k)
            step_kind = "drop" if gamma >= gamma_max else "away"
        trace.append(k, obj.value(theta.point), gap=gap, step_kind=step_kind)
        if take_fw:
            theta.scale(1.0 - gamma)
            theta.add(result.atom, gamma)
        else:
            theta.scale(1.0 + gamma)
            if step_kind == "drop":
                theta.set_weight(away_idx, 0.0)
            else:
                # After scaling the away weight is (1+gamma) alpha_v; the
                # update theta + gamma (theta - v) leaves it (1+gamma) alpha_v - gamma.
                theta.set_weight(away_idx, theta.weights[away_idx] - gamma)
        theta.purge_zero_weights()
    return theta, trace


def run_pairwise_fw(obj: Objective, atom_set: AtomSet, config: FwConfig,
                    start: AtomicCombination) -> tuple[AtomicCombination, ConvergenceTrace]:
    """Pairwise Frank-Wolfe: move weight from the away atom to the FW atom.

    Direction z - v with gamma_max = alpha_v; total weight is conserved at 1
    including clipped steps, which zero the away atom's weight exactly.
    """
    _check_convex_start(start)
    theta = start.copy()
    trace = ConvergenceTrace()
    for k in range(config.max_iter):
        grad = obj.gradient(theta.point)
        result = _lmo(atom_set, grad, config)
        gap = float(grad @ theta.point) - result.inner_product
        if gap / config.lmo_delta <= config.gap_tol:
            trace.append(k, obj.value(theta.point), gap=gap, step_kind="stationary")
            break
        away_idx, _ = _away_atom(theta, grad)
        gamma_max = float(theta.weights[away_idx])
        direction = result.atom.vector - theta.atoms[away_idx].vector
        if float(direction @ direction) == 0.0:
            trace.append(k, obj.value(theta.point), gap=gap, step_kind="stationary")
            break
        gamma = _step_size(obj, grad, direction, gamma_max, config, k)
        clipped = gamma >= gamma_max
        trace.append(k, obj.value(theta.point), gap=gap,
                     step_kind="drop" if clipped else "pairwise")
        away_atom_idx = away_idx
        if clipped:
            gamma = gamma_max
        new_idx = theta.add(result.atom, gamma)
        if new_idx == away_atom_idx:
            # LMO returned the away atom itself: net step is zero.
            theta.set_weight(away_atom_idx, theta.weights[away_atom_idx] - gamma)
            continue
        if clipped:
            theta.set_weight(away_atom_idx, 0.0)
        else:
            theta.set_weight(away_atom_idx, theta.weights[away_atom_idx] - gamma)
        theta.purge_zero_weights()
    return theta, trace


def _weight_space_lipschitz(Z: np.ndarray, scale: float = 1.0) -> float:
    """lambda_max of Z^T Z (times ``scale``) by power iteration."""
    m = Z.shape[1]
    v = np.full(m, 1.0 / np.sqrt(m))
    lam = 1.0
    for _ in range(100):
        w = Z.T @ (Z @ v)
        lam_new = float(v @ w)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return max(scale, 1e-12)
        v = w / norm
        if abs(lam_new - lam) <= 1e-12 * max(1.0, abs(lam_new)):
            lam = lam_new
            break
        lam = lam_new
    return max(lam * scale, 1e-12)


class InnerSolverStalled(RuntimeWarning):
    """Inner corrective solve hit its cap; outer loop continues."""


def _corrective_inner(obj: Objective, theta: AtomicCombination, config: FwConfig,
                      norm_only: bool) -> tuple[np.ndarray, float, bool]:
    """Reoptimize the active weights by projected gradient on the simplex.

    ``norm_only`` minimizes ||Z w - (theta - grad/L)||^2 (norm-corrective);
    otherwise f(Z w) directly. Returns (weights, inner_gap, converged).
    """
    Z = np.column_stack([atom.vector for atom in theta.atoms])
    w = theta.weights.copy()
    s = w.sum()
    w = w / s if s > 0 else np.full(w.size, 1.0 / w.size)
    if norm_only:
        target = theta.point - obj.gradient(theta.point) / obj.smoothness
        lipschitz = _weight_space_lipschitz(Z)
        grad_fn = lambda wt: Z.T @ (Z @ wt - target)
    else:
        lipschitz = _weight_space_lipschitz(Z, scale=max(obj.smoothness, 1e-12))
        grad_fn = lambda wt: Z.T @ obj.gradient(Z @ wt)
    inner_gap = np.inf
    for _ in range(config.inner_max_iter):
        g = grad_fn(w)
        # FW gap of the weight problem over the simplex: certifies optimality.
        inner_gap = float(w @ g - g.min())
        if inner_gap <= config.inner_tol:
            return w, inner_gap, True
        w = project_simplex(w - g / lipschitz)
    return w, inner_gap, inner_gap <= config.inner_tol


def run_fully_corrective_fw(obj: Objective, atom_set: AtomSet, config: FwConfig,
                            start: AtomicCombination) -> tuple[AtomicCombination, ConvergenceTrace]:
    """Fully-corrective FW: add the LMO atom, then reoptimize all weights.

    ``fullyCorrectiveNorm`` projects theta - grad/L onto conv(S) in the
    Euclidean norm; ``fullyCorrectiveExact`` minimizes f over conv(S). A
    stalled inner solve is recorded on the trace and the outer loop goes on.
    """
    if config.variant not in CORRECTIVE_VARIANTS:
        raise ValueError(f"corrective solver needs variant in {CORRECTIVE_VARIANTS}")
    _check_convex_start(start)
    norm_only = config.variant == "fullyCorrectiveNorm"
    theta = start.copy()
    trace = ConvergenceTrace()
    for k in range(config.max_iter):
        grad = obj.gradient(theta.point)
        result = _lmo(atom_set, grad, config)
        gap = float(grad @ theta.point) - result.inner_product
        if gap / config.lmo_delta <= config.gap_tol:
            trace.append(k, obj.value(theta.point), gap=gap, step_kind="stationary")
            break
        trace.append(k, obj.value(theta.point), gap=gap, step_kind="corrective")
        theta.add(result.atom, 0.0)
        weights, inner_gap, converged = _corrective_inner(obj, theta, config, norm_only)
        if not converged:
            trace.note(k, f"inner solver stalled at gap {inner_gap:.3e}")
        for idx in range(len(theta.atoms)):
            theta.set_weight(idx, weights[idx])
        theta.purge_zero_weights()
    return theta, trace


def start_from_vertex(atom_set: AtomSet, config: FwConfig | None = None) -> AtomicCombination:
    """Feasible convex-hull start: the LMO atom at a zero query."""
    config = config or FwConfig()
    result = _lmo(atom_set, np.zeros(atom_set.dimension), config)
    return AtomicCombination.from_atom(result.atom, "convexHull")
