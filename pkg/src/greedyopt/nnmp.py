"""Conic-hull solvers: non-negative MP and its away, pairwise, and
fully-corrective variants, with nonnegative-weight bookkeeping and
atomic-norm tracking of the iterate."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import nnls as scipy_nnls

from .atoms import FiniteAtomSet, _gauge_lp, cone_augmented_lmo, lmo_exact
from .core import Atom, AtomicCombination, ConvergenceTrace, make_rng, payload_key
from .objectives import LeastSquaresObjective, Objective

GAUGE_TOL = 1e-8
EXACT_NORM_PERIOD = 25  # exact gauge re-solve cadence (bounds stored-sum drift)


class ConeIterate:
    """A conic-hull iterate plus atomic-norm tracking.

    ``atomic_norm_upper`` is the sum of active weights, which upper-bounds
    the true gauge whenever every atom has self-norm at most 1 (atoms are
    pre-normalized for cone use). ``atomic_norm_exact`` holds the most recent
    exact re-solve, when one succeeded.
    """

    def __init__(self, dimension: int):
        self.combination = AtomicCombination(dimension, "conicHull")
        self.atomic_norm_exact: float | None = None

    @property
    def point(self) -> np.ndarray:
        return self.combination.point

    @property
    def atomic_norm_upper(self) -> float:
        return self.combination.total_weight()

    def validate(self) -> None:
        self.combination.validate()
        if self.atomic_norm_exact is not None:
            if self.atomic_norm_exact > self.atomic_norm_upper + 1e-9:
                raise AssertionError("exact atomic norm exceeds the stored upper bound")


def iterate_atomic_norm(iterate: ConeIterate, mode: str = "stored") -> float:
    """Atomic norm of the iterate over its own active atoms.

    ``stored`` returns the weight sum; ``exact`` re-solves the minimal
    nonnegative cover (min sum alpha s.t. sum alpha z = theta). An exact
    solve whose residual exceeds tolerance falls back to the stored value.
    """
    if mode == "stored":
        return iterate.atomic_norm_upper
    if mode != "exact":
        raise ValueError(f"unknown atomic norm mode {mode!r}")
    combo = iterate.combination
    if not combo.atoms:
        return 0.0
    columns = np.column_stack([a.vector for a in combo.atoms])
    value = _gauge_lp(columns, combo.point, GAUGE_TOL)
    if math.isinf(value):
        return iterate.atomic_norm_upper
    iterate.atomic_norm_exact = value
    return value


def _origin_shrink(iterate: ConeIterate, gamma: float, norm_used: float) -> str:
    """Apply the away-toward-origin step: scale all weights, clipped at 0."""
    factor = 1.0 - gamma / norm_used
    if factor <= 0.0:
        iterate.combination.scale(0.0)
        iterate.combination.purge_zero_weights()
        return "drop"
    iterate.combination.scale(factor)
    return "away"


def run_nnmp(obj: Objective, atom_set: FiniteAtomSet, L: float, max_iter: int,
             tol: float = 1e-10) -> tuple[ConeIterate, ConvergenceTrace]:
    """Non-negative MP over cone(A), starting from the origin.

    The oracle is augmented with the away-toward-origin direction
    -theta/||theta||_A; picking it shrinks every active weight
    proportionally. Stops when neither candidate can descend (stationary,
    which certifies optimality over the cone).
    """
    iterate = ConeIterate(atom_set.dimension)
    trace = ConvergenceTrace()
    for k in range(max_iter):
        grad = obj.gradient(iterate.point)
        if k > 0 and k % EXACT_NORM_PERIOD == 0:
            iterate_atomic_norm(iterate, "exact")
        norm_used = iterate.atomic_norm_upper
        result = cone_augmented_lmo(atom_set, grad, iterate.combination,
                                    stationarity_tol=tol, iterate_norm=norm_used)
        if result is None and iterate.combination.atoms:
            # Stored norm may be loose; re-check against the exact gauge.
            norm_used = iterate_atomic_norm(iterate, "exact")
            result = cone_augmented_lmo(atom_set, grad, iterate.combination,
                                        stationarity_tol=tol, iterate_norm=norm_used)
        if result is None:
            trace.append(k, obj.value(iterate.point), step_kind="stationary")
            break
        gamma = -result.inner_product / (L * result.atom.norm_squared())
        if result.origin_directed:
            kind = _origin_shrink(iterate, gamma, norm_used)
        else:
            iterate.combination.add(result.atom, gamma)
            kind = "mp"
        iterate.combination.purge_zero_weights()
        trace.append(k, obj.value(iterate.point), step_kind=kind)
    return iterate, trace


def _away_index(combo: AtomicCombination, grad: np.ndarray) -> int:
    ips = np.array([atom.inner(grad) for atom in combo.atoms])
    return int(np.argmax(ips))


def _run_corrective_pair(obj: Objective, atom_set: FiniteAtomSet, L: float,
                         max_iter: int, tol: float,
                         pairwise: bool) -> tuple[ConeIterate, ConvergenceTrace]:
    iterate = ConeIterate(atom_set.dimension)
    combo = iterate.combination
    trace = ConvergenceTrace()
    for k in range(max_iter):
        grad = obj.gradient(iterate.point)
        z_res = lmo_exact(atom_set, grad)
        away_idx = _away_index(combo, grad) if combo.atoms else None
        if pairwise:
            same_slot = (away_idx is not None and
                         payload_key(z_res.atom.vector)
                         == payload_key(combo.atoms[away_idx].vector))
            origin_partner = (away_idx is not None
                              and combo.atoms[away_idx].inner(grad) <= 0.0)
            if away_idx is None or same_slot or origin_partner:
                # The zero atom sits in the dictionary, so when no active
                # atom ascends (or z is the away atom itself) the transfer
                # partner is the origin: a plain unconstrained atom step.
                direction = z_res.atom.vector
                gamma_max = math.inf
                away_idx = None
            else:
                direction = z_res.atom.vector - combo.atoms[away_idx].vector
                gamma_max = float(combo.weights[away_idx])
            ip = float(grad @ direction)
            take_away = away_idx is not None
        else:
            ip = z_res.inner_product
            take_away = False
            gamma_max = math.inf
            direction = z_res.atom.vector
            if away_idx is not None:
                away_ip = -combo.atoms[away_idx].inner(grad)
                if away_ip < ip:  # moving away from v descends more
                    ip = away_ip
                    direction = -combo.atoms[away_idx].vector
                    gamma_max = float(combo.weights[away_idx])
                    take_away = True
        norm_sq = float(direction @ direction)
        if ip >= -tol or norm_sq == 0.0:
            trace.append(k, obj.value(iterate.point), step_kind="stationary")
            break
        gamma_unclipped = -ip / (L * norm_sq)
        gamma = min(gamma_unclipped, gamma_max)
        good = gamma_unclipped < gamma_max
        clipped = not good
        if pairwise:
            if away_idx is None:
                combo.add(z_res.atom, gamma)
                kind = "mp"
            else:
                combo.add(z_res.atom, gamma)
                if clipped:
                    combo.set_weight(away_idx, 0.0)
                    kind = "drop"
                else:
                    combo.set_weight(away_idx, combo.weights[away_idx] - gamma)
                    kind = "pairwise"
        else:
            if take_away:
                if clipped:
                    combo.set_weight(away_idx, 0.0)
                    kind = "drop"
                else:
                    combo.set_weight(away_idx, combo.weights[away_idx] - gamma)
                    kind = "away"
            else:
                combo.add(z_res.atom, gamma)
                kind = "mp"
        combo.purge_zero_weights()
        trace.append(k, obj.value(iterate.point), step_kind=kind, good_step=good)
    return iterate, trace


def run_annmp(obj: Objective, atom_set: FiniteAtomSet, L: float, max_iter: int,
              tol: float = 1e-10) -> tuple[ConeIterate, ConvergenceTrace]:
    """Away-steps non-negative MP: the step direction is whichever of the
    oracle atom z and the negated heaviest-ascent active atom -v descends
    more; away steps clip at the weight currently on v (exact drop at 0)."""
    return _run_corrective_pair(obj, atom_set, L, max_iter, tol, pairwise=False)


def run_pwnnmp(obj: Objective, atom_set: FiniteAtomSet, L: float, max_iter: int,
               tol: float = 1e-10) -> tuple[ConeIterate, ConvergenceTrace]:
    """Pairwise non-negative MP: weight moves from the away atom v to the
    oracle atom z along z - v, capped by v's current weight."""
    return _run_corrective_pair(obj, atom_set, L, max_iter, tol, pairwise=True)


def _nonneg_inner(obj: Objective, combo: AtomicCombination, L: float,
                  norm_only: bool, inner_max_iter: int,
                  inner_tol: float) -> tuple[np.ndarray, float, bool]:
    """Projected gradient on nonnegative weights (clamp at zero).

    Warm-starts from the current weights; returns (weights, residual,
    converged) with the fixed-point residual of the projected step.
    """
    Z = np.column_stack([atom.vector for atom in combo.atoms])
    w = combo.weights.copy()
    gram_scale = float(np.linalg.norm(Z, 2) ** 2)
    if norm_only:
        target = combo.point - obj.gradient(combo.point) / L
        lipschitz = max(gram_scale, 1e-12)
        grad_fn = lambda wt: Z.T @ (Z @ wt - target)
    else:
        lipschitz = max(gram_scale * L, 1e-12)
        grad_fn = lambda wt: Z.T @ obj.gradient(Z @ wt)
    residual = math.inf
    for _ in range(inner_max_iter):
        g = grad_fn(w)
        w_next = np.maximum(w - g / lipschitz, 0.0)
        residual = float(np.max(np.abs(w_next - w)))
        w = w_next
        if residual <= inner_tol:
            return w, residual, True
    return w, residual, residual <= inner_tol


def run_fcnnmp(obj: Objective, atom_set: FiniteAtomSet, variant: str = "exact",
               inner_max_iter: int = 500, inner_tol: float = 1e-12,
               max_iter: int = 500, tol: float = 1e-10,
               L: float | None = None) -> tuple[ConeIterate, ConvergenceTrace]:
    """Fully-corrective non-negative MP.

    ``normCorrective`` projects theta - grad/L onto cone(S) in the Euclidean
    norm; ``exact`` minimizes f over cone(S) each outer iteration (no bad
    steps). Inner solves are projected gradient with the componentwise clamp
    at zero; a stalled solve is noted on the trace and the loop continues.
    """
    if variant not in ("normCorrective", "exact"):
        raise ValueError("variant must be 'normCorrective' or 'exact'")
    L = obj.smoothness if L is None else L
    if L is None or L <= 0:
        raise ValueError("need a positive smoothness bound L")
    iterate = ConeIterate(atom_set.dimension)
    combo = iterate.combination
    trace = ConvergenceTrace()
    norm_only = variant == "normCorrective"
    for k in range(max_iter):
        grad = obj.gradient(iterate.point)
        result = cone_augmented_lmo(atom_set, grad, combo, stationarity_tol=tol,
                                    iterate_norm=iterate.atomic_norm_upper or None)
        if result is None:
            trace.append(k, obj.value(iterate.point), step_kind="stationary")
            break
        z_res = lmo_exact(atom_set, grad)
        combo.add(z_res.atom, 0.0)
        weights, residual, converged = _nonneg_inner(
            obj, combo, L, norm_only, inner_max_iter, inner_tol)
        if not converged:
            trace.note(k, f"inner solver stalled at residual {residual:.3e}")
        for idx in range(len(combo.atoms)):
            combo.set_weight(idx, float(weights[idx]))
        combo.purge_zero_weights()
        trace.append(k, obj.value(iterate.point), step_kind="corrective",
                     good_step=True if variant == "exact" else None)
    return iterate, trace


def reference_cone_fstar(obj: Objective, atom_set: FiniteAtomSet,
                         max_iter: int = 2000, inner_max_iter: int = 2000,
                         tol: float = 1e-12) -> float:
    """Oracle optimum over cone(A): a long fully-corrective (exact) run."""
    iterate, trace = run_fcnnmp(obj, atom_set, variant="exact",
                                inner_max_iter=inner_max_iter, inner_tol=1e-15,
                                max_iter=max_iter, tol=tol)
    return obj.value(iterate.point)


def nnls_projection_oracle(atom_set: FiniteAtomSet, y: np.ndarray) -> tuple[np.ndarray, float]:
    """Independent oracle: exact nonnegative least-squares projection of y
    onto cone(A) via the active-set NNLS solver. Returns (point, objective).
    """
    coeffs, rnorm = scipy_nnls(atom_set.matrix.T, np.asarray(y, dtype=np.float64))
    point = atom_set.matrix.T @ coeffs
    return point, 0.5 * rnorm ** 2


def generate_cone_instance(dim: int = 50, num_atoms: int = 100, seed: int = 0,
                           fstar_iters: int = 2000) -> tuple[FiniteAtomSet, LeastSquaresObjective, float]:
    """Synthetic cone-projection instance: unit-norm atoms in the first
    orthant, a least-squares objective toward a target outside the cone, and
    the oracle optimum from a long fully-corrective reference run.

    The target hugs the cone's central direction (all-ones plus positive
    noise) so its projection needs a rich active set; a random cone of this
    size does not cover the whole orthant, so such targets still fall
    outside it.
    """
    rng = make_rng(seed, 0xC0E)
    Z = np.abs(rng.standard_normal((num_atoms, dim)))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    atom_set = FiniteAtomSet(Z)
    center = np.ones(dim) / math.sqrt(dim)
    y = None
    for _ in range(100):
        candidate = center + 0.1 * np.abs(rng.standard_normal(dim))
        _, best = nnls_projection_oracle(atom_set, candidate)
        if best > 1e-9:
            y = candidate
            break
        candidate[int(np.argmin(candidate))] *= -1.0  # nudge out of the orthant
        _, best = nnls_projection_oracle(atom_set, candidate)
        if best > 1e-9:
            y = candidate
            break
    if y is None:
        raise RuntimeError("could not sample a target outside the cone")
    obj = LeastSquaresObjective(y)
    fstar = reference_cone_fstar(obj, atom_set, max_iter=fstar_iters)
    return atom_set, obj, fstar
