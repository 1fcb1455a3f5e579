"""Concrete objectives shared by the solvers, benchmarks, and tests."""

from __future__ import annotations

import numpy as np

from .core import Objective, as_vector


class QuadraticObjective(Objective):
    """f(x) = 1/2 x^T Q x + b^T x + c with symmetric PSD Q."""

    is_quadratic = True

    def __init__(self, Q: np.ndarray, b: np.ndarray | None = None, c: float = 0.0):
        Q = np.asarray(Q, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError("Q must be square")
        self.Q = 0.5 * (Q + Q.T)
        self.dimension = Q.shape[0]
        self.b = np.zeros(self.dimension) if b is None else as_vector(b, self.dimension)
        self.c = float(c)
        self.smoothness = float(max(np.linalg.eigvalsh(self.Q).max(), 0.0))

    def value(self, x):
        return float(0.5 * x @ (self.Q @ x) + self.b @ x + self.c)

    def gradient(self, x):
        return self.Q @ x + self.b

    def curvature_along(self, d):
        return float(d @ (self.Q @ d))


class LeastSquaresObjective(Objective):
    """f(x) = 1/2 ||A x - y||^2; A defaults to the identity."""

    is_quadratic = True

    def __init__(self, y: np.ndarray, A: np.ndarray | None = None):
        self.y = np.asarray(y, dtype=np.float64)
        self.A = None if A is None else np.asarray(A, dtype=np.float64)
        self.dimension = self.y.shape[0] if self.A is None else self.A.shape[1]
        if self.A is None:
            self.smoothness = 1.0
        else:
            self.smoothness = float(np.linalg.norm(self.A, 2) ** 2)

    def _residual(self, x):
        return (x - self.y) if self.A is None else (self.A @ x - self.y)

    def value(self, x):
        r = self._residual(x)
        return float(0.5 * r @ r)

    def gradient(self, x):
        r = self._residual(x)
        return r if self.A is None else self.A.T @ r

    def curvature_along(self, d):
        Ad = d if self.A is None else self.A @ d
        return float(Ad @ Ad)


class LinearObjective(Objective):
    """f(x) = <cost, x>."""

    is_quadratic = True  # exact line search degenerates gracefully (zero curvature)

    def __init__(self, cost: np.ndarray):
        self.cost = as_vector(cost)
        self.dimension = self.cost.shape[0]
        self.smoothness = 0.0

    def value(self, x):
        return float(self.cost @ x)

    def gradient(self, x):
        return self.cost.copy()

    def curvature_along(self, d):
        return 0.0


class CallableObjective(Objective):
    """Adapter wrapping plain value/gradient callables (tests, experiments)."""

    def __init__(self, dimension: int, value_fn, gradient_fn, smoothness: float | None = None):
        self.dimension = int(dimension)
        self._value = value_fn
        self._gradient = gradient_fn
        self.smoothness = smoothness

    def value(self, x):
        return float(self._value(x))

    def gradient(self, x):
        return np.asarray(self._gradient(x), dtype=np.float64)


class DeterministicStochastic(Objective):
    """Expose an objective's exact gradient through the stochastic interface.

    Useful as the degenerate no-noise case of the stochastic solvers.
    """

    has_stochastic_gradient = True

    def __init__(self, base: Objective):
        self.base = base
        self.dimension = base.dimension
        self.smoothness = base.smoothness
        self.is_quadratic = base.is_quadratic

    def value(self, x):
        return self.base.value(x)

    def gradient(self, x):
        return self.base.gradient(x)

    def stochastic_gradient(self, x, rng):
        return self.base.gradient(x)

    def curvature_along(self, d):
        return self.base.curvature_along(d)
