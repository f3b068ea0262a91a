"""
Flow maps X_t of vector fields, their Jacobians from the variational
equation dJ/dt = grad b(X) J, and the density rho_t = 1/det(grad X_t)(X_{-t}).
All operations accept a single point (d,) or a batch (..., d).
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

import settings
from errors import ConfigError, IntegrationError
from fields import Box, FD_MIN_STEP, FD_REL_STEP, VectorField, divergence, estimate_divergence_sup

logger = logging.getLogger(__name__)

SCHEMES = ("rk4", "rk2")


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step integrator settings"""

    dt: float = 1e-3
    scheme: str = "rk4"
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"Integrator step must be positive, got dt={self.dt}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"Unknown scheme '{self.scheme}', expected one of {SCHEMES}")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be at least 1")

    @classmethod
    def default(cls, **overrides) -> "IntegratorConfig":
        """Defaults from the environment (GEOTRANSPORT_DT, ...), explicit overrides win"""
        values = {"dt": settings.DEFAULT_DT, "scheme": settings.DEFAULT_SCHEME, "max_steps": settings.DEFAULT_MAX_STEPS}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def steps_for(self, t: float) -> int:
        n = max(1, math.ceil(abs(t) / self.dt - 1e-9))
        if n > self.max_steps:
            raise IntegrationError(
                f"Step budget exceeded: |t|/dt = {abs(t) / self.dt:.0f} > max_steps = {self.max_steps}",
                reason="step_budget_exceeded",
            )
        return n


@dataclass(frozen=True)
class FlowSample:
    """
    Result of integrating the flow from x0 over time t.

    endpoint = X_t(x0), jacobian = grad X_t(x0), det = det(jacobian),
    density = 1/det, which is rho(t, endpoint).
    """

    x0: np.ndarray
    t: float
    endpoint: np.ndarray
    jacobian: np.ndarray
    det: np.ndarray
    density: np.ndarray


def _check_finite(state: np.ndarray, step: int, t: float) -> None:
    if not np.all(np.isfinite(state)):
        raise IntegrationError(f"Non-finite flow state at step {step} (time {t:.6g})", reason="non_finite_state")


def _augmented_rhs(b: VectorField, t: float, X: np.ndarray, J: np.ndarray):
    return b.evaluate(t, X), np.einsum("...ij,...jk->...ik", b.jacobian(t, X), J)


def _step_augmented(b, scheme, t, X, J, h):
    if scheme == "rk2":
        k1x, k1j = _augmented_rhs(b, t, X, J)
        k2x, k2j = _augmented_rhs(b, t + 0.5 * h, X + 0.5 * h * k1x, J + 0.5 * h * k1j)
        return X + h * k2x, J + h * k2j
    h2 = 0.5 * h
    k1x, k1j = _augmented_rhs(b, t, X, J)
    k2x, k2j = _augmented_rhs(b, t + h2, X + h2 * k1x, J + h2 * k1j)
    k3x, k3j = _augmented_rhs(b, t + h2, X + h2 * k2x, J + h2 * k2j)
    k4x, k4j = _augmented_rhs(b, t + h, X + h * k3x, J + h * k3j)
    return (
        X + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        J + h / 6.0 * (k1j + 2.0 * k2j + 2.0 * k3j + k4j),
    )


def _step_position(b, scheme, t, X, h):
    if scheme == "rk2":
        k1 = b.evaluate(t, X)
        return X + h * b.evaluate(t + 0.5 * h, X + 0.5 * h * k1)
    h2 = 0.5 * h
    k1 = b.evaluate(t, X)
    k2 = b.evaluate(t + h2, X + h2 * k1)
    k3 = b.evaluate(t + h2, X + h2 * k2)
    k4 = b.evaluate(t + h, X + h * k3)
    return X + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def advance(b: VectorField, t: float, x0, cfg: Optional[IntegratorConfig] = None, t0: float = 0.0) -> FlowSample:
    """
    Integrate position and Jacobian jointly from time t0 to t0 + t.

    Args:
        b: Velocity field (autonomous or time-dependent)
        t: Signed duration; negative t integrates backward with a negated step
        x0: Start point(s), shape (d,) or (..., d)
        cfg: Integrator settings (defaults from the environment)
        t0: Start time, only relevant for time-dependent fields

    Returns:
        FlowSample with endpoint, Jacobian, determinant and density 1/det

    Raises:
        IntegrationError: step budget exceeded or non-finite state
    """
    cfg = cfg or IntegratorConfig.default()
    X = b._check(x0).copy()
    J = np.broadcast_to(np.eye(b.dim), X.shape + (b.dim,)).copy()
    if t != 0.0:
        n = cfg.steps_for(t)
        h = t / n
        time = t0
        for step in range(n):
            X, J = _step_augmented(b, cfg.scheme, time, X, J, h)
            time = t0 + (step + 1) * h
            _check_finite(X, step, time)
            _check_finite(J, step, time)
    det = np.linalg.det(J)
    return FlowSample(
        x0=np.asarray(x0, dtype=float),
        t=float(t),
        endpoint=X,
        jacobian=J,
        det=det,
        density=1.0 / det,
    )


def flow_map(b: VectorField, t: float, x, cfg: Optional[IntegratorConfig] = None, t0: float = 0.0) -> np.ndarray:
    """Positions-only X_t(x), same stepping as advance"""
    cfg = cfg or IntegratorConfig.default()
    X = b._check(x).copy()
    if t == 0.0:
        return X
    n = cfg.steps_for(t)
    h = t / n
    for step in range(n):
        X = _step_position(b, cfg.scheme, t0 + step * h, X, h)
        _check_finite(X, step, t0 + (step + 1) * h)
    return X


def density_at(b: VectorField, t: float, x, cfg: Optional[IntegratorConfig] = None) -> np.ndarray:
    """
    Density rho(t, x) of (X_t)#Lebesgue.

    Backtracks x0 = X_{-t}(x), then integrates forward with the Jacobian and
    returns 1/det(grad X_t(x0)).
    """
    if t == 0.0:
        x = b._check(x)
        return np.ones(x.shape[:-1])
    x0 = flow_map(b, -t, x, cfg, t0=t)
    return advance(b, t, x0, cfg).density


def semigroup_defect(b: VectorField, t: float, s: float, points, cfg: Optional[IntegratorConfig] = None) -> float:
    """max over points of |X_t(X_s(x)) - X_{t+s}(x)|"""
    composed = flow_map(b, t, flow_map(b, s, points, cfg), cfg, t0=s)
    direct = flow_map(b, t + s, points, cfg)
    return float(np.max(np.linalg.norm(composed - direct, axis=-1)))


def inverse_defect(b: VectorField, t: float, points, cfg: Optional[IntegratorConfig] = None) -> float:
    """max over points of |X_{-t}(X_t(x)) - x|"""
    points = b._check(points)
    there = flow_map(b, t, points, cfg)
    back = flow_map(b, -t, there, cfg, t0=t)
    return float(np.max(np.linalg.norm(back - points, axis=-1)))


def density_bounds(
    b: VectorField,
    t: float,
    points,
    cfg: Optional[IntegratorConfig] = None,
    div_sup: Optional[float] = None,
    box: Optional[Box] = None,
    tol: float = 1e-6,
) -> Dict[str, Any]:
    """
    Check exp(-|div b|_inf |t|) - tol <= rho <= exp(|div b|_inf |t|) + tol at the points.

    Args:
        div_sup: Known sup of |div b|; estimated on `box` (or the bounding box of the points) when omitted

    Returns:
        {t, min, max, lower, upper, div_sup, ok}
    """
    points = b._check(points)
    if div_sup is None:
        if box is None:
            flat = points.reshape(-1, b.dim)
            box = Box(tuple(flat.min(axis=0) - 1.0), tuple(flat.max(axis=0) + 1.0))
        div_sup = estimate_divergence_sup(b, box)
    rho = density_at(b, t, points, cfg)
    lower = math.exp(-div_sup * abs(t))
    upper = math.exp(div_sup * abs(t))
    result = {
        "t": float(t),
        "min": float(np.min(rho)),
        "max": float(np.max(rho)),
        "lower": lower,
        "upper": upper,
        "div_sup": float(div_sup),
    }
    result["ok"] = bool(result["min"] >= lower - tol and result["max"] <= upper + tol)
    if not result["ok"]:
        logger.warning("Density bounds violated for '%s' at t=%s: %s", b.name, t, result)
    return result


def continuity_residual(b: VectorField, t: float, points, cfg: Optional[IntegratorConfig] = None) -> float:
    """
    max |d_t rho + div(rho b)| at the points, all derivatives by central
    differences with the default FD steps.
    """
    points = b._check(points)
    dt_fd = max(FD_MIN_STEP, FD_REL_STEP * abs(t))
    d_rho_dt = (density_at(b, t + dt_fd, points, cfg) - density_at(b, t - dt_fd, points, cfg)) / (2.0 * dt_fd)
    div_flux = np.zeros(points.shape[:-1])
    for j in range(b.dim):
        h = np.maximum(FD_MIN_STEP, FD_REL_STEP * np.abs(points[..., j]))
        step = np.zeros_like(points)
        step[..., j] = h
        plus = density_at(b, t, points + step, cfg) * b.evaluate(t, points + step)[..., j]
        minus = density_at(b, t, points - step, cfg) * b.evaluate(t, points - step)[..., j]
        div_flux += (plus - minus) / (2.0 * h)
    return float(np.max(np.abs(d_rho_dt + div_flux)))


def jacobian_fd_consistency(
    b: VectorField, t: float, points, cfg: Optional[IntegratorConfig] = None, h: float = 1e-4
) -> float:
    """Max relative Frobenius error between the variational Jacobian and FD of endpoints"""
    points = b._check(points)
    sample = advance(b, t, points, cfg)
    columns = []
    for j in range(b.dim):
        step = np.zeros_like(points)
        step[..., j] = h
        columns.append((flow_map(b, t, points + step, cfg) - flow_map(b, t, points - step, cfg)) / (2.0 * h))
    numeric = np.stack(columns, axis=-1)
    err = np.linalg.norm(sample.jacobian - numeric, axis=(-2, -1))
    scale = np.linalg.norm(sample.jacobian, axis=(-2, -1))
    return float(np.max(err / scale))


def divergence_sup_along(b: VectorField, points, t: float = 0.0) -> float:
    """max |div b| over the given points"""
    return float(np.max(np.abs(divergence(b, t, b._check(points)))))
