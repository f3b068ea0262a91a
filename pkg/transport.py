"""
Evolution solvers: the vector advection equation (Lagrangian representation
formula and an Eulerian grid scheme), the geometric transport equation for
currents via pushforward, its weak-form residual, the Duhamel formula, and
the 3D induction equation with the frozen-in field line comparison.
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import trapezoid

from currents import (
    ACCurrent,
    CurveChain,
    Current,
    FlowMapping,
    add_currents,
    boundary,
    lie_derivative_pair,
    mass,
    pair,
    pair_pushforward_jacobian,
    pushforward,
    scale_current,
)
from errors import CFLError, ConfigError, DimensionError, InstabilityError, PreconditionError
from fields import Box, GridField, VectorField, central_divergence, central_jacobian, resolution_tuple
from flow import IntegratorConfig, advance, density_at, flow_map
from forms import TestForm0, TestForm1

logger = logging.getLogger(__name__)

DEFAULT_CFL = 0.5
ZERO_FIELD_TOL = 1e-8
SNAP_TOL = 1e-9


# ============================================================================
# State types
# ============================================================================

@dataclass(frozen=True)
class EulerianGridState:
    """Vector samples v(t, .) (or B(t, .)) on the periodic grid of a box"""

    box: Box
    resolution: Tuple[int, ...]
    t: float
    samples: np.ndarray
    dt: float
    cfl: float = DEFAULT_CFL

    @property
    def spacing(self) -> np.ndarray:
        return self.box.spacing(self.resolution)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def nodes(self) -> np.ndarray:
        return self.box.nodes(self.resolution)

    def as_field(self, order: int = 1) -> GridField:
        return GridField(self.box, self.samples, order=order, name=f"state(t={self.t:g})", time=self.t)

    def as_current(self) -> ACCurrent:
        return ACCurrent(self.as_field(), self.box, self.resolution, None)

    def divergence_max(self) -> float:
        return float(np.max(np.abs(central_divergence(self.samples, self.spacing))))


@dataclass
class EulerianRun:
    """States at the requested times plus per-step diagnostics"""

    states: List[EulerianGridState]
    dt: float
    steps: int
    div_history: List[float] = field(default_factory=list)

    @property
    def final(self) -> EulerianGridState:
        return self.states[-1]


@dataclass(frozen=True)
class CurrentPath:
    """Currents T_k at strictly increasing, uniformly spaced times t_k"""

    times: Tuple[float, ...]
    currents: Tuple[Current, ...]
    snap_report: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) != len(self.currents) or not self.times:
            raise ConfigError("A current path needs one current per time and at least one time")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ConfigError("Path times must be strictly increasing")
        kinds = {type(c) for c in self.currents}
        dims = {c.dim for c in self.currents}
        if len(kinds) > 1 or len(dims) > 1:
            raise ConfigError("All currents of a path must share dimension and representation")

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self):
        return iter(zip(self.times, self.currents))

    @property
    def dim(self) -> int:
        return self.currents[0].dim

    @property
    def step(self) -> float:
        return self.times[1] - self.times[0] if len(self.times) > 1 else 0.0


def uniform_times(times: Sequence[float]) -> Tuple[np.ndarray, Dict[str, Any]]:
    """
    Snap requested times onto the uniform grid with the same endpoints and count.

    Returns:
        (uniform times, report {requested, snapped, max_shift, uniform})
    """
    requested = np.asarray(sorted(float(t) for t in times))
    if len(requested) < 1:
        raise ConfigError("At least one time is required")
    if len(requested) > 1 and np.any(np.diff(requested) <= 0):
        raise ConfigError("Requested times must be distinct")
    grid = np.linspace(requested[0], requested[-1], len(requested))
    shift = float(np.max(np.abs(grid - requested)))
    report = {
        "requested": requested.tolist(),
        "snapped": grid.tolist(),
        "max_shift": shift,
        "uniform": shift <= SNAP_TOL,
    }
    if not report["uniform"]:
        logger.warning("Non-uniform times snapped to a uniform grid (max shift %.3g)", shift)
    return grid, report


# ============================================================================
# Vector advection equation
# ============================================================================

def vae_lagrangian(
    b: VectorField, v_bar: VectorField, t: float, points, cfg: Optional[IntegratorConfig] = None
) -> np.ndarray:
    """
    v(t, x) = (grad X_t . v_bar)(X_{-t}(x)).

    Backtracks x0 = X_{-t}(x), integrates the Jacobian forward from x0 and
    applies it to v_bar(x0).
    """
    points = b._check(points)
    if t == 0.0:
        return v_bar.evaluate(0.0, points)
    x0 = flow_map(b, -t, points, cfg, t0=t)
    sample = advance(b, t, x0, cfg)
    return np.einsum("...ij,...j->...i", sample.jacobian, v_bar.evaluate(0.0, x0))


def transported_density(
    b: VectorField, v_bar: VectorField, t: float, points, cfg: Optional[IntegratorConfig] = None
) -> np.ndarray:
    """rho_t v_t = (grad X_t . v_bar)(X_{-t}(x)) / det grad X_t, the density of (X_t)_* T_{v_bar}"""
    points = b._check(points)
    if t == 0.0:
        return v_bar.evaluate(0.0, points)
    x0 = flow_map(b, -t, points, cfg, t0=t)
    sample = advance(b, t, x0, cfg)
    moved = np.einsum("...ij,...j->...i", sample.jacobian, v_bar.evaluate(0.0, x0))
    return moved * sample.density[..., None]


def _stable_step(b_sup: float, spacing: np.ndarray, horizon: float, dt: Optional[float], cfl: float) -> Tuple[float, int]:
    h = float(np.min(spacing))
    dt_max = math.inf if b_sup <= 0.0 else cfl * h / b_sup
    if dt is not None:
        if dt > dt_max * (1.0 + 1e-12):
            raise CFLError(f"dt={dt:.4g} exceeds the CFL bound {dt_max:.4g} (cfl={cfl}, h={h:.4g}, |b|_inf={b_sup:.4g})")
        steps = max(1, math.ceil(horizon / dt - 1e-9))
    else:
        steps = 1 if not math.isfinite(dt_max) else max(1, math.ceil(horizon / dt_max - 1e-12))
    return (horizon / steps if horizon > 0 else 0.0), steps


def _record_indices(times: Sequence[float], dt: float, steps: int) -> Dict[int, float]:
    indices = {}
    for t in times:
        k = 0 if dt == 0.0 else int(round(t / dt))
        if k < 0 or k > steps:
            raise ConfigError(f"Output time {t} outside [0, horizon]")
        if abs(k * dt - t) > SNAP_TOL:
            logger.warning("Output time %g snapped to step time %g", t, k * dt)
        indices[k] = k * dt
    return indices


def _march(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    initial: np.ndarray,
    dt: float,
    steps: int,
    record: Dict[int, float],
    make_state: Callable[[float, np.ndarray], EulerianGridState],
    on_step: Optional[Callable[[np.ndarray], None]] = None,
) -> List[EulerianGridState]:
    """Classic RK4 in time over grid samples"""
    u = np.array(initial, dtype=float)
    states = []
    if 0 in record:
        states.append(make_state(0.0, u.copy()))
    for step in range(1, steps + 1):
        t = (step - 1) * dt
        k1 = rhs(t, u)
        k2 = rhs(t + 0.5 * dt, u + 0.5 * dt * k1)
        k3 = rhs(t + 0.5 * dt, u + 0.5 * dt * k2)
        k4 = rhs(t + dt, u + dt * k3)
        u = u + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(u)):
            raise InstabilityError("Non-finite grid samples", step)
        if on_step is not None:
            on_step(u)
        if step in record:
            states.append(make_state(step * dt, u.copy()))
    return states


class _NodeField:
    """Values and Jacobian of a field at the grid nodes, cached when autonomous"""

    def __init__(self, f: VectorField, nodes: np.ndarray):
        self.f = f
        self.nodes = nodes
        self._cache = None
        if f.autonomous:
            self._cache = (f.evaluate(0.0, nodes), f.jacobian(0.0, nodes))

    def at(self, t: float):
        if self._cache is not None:
            return self._cache
        return self.f.evaluate(t, self.nodes), self.f.jacobian(t, self.nodes)


def _initial_samples(initial: Union[VectorField, np.ndarray], box: Box, resolution) -> np.ndarray:
    if isinstance(initial, VectorField):
        if initial.dim != box.dim:
            raise DimensionError("Initial field and box dimensions differ")
        return initial.evaluate(0.0, box.nodes(resolution))
    samples = np.array(initial, dtype=float)
    if samples.shape != tuple(resolution) + (box.dim,):
        raise DimensionError(f"Initial samples of shape {samples.shape} do not match the grid {resolution}")
    return samples


def vae_eulerian(
    b: VectorField,
    v_bar: Union[VectorField, np.ndarray],
    box: Box,
    resolution,
    horizon: float,
    times: Optional[Sequence[float]] = None,
    dt: Optional[float] = None,
    cfl: float = DEFAULT_CFL,
) -> EulerianRun:
    """
    Solve d_t v = grad b . v - grad v . b on the periodic grid.

    RK4 in time, second-order central differences for grad v; b and grad b
    are evaluated at the nodes.

    Args:
        b: Transporting field
        v_bar: Initial field (sampled at the nodes) or samples
        horizon: Final time
        times: Output times (default [horizon]), snapped to step times
        dt: Time step; chosen from the CFL bound when omitted

    Raises:
        CFLError: dt above cfl * h / |b|_inf
        InstabilityError: non-finite samples
    """
    resolution = resolution_tuple(resolution, box.dim)
    spacing = box.spacing(resolution)
    nodes = box.nodes(resolution)
    transport_field = _NodeField(b, nodes)
    b_sup = float(np.max(np.linalg.norm(transport_field.at(0.0)[0], axis=-1)))
    step, steps = _stable_step(b_sup, spacing, horizon, dt, cfl)
    record = _record_indices([horizon] if times is None else times, step, steps)

    def rhs(t, v):
        b_vals, jac_b = transport_field.at(t)
        jac_v = central_jacobian(v, spacing)
        return np.einsum("...ij,...j->...i", jac_b, v) - np.einsum("...ij,...j->...i", jac_v, b_vals)

    def make_state(t, samples):
        return EulerianGridState(box, resolution, t, samples, step, cfl)

    logger.info("VAE on %s grid: %d steps of dt=%.4g", resolution, steps, step)
    states = _march(rhs, _initial_samples(v_bar, box, resolution), step, steps, record, make_state)
    return EulerianRun(states, step, steps)


def l2_error(state: EulerianGridState, reference: Union[EulerianGridState, np.ndarray]) -> float:
    """Grid L2 norm sqrt(sum |a - b|^2 * cell volume)"""
    ref = reference.samples if isinstance(reference, EulerianGridState) else np.asarray(reference)
    diff = state.samples - ref
    return float(np.sqrt(np.sum(diff * diff) * state.cell_volume))


def vae_weak_residual(
    b: VectorField,
    v_bar: VectorField,
    form: TestForm1,
    times: Sequence[float],
    box: Box,
    resolution,
    psi: Optional["TimeBump"] = None,
    cfg: Optional[IntegratorConfig] = None,
) -> float:
    """
    Weak VAE identity for the Lagrangian solution, tested on Psi = psi(t) a(x):
    integral of v . [d_t Psi + (div b) Psi + grad Psi . b + grad b^T Psi] over space-time.
    """
    resolution = resolution_tuple(resolution, box.dim)
    times = np.asarray(times, dtype=float)
    psi = psi or TimeBump(float(times[0]), float(times[-1]))
    nodes = box.nodes(resolution)
    cell = float(np.prod(box.spacing(resolution)))
    a = form.proxy(nodes)
    grad_a = form.proxy_jacobian(nodes)
    values = []
    for t in times:
        v = vae_lagrangian(b, v_bar, float(t), nodes, cfg)
        b_vals = b.evaluate(t, nodes)
        jac_b = b.jacobian(t, nodes)
        div_b = np.trace(jac_b, axis1=-2, axis2=-1)
        spatial = (
            div_b[..., None] * a
            + np.einsum("...ij,...j->...i", grad_a, b_vals)
            + np.einsum("...ij,...i->...j", jac_b, a)
        )
        integrand = np.sum(v * (psi.derivative(t) * a + psi(t) * spatial), axis=-1)
        values.append(np.sum(integrand) * cell)
    return float(trapezoid(values, times))


# ============================================================================
# Geometric transport equation
# ============================================================================

def gte_solve(
    b: VectorField,
    initial: Current,
    times: Sequence[float],
    cfg: Optional[IntegratorConfig] = None,
    refine_tol: Optional[float] = None,
) -> CurrentPath:
    """
    T_t = (X_t)_* T_bar at uniformly spaced times.

    Raises:
        ConfigError: time-dependent b
    """
    if not b.autonomous:
        raise ConfigError(f"gte_solve needs an autonomous field, '{b.name}' depends on t")
    grid, report = uniform_times(times)
    cfg = cfg or IntegratorConfig.default()
    currents = []
    for t in grid:
        if t == 0.0:
            currents.append(initial)
        else:
            currents.append(pushforward(initial, FlowMapping(b, float(t), cfg), refine_tol))
    logger.debug("GTE path of %d currents for '%s'", len(currents), b.name)
    return CurrentPath(tuple(float(t) for t in grid), tuple(currents), report)


@dataclass(frozen=True)
class TimeBump:
    """
    psi(t) = amplitude * (1 - (2s - 1)^2)^4 with s = (t - start) / (end - start),
    smooth with compact support in (start, end).
    """

    start: float = 0.0
    end: float = 1.0
    amplitude: float = 1.0

    def _s(self, t):
        return (np.asarray(t, dtype=float) - self.start) / (self.end - self.start)

    def __call__(self, t):
        u = 2.0 * self._s(t) - 1.0
        return np.where(np.abs(u) < 1.0, self.amplitude * (1.0 - u * u) ** 4, 0.0)

    def derivative(self, t):
        u = 2.0 * self._s(t) - 1.0
        inner = np.where(np.abs(u) < 1.0, (1.0 - u * u) ** 3, 0.0)
        return self.amplitude * 4.0 * inner * (-2.0 * u) * 2.0 / (self.end - self.start)


def weak_residual(
    path: CurrentPath, b: VectorField, form: TestForm1, psi: Optional[TimeBump] = None
) -> float:
    """
    integral of <T_t, omega> psi'(t) dt - integral of <L_b T_t, omega> psi(t) dt
    by the trapezoid rule on the path's time grid (psi defaults to a bump on the path span).
    """
    if len(path) < 2:
        return 0.0
    psi = psi or TimeBump(path.times[0], path.times[-1])
    values = []
    for t, current in path:
        weight, dweight = float(psi(t)), float(psi.derivative(t))
        value = 0.0
        if dweight != 0.0:
            value += pair(current, form) * dweight
        if weight != 0.0:
            value -= lie_derivative_pair(current, b, form) * weight
        values.append(value)
    return float(trapezoid(values, path.times))


def lemma_vae_to_gte_check(
    b: VectorField,
    v_bar: VectorField,
    t: float,
    forms: Sequence[TestForm1],
    box: Box,
    resolution,
    cfg: Optional[IntegratorConfig] = None,
) -> Dict[str, Any]:
    """
    Pair the current (rho_t v_t) Lebesgue, built from the representation formula on
    the image grid, against (X_t)_* T_{v_bar} integrated on the source grid.
    """
    resolution = resolution_tuple(resolution, box.dim)
    nodes = box.nodes(resolution)
    cell = float(np.prod(box.spacing(resolution)))
    density = transported_density(b, v_bar, t, nodes, cfg)
    source = ACCurrent(v_bar, box, resolution)
    mapping = FlowMapping(b, t, cfg)
    diffs = []
    for form in forms:
        eulerian_side = float(np.sum(density * form.proxy(nodes)) * cell)
        pushed_side = pair_pushforward_jacobian(source, mapping, form)
        diffs.append(abs(eulerian_side - pushed_side))
    return {"t": float(t), "max_abs_diff": float(max(diffs)), "forms": len(diffs)}


def boundary_transport_check(
    b: VectorField,
    current: ACCurrent,
    t: float,
    functions: Sequence[TestForm0],
    cfg: Optional[IntegratorConfig] = None,
    div_tol: float = 1e-8,
) -> Dict[str, Any]:
    """
    For divergence-free b, compare <d((X_t)_* T), f> = <(X_t)_* T, df> with
    <(X_t)_#(dT), f>, the boundary atoms moved by the flow.

    Raises:
        PreconditionError: |div b| above div_tol at the grid nodes
    """
    nodes = current.nodes()
    div_sup = float(np.max(np.abs(np.trace(b.jacobian(0.0, nodes), axis1=-2, axis2=-1))))
    if div_sup > div_tol:
        raise PreconditionError(f"Boundary transport needs div b = 0, found |div b| = {div_sup:.3g}")
    mapping = FlowMapping(b, t, cfg)
    pushed = pushforward(current, mapping)
    moved_boundary = boundary(current).pushforward(mapping)
    diffs = [abs(pair(pushed, f.d()) - moved_boundary.pair(f)) for f in functions]
    return {"t": float(t), "max_abs_diff": float(max(diffs)), "div_sup": div_sup}


def _duhamel_sum(
    b: VectorField,
    initial: Current,
    grid: np.ndarray,
    sources: Sequence[Current],
    cfg: IntegratorConfig,
) -> Current:
    """(X_t)_* T_bar plus the trapezoid sum of (X_{t-s_j})_* R_{s_j}, t = grid[-1]"""
    t = float(grid[-1])
    total = initial if t == 0.0 else pushforward(initial, FlowMapping(b, t, cfg))
    k = len(grid) - 1
    if k == 0:
        return total
    h = float(grid[1] - grid[0])
    for j in range(k + 1):
        weight = h * (0.5 if j in (0, k) else 1.0)
        lag = t - float(grid[j])
        moved = sources[j] if lag == 0.0 else pushforward(sources[j], FlowMapping(b, lag, cfg))
        total = add_currents(total, scale_current(moved, weight))
    return total


def duhamel_solve(
    b: VectorField,
    initial: Current,
    times: Optional[Sequence[float]] = None,
    source: Union[None, CurrentPath, Callable[[float], Current]] = None,
    cfg: Optional[IntegratorConfig] = None,
) -> CurrentPath:
    """
    T_t = (X_t)_* T_bar + integral over [0, t] of (X_{t-s})_* R_s ds.

    The s-integral is the trapezoid rule on the path's own uniform grid, which
    must start at 0; pushed sources are accumulated as formal sums.

    Args:
        source: None (R = 0), a CurrentPath of sources, or a callable s -> R_s
        times: Output grid; taken from the source path when omitted
    """
    if isinstance(source, CurrentPath):
        grid = np.asarray(source.times)
        sources = list(source.currents)
        report = source.snap_report
    else:
        if times is None:
            raise ConfigError("duhamel_solve needs times when the source is not a path")
        grid, report = uniform_times(times)
        sources = None if source is None else [source(float(s)) for s in grid]
    if sources is None:
        return gte_solve(b, initial, grid, cfg)
    if grid[0] != 0.0:
        raise ConfigError("The Duhamel time grid must start at t = 0")
    cfg = cfg or IntegratorConfig.default()
    currents = [_duhamel_sum(b, initial, grid[: k + 1], sources[: k + 1], cfg) for k in range(len(grid))]
    return CurrentPath(tuple(float(t) for t in grid), tuple(currents), report)


def duhamel_at(
    b: VectorField,
    initial: Current,
    t: float,
    source: Callable[[float], Current],
    n_intervals: int,
    cfg: Optional[IntegratorConfig] = None,
) -> Current:
    """The Duhamel current at the single time t, with n_intervals trapezoid panels on [0, t]"""
    if n_intervals < 1:
        raise ConfigError("n_intervals must be at least 1")
    grid = np.linspace(0.0, t, n_intervals + 1)
    return _duhamel_sum(b, initial, grid, [source(float(s)) for s in grid], cfg or IntegratorConfig.default())


# ============================================================================
# Induction equation and frozen-in field lines
# ============================================================================

def induction_solve(
    V: VectorField,
    B_bar: Union[VectorField, np.ndarray],
    box: Box,
    resolution,
    horizon: float,
    times: Optional[Sequence[float]] = None,
    dt: Optional[float] = None,
    cfl: float = DEFAULT_CFL,
) -> EulerianRun:
    """
    Solve d_t B = curl(V x B) in 3D on the periodic grid with RK4.

    A periodic grid V on the same grid uses the conservative form, the curl
    of V x B by central differences. Any other V uses the expanded form
    grad V . B - grad B . V - B div V + V div B with grad V and div V exact
    at the nodes, grad B and div B by central differences.

    Returns:
        EulerianRun whose div_history holds max|div B| after every step
    """
    if box.dim != 3 or V.dim != 3:
        raise DimensionError("The induction equation is solved in 3D")
    resolution = resolution_tuple(resolution, 3)
    spacing = box.spacing(resolution)
    nodes = box.nodes(resolution)
    conservative = (
        isinstance(V, GridField) and V.periodic and V.box == box and tuple(V.resolution) == resolution
    )
    velocity = _NodeField(V, nodes)
    V_sup = float(np.max(np.linalg.norm(velocity.at(0.0)[0], axis=-1)))
    step, steps = _stable_step(V_sup, spacing, horizon, dt, cfl)
    record = _record_indices([horizon] if times is None else times, step, steps)

    def rhs(t, B):
        V_vals, jac_V = velocity.at(t)
        if conservative:
            E = np.cross(V_vals, B)
            J = central_jacobian(E, spacing)
            return np.stack([J[..., 2, 1] - J[..., 1, 2], J[..., 0, 2] - J[..., 2, 0], J[..., 1, 0] - J[..., 0, 1]], axis=-1)
        jac_B = central_jacobian(B, spacing)
        div_V = np.trace(jac_V, axis1=-2, axis2=-1)
        div_B = np.trace(jac_B, axis1=-2, axis2=-1)
        return (
            np.einsum("...ij,...j->...i", jac_V, B)
            - np.einsum("...ij,...j->...i", jac_B, V_vals)
            - div_V[..., None] * B
            + div_B[..., None] * V_vals
        )

    history: List[float] = []

    def on_step(B):
        history.append(float(np.max(np.abs(central_divergence(B, spacing)))))

    def make_state(t, samples):
        return EulerianGridState(box, resolution, t, samples, step, cfl)

    initial = _initial_samples(B_bar, box, resolution)
    logger.info(
        "Induction on %s grid (%s form): %d steps of dt=%.4g, initial max|div B|=%.3g",
        resolution, "conservative" if conservative else "expanded", steps, step,
        float(np.max(np.abs(central_divergence(initial, spacing)))),
    )
    states = _march(rhs, initial, step, steps, record, make_state, on_step)
    return EulerianRun(states, step, steps, history)


def rescaled_state(state: EulerianGridState, V: VectorField, cfg: Optional[IntegratorConfig] = None) -> EulerianGridState:
    """B_t / rho_t on the grid, the field whose lines and parametrisation stay frozen in compressible flows"""
    rho = density_at(V, state.t, state.nodes(), cfg)
    return EulerianGridState(state.box, state.resolution, state.t, state.samples / rho[..., None], state.dt, state.cfl)


def trace_field_line(
    field_: VectorField,
    start,
    length: float,
    n_steps: int = 200,
    normalize: bool = True,
    box: Optional[Box] = None,
) -> Tuple[np.ndarray, bool]:
    """
    RK4 streamline from `start`. With normalize the direction field B/|B| is
    followed so the parameter is arclength; otherwise the flow of B itself.
    Tracing stops where |B| < 1e-8 or the line leaves `box`.

    Returns:
        (points (m, d) with m <= n_steps + 1, truncated flag)
    """
    h = length / n_steps

    def direction(x):
        value = field_.evaluate(0.0, x)
        size = float(np.linalg.norm(value))
        if size < ZERO_FIELD_TOL:
            return None
        return value / size if normalize else value

    x = np.asarray(start, dtype=float)
    points = [x]
    for _ in range(n_steps):
        k1 = direction(x)
        k2 = None if k1 is None else direction(x + 0.5 * h * k1)
        k3 = None if k2 is None else direction(x + 0.5 * h * k2)
        k4 = None if k3 is None else direction(x + h * k3)
        if k4 is None:
            return np.array(points), True
        x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if box is not None and not bool(box.contains(x)):
            return np.array(points), True
        points.append(x)
    return np.array(points), False


def point_to_curve_distance(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest segment of the polyline"""
    if len(polyline) == 1:
        return np.linalg.norm(points - polyline[0], axis=-1)
    a = polyline[:-1][None, :, :]
    seg = (polyline[1:] - polyline[:-1])[None, :, :]
    p = points[:, None, :]
    denom = np.maximum(np.sum(seg * seg, axis=-1), 1e-300)
    s = np.clip(np.sum((p - a) * seg, axis=-1) / denom, 0.0, 1.0)
    closest = a + s[..., None] * seg
    return np.min(np.linalg.norm(p - closest, axis=-1), axis=-1)


def frozen_line_compare(
    V: VectorField,
    B_bar: VectorField,
    t: float,
    seeds,
    box: Box,
    resolution,
    cfg: Optional[IntegratorConfig] = None,
    rescale: bool = False,
    line_length: float = 1.0,
    n_steps: int = 200,
    state: Optional[EulerianGridState] = None,
) -> Dict[str, Any]:
    """
    Compare field lines of B_t with the flow images of field lines of B_bar.

    For each seed y: the line of B_bar through y is pushed through X_t and
    compared against the line of B_t (or of B_t / rho_t with rescale) through
    X_t(y), both as arclength shapes (point-to-curve distance) and as
    parametrised flows |X_t(Y0_s(y)) - Yt_s(X_t(y))|.

    Args:
        state: Eulerian B_t; solved with induction_solve when omitted

    Returns:
        {t, rescaled, shape_deviation, param_deviation, truncated, warnings}
    """
    cfg = cfg or IntegratorConfig.default()
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if state is None:
        state = induction_solve(V, B_bar, box, resolution, t).final
    if rescale:
        state = rescaled_state(state, V, cfg)
    B_t = state.as_field(order=3)
    shape_dev = 0.0
    param_dev = 0.0
    truncated = 0
    warnings = []
    for index, y in enumerate(seeds):
        start = flow_map(V, t, y, cfg)

        line0, cut0 = trace_field_line(B_bar, y, line_length, n_steps, True, box)
        pushed = flow_map(V, t, line0, cfg)
        pushed_length = float(np.sum(np.linalg.norm(np.diff(pushed, axis=0), axis=-1)))
        line_t, cut_t = trace_field_line(B_t, start, pushed_length, n_steps, True, box)

        flow0, cut1 = trace_field_line(B_bar, y, line_length, n_steps, False, box)
        flow_t, cut2 = trace_field_line(B_t, start, line_length, n_steps, False, box)

        if cut0 or cut_t or cut1 or cut2:
            truncated += 1
            warnings.append(f"seed {index}: field line truncated (box exit or |B| < {ZERO_FIELD_TOL})")
        if len(line_t) > 1 and len(pushed) > 1:
            shape_dev = max(shape_dev, float(np.max(point_to_curve_distance(pushed, line_t))))
        m = min(len(flow0), len(flow_t))
        moved = flow_map(V, t, flow0[:m], cfg)
        param_dev = max(param_dev, float(np.max(np.linalg.norm(moved - flow_t[:m], axis=-1))))
    for message in warnings:
        logger.warning("Frozen-line comparison: %s", message)
    return {
        "t": float(t),
        "rescaled": rescale,
        "shape_deviation": shape_dev,
        "param_deviation": param_dev,
        "truncated": truncated,
        "warnings": warnings,
    }


def frozen_field_reference(
    V: VectorField, B_bar: VectorField, t: float, box: Box, resolution, cfg: Optional[IntegratorConfig] = None
) -> np.ndarray:
    """B_t = (grad X_t . B_bar)(X_{-t}(x)) rho_t(x) at the grid nodes"""
    resolution = resolution_tuple(resolution, box.dim)
    return transported_density(V, B_bar, t, box.nodes(resolution), cfg)


# ============================================================================
# Path export
# ============================================================================

def path_pairings(path: CurrentPath, forms: Sequence[TestForm1]) -> np.ndarray:
    """Matrix of <T_k, omega_j>, one row per time"""
    return np.array([[pair(current, form) for form in forms] for _, current in path])


def export_path_csv(path: CurrentPath, forms: Sequence[TestForm1], filename: Union[str, Path]) -> Path:
    """Write t followed by one pairing column per form (labelled by the form label)"""
    filename = Path(filename)
    filename.parent.mkdir(parents=True, exist_ok=True)
    labels = [form.label or f"form{j}" for j, form in enumerate(forms)]
    values = path_pairings(path, forms)
    with open(filename, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["t"] + labels)
        for t, row in zip(path.times, values):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    return filename


def path_summary(path: CurrentPath, **extra) -> Dict[str, Any]:
    """JSON-ready description of a path: kind, times and representation masses, plus caller fields"""
    summary = {
        "kind": "chain" if isinstance(path.currents[0], CurveChain) else "ac",
        "n_times": len(path),
        "t_start": path.times[0],
        "t_end": path.times[-1],
        "dt": path.step,
        "masses": [mass(current) for _, current in path],
        "snapped": not path.snap_report.get("uniform", True),
    }
    summary.update(extra)
    return summary
