"""
Finite-mass 1-currents in two concrete representations:

- CurveChain: weighted polygonal curves, T = sum_i w_i [[gamma_i]]
- ACCurrent: absolutely continuous currents (chi v) Lebesgue on a box grid

plus 0-currents (weighted points) for boundaries, and the operations on
them: pairing with test forms, mass, boundary, pushforward, Lie derivative.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import roots_legendre

from errors import ConfigError, DimensionError
from fields import (
    AnalyticField,
    Box,
    GridField,
    VectorField,
    central_divergence,
    central_jacobian,
    divergence,
    lie_bracket,
    resolution_tuple,
    windowed,
)
from flow import IntegratorConfig, advance, flow_map
from forms import Bump, TestForm1

logger = logging.getLogger(__name__)

GAUSS_ORDER = 5
_GL_NODES, _GL_WEIGHTS = roots_legendre(GAUSS_ORDER)
GL_NODES = 0.5 * (_GL_NODES + 1.0)
GL_WEIGHTS = 0.5 * _GL_WEIGHTS

REFINE_REL_TOL = 1e-4
MAX_REFINE_PASSES = 16
MAX_VERTICES_PER_CURVE = 50_000


# ============================================================================
# Representations
# ============================================================================

@dataclass(frozen=True)
class ZeroCurrent:
    """Finite sum of signed point masses, sum_k w_k delta_{p_k}"""

    points: np.ndarray
    weights: np.ndarray

    @classmethod
    def empty(cls, dim: int) -> "ZeroCurrent":
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def dim(self) -> int:
        return self.points.shape[-1]

    @property
    def mass(self) -> float:
        return float(np.sum(np.abs(self.weights)))

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.weights))

    def pair(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        if len(self.weights) == 0:
            return 0.0
        return float(np.sum(self.weights * f(self.points)))

    def consolidated(self) -> "ZeroCurrent":
        """Merge atoms sitting at identical points"""
        if len(self.weights) == 0:
            return self
        unique, inverse = np.unique(self.points, axis=0, return_inverse=True)
        weights = np.zeros(len(unique))
        np.add.at(weights, inverse.reshape(-1), self.weights)
        return ZeroCurrent(unique, weights)

    def pushforward(self, mapping: "PointMap") -> "ZeroCurrent":
        if len(self.weights) == 0:
            return self
        return ZeroCurrent(mapping(self.points), self.weights.copy())


@dataclass(frozen=True)
class WeightedCurve:
    """Polyline with vertex parameters in [0, 1] and a positive weight"""

    weight: float
    vertices: np.ndarray
    params: np.ndarray

    @property
    def segments(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices[:-1], self.vertices[1:]

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.vertices, axis=0), axis=-1)))

    @property
    def closed(self) -> bool:
        return bool(np.array_equal(self.vertices[0], self.vertices[-1]))


def make_curve(vertices, weight: float = 1.0, params=None) -> WeightedCurve:
    """
    Validate and build a weighted polyline.

    Args:
        vertices: (m, d) array, m >= 2, consecutive vertices distinct
        weight: Positive weight
        params: Optional increasing parameter values; defaults to normalised cumulative chord length

    Raises:
        ValueError: invalid polyline or weight
    """
    vertices = np.array(vertices, dtype=float)
    if vertices.ndim != 2 or vertices.shape[0] < 2:
        raise ValueError("A polyline needs at least 2 vertices")
    steps = np.linalg.norm(np.diff(vertices, axis=0), axis=-1)
    if np.any(steps == 0.0):
        raise ValueError("Consecutive polyline vertices must be distinct")
    if not weight > 0:
        raise ValueError(f"Curve weights must be positive, got {weight}")
    if params is None:
        cumulative = np.concatenate([[0.0], np.cumsum(steps)])
        params = cumulative / cumulative[-1]
    params = np.array(params, dtype=float)
    if params.shape != (vertices.shape[0],) or np.any(np.diff(params) <= 0):
        raise ValueError("Curve parameters must be strictly increasing, one per vertex")
    return WeightedCurve(float(weight), vertices, params)


@dataclass(frozen=True)
class CurveChain:
    """T = sum_i w_i [[gamma_i]]; doubles as an atomic curve measure eta = sum_i w_i delta_{gamma_i}"""

    dim: int
    curves: Tuple[WeightedCurve, ...] = ()

    def __post_init__(self):
        for curve in self.curves:
            if curve.vertices.shape[-1] != self.dim:
                raise DimensionError(f"Curve of dimension {curve.vertices.shape[-1]} in a {self.dim}D chain")

    def __len__(self) -> int:
        return len(self.curves)

    def _segment_arrays(self):
        if not self.curves:
            empty = np.zeros((0, self.dim))
            return empty, empty, np.zeros(0)
        starts = np.concatenate([c.vertices[:-1] for c in self.curves])
        ends = np.concatenate([c.vertices[1:] for c in self.curves])
        weights = np.concatenate([np.full(len(c.vertices) - 1, c.weight) for c in self.curves])
        return starts, ends, weights


@dataclass(frozen=True)
class ACCurrent:
    """
    T = (chi v) Lebesgue sampled on the periodic grid of `box`.

    `window` is the cutoff chi; when None the field is used as is (pushed
    and derived currents carry an already compactly supported field).
    """

    field: VectorField
    box: Box
    resolution: Tuple[int, ...]
    window: Optional[Bump] = None

    def __post_init__(self):
        object.__setattr__(self, "resolution", resolution_tuple(self.resolution, self.box.dim))
        if self.field.dim != self.box.dim:
            raise DimensionError("Field and box dimensions differ")
        if self.window is not None:
            h = self.box.spacing(self.resolution)
            center = np.asarray(self.window.center)
            low_ok = np.all(center - self.window.radius > np.asarray(self.box.lo))
            high_ok = np.all(center + self.window.radius < np.asarray(self.box.hi) - h)
            if not (low_ok and high_ok):
                raise ConfigError("Cutoff window must lie strictly inside the box, off the outermost cell layer")

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.box.spacing(self.resolution)))

    def nodes(self) -> np.ndarray:
        return self.box.nodes(self.resolution)

    def _grid_aligned(self) -> bool:
        f = self.field
        return (
            isinstance(f, GridField) and f.periodic and f.box == self.box
            and tuple(f.resolution) == self.resolution
        )

    def samples(self, t: float = 0.0) -> np.ndarray:
        """Effective field chi*v at the nodes"""
        if self._grid_aligned() and self.window is None:
            return np.array(self.field.samples)
        nodes = self.nodes()
        values = self.field.evaluate(t, nodes)
        if self.window is not None:
            values = self.window(nodes)[..., None] * values
        return values

    def jacobian_samples(self, t: float = 0.0) -> np.ndarray:
        """grad(chi v) at the nodes"""
        if self._grid_aligned():
            jac = central_jacobian(self.samples(t), self.box.spacing(self.resolution))
            return jac
        nodes = self.nodes()
        jac = self.field.jacobian(t, nodes)
        if self.window is not None:
            jac = (
                self.window(nodes)[..., None, None] * jac
                + self.field.evaluate(t, nodes)[..., :, None] * self.window.gradient(nodes)[..., None, :]
            )
        return jac

    def divergence_samples(self, t: float = 0.0) -> np.ndarray:
        if self._grid_aligned() and self.window is None:
            return central_divergence(self.samples(t), self.box.spacing(self.resolution))
        return np.trace(self.jacobian_samples(t), axis1=-2, axis2=-1)

    def boundary_layer_max(self) -> float:
        """max |chi v| on the outermost cell layer (zero for a valid compactly supported current)"""
        values = np.linalg.norm(self.samples(), axis=-1)
        layer = np.zeros(values.shape, dtype=bool)
        for axis in range(self.dim):
            index = [slice(None)] * self.dim
            index[axis] = 0
            layer[tuple(index)] = True
            index[axis] = -1
            layer[tuple(index)] = True
        return float(np.max(values[layer]))

    def as_grid(self) -> "ACCurrent":
        """Same current with the effective field stored as grid samples"""
        grid = GridField(self.box, self.samples(), name=f"samples({self.field.name})")
        return ACCurrent(grid, self.box, self.resolution, None)


Current = Union[CurveChain, ACCurrent]


def _check_dims(T, omega) -> None:
    if T.dim != omega.dim:
        raise DimensionError(f"Pairing a {T.dim}D current with a {omega.dim}D form")


# ============================================================================
# Maps for pushforward
# ============================================================================

class PointMap:
    """Injective Lipschitz map f with Jacobian and inverse"""

    dim: int

    def __call__(self, x) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x) -> np.ndarray:
        raise NotImplementedError

    def inverse(self, y) -> np.ndarray:
        raise NotImplementedError

    def image_and_jacobian(self, x) -> Tuple[np.ndarray, np.ndarray]:
        return self(x), self.jacobian(x)


class AffineMap(PointMap):
    """f(x) = A x + c"""

    def __init__(self, matrix, offset=None):
        self.matrix = np.asarray(matrix, dtype=float)
        self.dim = self.matrix.shape[0]
        self.offset = np.zeros(self.dim) if offset is None else np.asarray(offset, dtype=float)
        self._inverse = np.linalg.inv(self.matrix)

    @classmethod
    def translation(cls, offset) -> "AffineMap":
        offset = np.asarray(offset, dtype=float)
        return cls(np.eye(len(offset)), offset)

    @classmethod
    def scaling(cls, factor: float, dim: int) -> "AffineMap":
        return cls(factor * np.eye(dim))

    def __call__(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.matrix.T + self.offset

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.matrix, x.shape[:-1] + self.matrix.shape).copy()

    def inverse(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.offset) @ self._inverse.T


class FlowMapping(PointMap):
    """The time-t flow map X_t of an autonomous field"""

    def __init__(self, b: VectorField, t: float, cfg: Optional[IntegratorConfig] = None):
        self.b = b
        self.t = float(t)
        self.cfg = cfg or IntegratorConfig.default()
        self.dim = b.dim

    def __call__(self, x) -> np.ndarray:
        return flow_map(self.b, self.t, x, self.cfg)

    def jacobian(self, x) -> np.ndarray:
        return advance(self.b, self.t, x, self.cfg).jacobian

    def image_and_jacobian(self, x):
        sample = advance(self.b, self.t, x, self.cfg)
        return sample.endpoint, sample.jacobian

    def inverse(self, y) -> np.ndarray:
        return flow_map(self.b, -self.t, y, self.cfg, t0=self.t)


# ============================================================================
# Pairing, mass, boundary
# ============================================================================

def _chain_quadrature(chain: CurveChain):
    """GL nodes on every segment: points (S, q, d), tangents (S, d), segment weights (S,)"""
    starts, ends, weights = chain._segment_arrays()
    tangents = ends - starts
    points = starts[:, None, :] + GL_NODES[None, :, None] * tangents[:, None, :]
    return points, tangents, weights


def pair(T: Current, omega) -> float:
    """
    <T, omega> for a chain or an AC current.

    Chains: sum_i w_i sum_segments of the line integral by 5-point Gauss-Legendre.
    AC: grid quadrature of (chi v) . a.
    """
    _check_dims(T, omega)
    if isinstance(T, CurveChain):
        if not T.curves:
            return 0.0
        points, tangents, weights = _chain_quadrature(T)
        values = np.einsum("sqd,sd->sq", omega.proxy(points), tangents)
        return float(np.sum(weights * (values @ GL_WEIGHTS)))
    values = np.sum(T.samples() * omega.proxy(T.nodes()), axis=-1)
    return float(np.sum(values) * T.cell_volume)


def mass(T: Current) -> float:
    """
    Representation mass: sum w_i length(gamma_i) for chains, integral of |chi v| for AC.
    Equals M(T) only for cancellation-free inputs.
    """
    if isinstance(T, CurveChain):
        return float(sum(c.weight * c.length for c in T.curves))
    return float(np.sum(np.linalg.norm(T.samples(), axis=-1)) * T.cell_volume)


def boundary(T: Current) -> ZeroCurrent:
    """
    Chains: sum_i w_i (delta_{gamma_i(1)} - delta_{gamma_i(0)}), atoms at equal points merged.
    AC: -div(chi v) at the nodes, weighted by the cell volume.
    """
    if isinstance(T, CurveChain):
        if not T.curves:
            return ZeroCurrent.empty(T.dim)
        points = np.concatenate([[c.vertices[-1], c.vertices[0]] for c in T.curves])
        weights = np.concatenate([[c.weight, -c.weight] for c in T.curves])
        return ZeroCurrent(points, weights).consolidated()
    weights = -T.divergence_samples() * T.cell_volume
    return ZeroCurrent(T.nodes().reshape(-1, T.dim), weights.reshape(-1))


def weak_distance(first: Current, second: Current, forms: Sequence[TestForm1]) -> float:
    """Weak-star proximity proxy: max over the forms of |<T1, w> - <T2, w>|"""
    return float(max(abs(pair(first, w) - pair(second, w)) for w in forms))


# ============================================================================
# Pushforward
# ============================================================================

def push_chain(
    chain: CurveChain,
    mapping: PointMap,
    refine_tol: Optional[float] = None,
    max_vertices: int = MAX_VERTICES_PER_CURVE,
) -> Tuple[CurveChain, Dict[str, Any]]:
    """
    Map every vertex through f and split source segments whose midpoint image
    leaves the image chord by more than refine_tol.

    Args:
        refine_tol: Absolute tolerance; defaults to 1e-4 times the image diameter

    Returns:
        (pushed chain parametrised like the source, report with
        refine_tol, max_stretch, vertices, warnings)
    """
    curves = []
    warnings: List[str] = []
    max_stretch = 0.0
    total_vertices = 0
    for index, curve in enumerate(chain.curves):
        vertices = curve.vertices
        params = curve.params
        images = mapping(vertices)
        tol = refine_tol
        if tol is None:
            span = np.ptp(images, axis=0)
            tol = REFINE_REL_TOL * max(float(np.linalg.norm(span)), 1e-12)
        for _ in range(MAX_REFINE_PASSES):
            mids = 0.5 * (vertices[:-1] + vertices[1:])
            mid_images = mapping(mids)
            deviation = np.linalg.norm(mid_images - 0.5 * (images[:-1] + images[1:]), axis=-1)
            split = deviation > tol
            if not np.any(split):
                break
            if len(vertices) + int(np.sum(split)) > max_vertices:
                warnings.append(f"curve {index}: refinement budget of {max_vertices} vertices exceeded")
                break
            vertices, params, images = _insert_midpoints(vertices, params, images, mids, mid_images, split)
        else:
            warnings.append(f"curve {index}: refinement did not converge in {MAX_REFINE_PASSES} passes")
        source_len = np.linalg.norm(np.diff(vertices, axis=0), axis=-1)
        image_len = np.linalg.norm(np.diff(images, axis=0), axis=-1)
        max_stretch = max(max_stretch, float(np.max(image_len / source_len)))
        keep = np.concatenate([[True], image_len > 0.0])
        if np.sum(keep) < 2:
            warnings.append(f"curve {index}: collapsed to a point and was dropped")
            continue
        curves.append(WeightedCurve(curve.weight, images[keep], params[keep]))
        total_vertices += int(np.sum(keep))
    for message in warnings:
        logger.warning("Pushforward representation quality: %s", message)
    report = {
        "refine_tol": refine_tol if refine_tol is not None else "relative",
        "max_stretch": max_stretch,
        "vertices": total_vertices,
        "warnings": warnings,
    }
    return CurveChain(chain.dim, tuple(curves)), report


def _insert_midpoints(vertices, params, images, mids, mid_images, split):
    dim = vertices.shape[-1]
    count = len(vertices) + int(np.sum(split))
    new_vertices = np.empty((count, dim))
    new_images = np.empty((count, dim))
    new_params = np.empty(count)
    k = 0
    for i in range(len(vertices) - 1):
        new_vertices[k], new_images[k], new_params[k] = vertices[i], images[i], params[i]
        k += 1
        if split[i]:
            new_vertices[k], new_images[k] = mids[i], mid_images[i]
            new_params[k] = 0.5 * (params[i] + params[i + 1])
            k += 1
    new_vertices[k], new_images[k], new_params[k] = vertices[-1], images[-1], params[-1]
    return new_vertices, new_params, new_images


def escaped_mass_fraction(T: ACCurrent, mapping: PointMap) -> float:
    """Share of the mass of T whose image under the map lies outside T.box"""
    samples = T.samples()
    density = np.linalg.norm(samples, axis=-1)
    total = float(np.sum(density))
    if total == 0.0:
        return 0.0
    outside = ~T.box.contains(mapping(T.nodes()))
    return float(np.sum(density[outside])) / total


def push_ac(T: ACCurrent, mapping: PointMap) -> ACCurrent:
    """
    w(y) = (Df . (chi v))(f^{-1}(y)) / det Df(f^{-1}(y)) on the same grid,
    i.e. (grad X_t . v)(X_{-t}(y)) rho_t(y) for flow maps.
    """
    nodes = T.nodes()
    escaped = escaped_mass_fraction(T, mapping)
    if escaped > 0.0:
        logger.warning(
            "Pushforward of '%s' leaves the box: %.3g of the mass is truncated", T.field.name, escaped,
        )
    preimages = mapping.inverse(nodes)
    jac = mapping.jacobian(preimages)
    values = T.field.evaluate(0.0, preimages)
    if T.window is not None:
        values = T.window(preimages)[..., None] * values
    # no periodic wrap-in from preimages outside the box
    values = np.where(T.box.contains(preimages)[..., None], values, 0.0)
    pushed = np.einsum("...ij,...j->...i", jac, values) / np.linalg.det(jac)[..., None]
    grid = GridField(T.box, pushed, name=f"pushed({T.field.name})")
    return ACCurrent(grid, T.box, T.resolution, None)


def pushforward(T: Current, mapping: PointMap, refine_tol: Optional[float] = None) -> Current:
    """f_* T in the representation of T (see push_chain / push_ac)"""
    if T.dim != mapping.dim:
        raise DimensionError("Map and current dimensions differ")
    if isinstance(T, CurveChain):
        pushed, _ = push_chain(T, mapping, refine_tol)
        return pushed
    return push_ac(T, mapping)


def pair_pushforward_jacobian(T: Current, mapping: PointMap, omega) -> float:
    """
    <f_* T, omega> from the explicit pushforward formula: integrate
    omega(f(x))[Df(x) tau(x)] against the source measure, with no image resampling.
    """
    _check_dims(T, omega)
    if isinstance(T, CurveChain):
        if not T.curves:
            return 0.0
        points, tangents, weights = _chain_quadrature(T)
        images, jac = mapping.image_and_jacobian(points)
        pushed_tangents = np.einsum("sqij,sj->sqi", jac, tangents)
        values = np.sum(omega.proxy(images) * pushed_tangents, axis=-1)
        return float(np.sum(weights * (values @ GL_WEIGHTS)))
    nodes = T.nodes()
    images, jac = mapping.image_and_jacobian(nodes)
    pushed = np.einsum("...ij,...j->...i", jac, T.samples())
    return float(np.sum(omega.proxy(images) * pushed) * T.cell_volume)


def jacobian_mass(T: Current, mapping: PointMap) -> float:
    """integral of |Df[tau]| d||T||, the middle term of the pushforward mass estimate"""
    if isinstance(T, CurveChain):
        if not T.curves:
            return 0.0
        points, tangents, weights = _chain_quadrature(T)
        jac = mapping.jacobian(points)
        norms = np.linalg.norm(np.einsum("sqij,sj->sqi", jac, tangents), axis=-1)
        return float(np.sum(weights * (norms @ GL_WEIGHTS)))
    jac = mapping.jacobian(T.nodes())
    pushed = np.einsum("...ij,...j->...i", jac, T.samples())
    return float(np.sum(np.linalg.norm(pushed, axis=-1)) * T.cell_volume)


# ============================================================================
# Lie derivative
# ============================================================================

def lie_derivative_pair(T: Current, b: VectorField, omega, t: float = 0.0) -> float:
    """
    <L_b T, omega> = -<b ^ T, d omega> - <b ^ dT, omega>, with
    <b ^ T, d omega> = integral of d omega(b, tau) and <b ^ dT, omega> = <dT, omega(b)>.
    """
    _check_dims(T, omega)
    if b.dim != T.dim:
        raise DimensionError("Field and current dimensions differ")
    if isinstance(T, CurveChain):
        if not T.curves:
            return 0.0
        points, tangents, weights = _chain_quadrature(T)
        bvals = b.evaluate(t, points)
        wedge = np.einsum("sqi,sqij,sj->sq", bvals, omega.d(points), tangents)
        interior = float(np.sum(weights * (wedge @ GL_WEIGHTS)))
    else:
        nodes = T.nodes()
        wedge = np.einsum("...i,...ij,...j->...", b.evaluate(t, nodes), omega.d(nodes), T.samples(t))
        interior = float(np.sum(wedge) * T.cell_volume)
    edge = boundary(T).pair(lambda p: np.sum(omega.proxy(p) * b.evaluate(t, p), axis=-1))
    return -interior - edge


def lie_derivative_field(b: VectorField, v: VectorField, t: float = 0.0) -> AnalyticField:
    """Pointwise density -[b, v] + (div b) v of L_b(T_v)"""
    if b.dim != v.dim:
        raise DimensionError("Lie derivative of fields with different dimensions")

    def func(time, x):
        return -lie_bracket(b, v, time, x) + divergence(b, time, x)[..., None] * v.evaluate(time, x)

    return AnalyticField(b.dim, func, None, name=f"lie({b.name},{v.name})", autonomous=b.autonomous and v.autonomous)


def lie_derivative_ac(v: Union[ACCurrent, VectorField], b: VectorField, box: Optional[Box] = None,
                      resolution=None, window: Optional[Bump] = None) -> ACCurrent:
    """
    L_b(T_v) = (-[b, v] + (div b) v) Lebesgue, wrapped as an AC current.

    Args:
        v: An AC current, or a field together with box/resolution/window
        b: Transporting field
    """
    if isinstance(v, ACCurrent):
        T = v
    else:
        if box is None or resolution is None:
            raise ConfigError("lie_derivative_ac on a bare field needs a box and a resolution")
        T = ACCurrent(v, box, resolution, window)
    if T._grid_aligned() and T.window is None:
        nodes = T.nodes()
        samples = T.samples()
        jac_v = T.jacobian_samples()
        jac_b = b.jacobian(0.0, nodes)
        bvals = b.evaluate(0.0, nodes)
        bracket = np.einsum("...ij,...j->...i", jac_b, samples) - np.einsum("...ij,...j->...i", jac_v, bvals)
        density = -bracket + np.trace(jac_b, axis1=-2, axis2=-1)[..., None] * samples
        return ACCurrent(GridField(T.box, density, name="lie_density"), T.box, T.resolution, None)
    effective = T.field if T.window is None else windowed(T.field, T.window)
    return ACCurrent(lie_derivative_field(b, effective), T.box, T.resolution, None)


# ============================================================================
# Formal sums and constructors
# ============================================================================

def scale_current(T: Current, factor: float) -> Current:
    """factor * T; a negative factor reverses chain orientation"""
    if isinstance(T, CurveChain):
        if factor == 0.0:
            return CurveChain(T.dim, ())
        curves = []
        for c in T.curves:
            if factor > 0:
                curves.append(WeightedCurve(c.weight * factor, c.vertices, c.params))
            else:
                curves.append(WeightedCurve(c.weight * -factor, c.vertices[::-1].copy(), 1.0 - c.params[::-1]))
        return CurveChain(T.dim, tuple(curves))
    grid = GridField(T.box, factor * T.samples(), name=T.field.name)
    return ACCurrent(grid, T.box, T.resolution, None)


def add_currents(first: Current, second: Current) -> Current:
    """Representation-level sum (chains concatenate, AC samples add on a shared grid)"""
    if first.dim != second.dim:
        raise DimensionError("Adding currents of different dimensions")
    if isinstance(first, CurveChain) and isinstance(second, CurveChain):
        return CurveChain(first.dim, first.curves + second.curves)
    if isinstance(first, ACCurrent) and isinstance(second, ACCurrent):
        if first.box != second.box or first.resolution != second.resolution:
            raise ConfigError("AC currents must share box and resolution to be added")
        grid = GridField(first.box, first.samples() + second.samples(), name="sum")
        return ACCurrent(grid, first.box, first.resolution, None)
    raise ConfigError("Cannot add a curve chain and an AC current")


def segment(start, end, weight: float = 1.0) -> CurveChain:
    start = np.asarray(start, dtype=float)
    return CurveChain(len(start), (make_curve([start, end], weight),))


def polyline(vertices, weight: float = 1.0) -> CurveChain:
    vertices = np.asarray(vertices, dtype=float)
    return CurveChain(vertices.shape[-1], (make_curve(vertices, weight),))


def circle(center=(0.0, 0.0), radius: float = 1.0, n: int = 512, weight: float = 1.0) -> CurveChain:
    """Closed regular n-gon inscribed in the circle, counter-clockwise in the (x, y) plane"""
    center = np.asarray(center, dtype=float)
    angles = np.linspace(0.0, 2.0 * np.pi, n + 1)
    vertices = np.zeros((n + 1, len(center)))
    vertices[:, 0] = np.cos(angles)
    vertices[:, 1] = np.sin(angles)
    vertices = center + radius * vertices
    vertices[-1] = vertices[0]
    return CurveChain(len(center), (make_curve(vertices, weight),))


def square_loop(center=(0.0, 0.0), side: float = 1.0, weight: float = 1.0) -> CurveChain:
    cx, cy = center[0], center[1]
    half = 0.5 * side
    vertices = [
        (cx - half, cy - half), (cx + half, cy - half),
        (cx + half, cy + half), (cx - half, cy + half), (cx - half, cy - half),
    ]
    return CurveChain(2, (make_curve(vertices, weight),))


BUILTIN_SHAPES = ("segment", "circle", "rings", "loop")


def builtin_chain(shape: str, dim: int = 2, **params) -> CurveChain:
    """Named initial shapes for scenarios: segment, circle, rings (concentric circles), loop"""
    if shape == "segment":
        start = params.get("start", (0.0,) * dim)
        end = params.get("end", (1.0,) + (0.0,) * (dim - 1))
        return segment(start, end, params.get("weight", 1.0))
    if shape == "circle":
        center = params.get("center", (0.0,) * dim)
        return circle(center, params.get("radius", 1.0), int(params.get("n", 512)), params.get("weight", 1.0))
    if shape == "rings":
        center = params.get("center", (0.0,) * dim)
        n = int(params.get("n", 512))
        curves = []
        for radius in params.get("radii", (0.5, 1.0)):
            curves.extend(circle(center, radius, n, params.get("weight", 1.0)).curves)
        return CurveChain(dim, tuple(curves))
    if shape == "loop":
        if dim != 2:
            raise DimensionError("The square loop shape is 2D")
        return square_loop(params.get("center", (0.0, 0.0)), params.get("side", 1.0), params.get("weight", 1.0))
    raise ConfigError(f"Unknown initial shape '{shape}' (expected one of {BUILTIN_SHAPES})")


# ============================================================================
# Serialization
# ============================================================================

def chain_to_json(chain: CurveChain) -> List[Dict[str, Any]]:
    return [{"weight": c.weight, "vertices": c.vertices.tolist()} for c in chain.curves]


def chain_from_json(data: Union[str, List[Dict[str, Any]]]) -> CurveChain:
    """
    Read the chain layout [{"weight": w, "vertices": [[...], ...]}, ...].

    Raises:
        ConfigError: malformed layout
    """
    if isinstance(data, str):
        data = json.loads(data)
    try:
        curves = tuple(make_curve(item["vertices"], item.get("weight", 1.0)) for item in data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"Malformed curve chain: {exc}") from exc
    if not curves:
        raise ConfigError("A curve chain file needs at least one curve")
    return CurveChain(curves[0].vertices.shape[-1], curves)


def load_chain(path: Union[str, Path]) -> CurveChain:
    with open(path, "r", encoding="utf-8") as f:
        return chain_from_json(json.load(f))


def write_ac(T: ACCurrent, path: Union[str, Path], fmt: str = "binary") -> Path:
    """
    Write <path>.json (header) plus <path>.bin (row-major little-endian float64
    samples, shape resolution + (d,)) or <path>.csv (node coordinates then components).
    """
    path = Path(path)
    header = {
        "dim": T.dim,
        "box_lo": list(T.box.lo),
        "box_hi": list(T.box.hi),
        "resolution": list(T.resolution),
        "layout": "row-major",
        "dtype": "<f8",
        "format": fmt,
    }
    samples = T.samples()
    if fmt == "binary":
        samples.astype("<f8").tofile(path.with_suffix(".bin"))
    elif fmt == "csv":
        nodes = T.nodes().reshape(-1, T.dim)
        axes = ["x", "y", "z"][: T.dim]
        table = np.hstack([nodes, samples.reshape(-1, T.dim)])
        np.savetxt(path.with_suffix(".csv"), table, delimiter=",",
                   header=",".join(axes + [f"v{a}" for a in axes]), comments="")
    else:
        raise ConfigError(f"Unknown AC export format '{fmt}'")
    header_path = path.with_suffix(".json")
    header_path.write_text(json.dumps(header, indent=2))
    return header_path


def read_ac(header_path: Union[str, Path]) -> ACCurrent:
    header_path = Path(header_path)
    header = json.loads(header_path.read_text())
    box = Box(tuple(header["box_lo"]), tuple(header["box_hi"]))
    resolution = tuple(header["resolution"])
    shape = resolution + (header["dim"],)
    if header.get("format", "binary") == "binary":
        samples = np.fromfile(header_path.with_suffix(".bin"), dtype="<f8").reshape(shape)
    else:
        table = np.loadtxt(header_path.with_suffix(".csv"), delimiter=",", skiprows=1)
        samples = table[:, header["dim"]:].reshape(shape)
    return ACCurrent(GridField(box, samples, name=header_path.stem), box, resolution, None)
