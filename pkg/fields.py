"""
Vector fields on R^d (d = 2, 3): analytic closed-form fields, periodic grid
fields, the builtin catalog, and the differential operators every other
module consumes (Jacobian, divergence, curl, Lie bracket).

Convention: jacobian(...)[..., i, j] = d_j f_i, so (grad b . v)_i = sum_j d_j b_i v_j.
"""
import logging
from dataclasses import dataclass
from itertools import product
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from errors import DimensionError, FieldDomainError
from field_expr import FieldExpr, evaluate_expr, parse_field_expr, variables_of
from forms import Bump

logger = logging.getLogger(__name__)

FD_REL_STEP = 1e-5
FD_MIN_STEP = 1e-5

ArrayFn = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo, hi) used as a periodic domain or quadrature region"""

    lo: Tuple[float, ...]
    hi: Tuple[float, ...]

    @classmethod
    def cube(cls, dim: int, half_width: float) -> "Box":
        return cls((-half_width,) * dim, (half_width,) * dim)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def lengths(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=float) - np.asarray(self.lo, dtype=float)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def spacing(self, resolution: Sequence[int]) -> np.ndarray:
        return self.lengths / np.asarray(resolution, dtype=float)

    def nodes(self, resolution: Sequence[int]) -> np.ndarray:
        """Periodic nodes lo + i*h, shape (n_1, ..., n_d, d)"""
        axes = [
            lo + h * np.arange(n)
            for lo, h, n in zip(self.lo, self.spacing(resolution), resolution)
        ]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.lo) - tol
        hi = np.asarray(self.hi) + tol
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def wrap(self, x) -> np.ndarray:
        lo = np.asarray(self.lo, dtype=float)
        return lo + np.mod(np.asarray(x, dtype=float) - lo, self.lengths)


def resolution_tuple(resolution: Union[int, Sequence[int]], dim: int) -> Tuple[int, ...]:
    if isinstance(resolution, (int, np.integer)):
        return (int(resolution),) * dim
    resolution = tuple(int(n) for n in resolution)
    if len(resolution) != dim:
        raise DimensionError(f"Resolution {resolution} does not match dimension {dim}")
    return resolution


class VectorField:
    """
    Base class for fields f(t, x). Points are arrays of shape (..., d); results
    have shape (..., d) for values and (..., d, d) for Jacobians.
    """

    dim: int
    name: str
    autonomous: bool = True
    sup_bound: Optional[float] = None
    lipschitz: Optional[float] = None

    @property
    def has_analytic_jacobian(self) -> bool:
        return False

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise DimensionError(f"Field '{self.name}' is {self.dim}D, got points of shape {x.shape}")
        return x

    def evaluate(self, t: float, x) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, t: float, x) -> np.ndarray:
        return fd_jacobian(self, t, x)

    def __call__(self, t: float, x) -> np.ndarray:
        return self.evaluate(t, x)


def fd_jacobian(f: VectorField, t: float, x) -> np.ndarray:
    """Central differences with per-axis step max(1e-5, 1e-5*|x_j|)"""
    x = f._check(x)
    columns = []
    for j in range(f.dim):
        h = np.maximum(FD_MIN_STEP, FD_REL_STEP * np.abs(x[..., j]))
        step = np.zeros_like(x)
        step[..., j] = h
        diff = f.evaluate(t, x + step) - f.evaluate(t, x - step)
        columns.append(diff / (2.0 * h)[..., None])
    return np.stack(columns, axis=-1)


class AnalyticField(VectorField):
    """Closed-form field, optionally time-dependent, optionally with an analytic Jacobian"""

    def __init__(
        self,
        dim: int,
        func: ArrayFn,
        jac: Optional[ArrayFn] = None,
        name: str = "analytic",
        autonomous: bool = True,
        sup_bound: Optional[float] = None,
        lipschitz: Optional[float] = None,
    ):
        if dim not in (2, 3):
            raise DimensionError(f"Fields must be 2D or 3D, got {dim}")
        self.dim = dim
        self.func = func
        self.jac = jac
        self.name = name
        self.autonomous = autonomous
        self.sup_bound = sup_bound
        self.lipschitz = lipschitz

    @classmethod
    def from_exprs(
        cls,
        components: Sequence[Union[str, FieldExpr]],
        jacobian: Optional[Sequence[Sequence[Union[str, FieldExpr]]]] = None,
        name: str = "expr",
        sup_bound: Optional[float] = None,
        lipschitz: Optional[float] = None,
    ) -> "AnalyticField":
        """
        Build a field from one expression per component.

        Args:
            components: Expression text or parsed trees, one per axis
            jacobian: Optional d x d expressions, row i column j = d_j f_i

        Raises:
            ExprSyntaxError, UnknownIdentifierError: malformed expression
            DimensionError: z used in a 2D field or wrong matrix shape
        """
        exprs = [parse_field_expr(c) if isinstance(c, str) else c for c in components]
        dim = len(exprs)
        jac_exprs = None
        if jacobian is not None:
            jac_exprs = [[parse_field_expr(c) if isinstance(c, str) else c for c in row] for row in jacobian]
            if len(jac_exprs) != dim or any(len(row) != dim for row in jac_exprs):
                raise DimensionError("Jacobian expressions must form a d x d matrix")
        used = set().union(*(variables_of(e) for e in exprs))
        if dim == 2 and "z" in used:
            raise DimensionError("Variable z used in a 2D field")

        def env(t, x):
            names = {"x": x[..., 0], "y": x[..., 1], "t": t}
            if dim == 3:
                names["z"] = x[..., 2]
            return names

        def func(t, x):
            values = env(t, x)
            return np.stack([np.broadcast_to(evaluate_expr(e, values), x.shape[:-1]) for e in exprs], axis=-1)

        jac = None
        if jac_exprs is not None:
            def jac(t, x):
                values = env(t, x)
                rows = [
                    np.stack([np.broadcast_to(evaluate_expr(e, values), x.shape[:-1]) for e in row], axis=-1)
                    for row in jac_exprs
                ]
                return np.stack(rows, axis=-2)

        return cls(dim, func, jac, name, autonomous="t" not in used, sup_bound=sup_bound, lipschitz=lipschitz)

    @property
    def has_analytic_jacobian(self) -> bool:
        return self.jac is not None

    def evaluate(self, t: float, x) -> np.ndarray:
        x = self._check(x)
        return np.asarray(self.func(t, x), dtype=float)

    def jacobian(self, t: float, x) -> np.ndarray:
        if self.jac is None:
            return fd_jacobian(self, t, x)
        x = self._check(x)
        return np.asarray(self.jac(t, x), dtype=float)

    def __repr__(self) -> str:
        return f"AnalyticField(name={self.name!r}, dim={self.dim})"


class GridField(VectorField):
    """
    Field sampled on a box. Periodic fields use nodes lo + i*h with h = L/n and
    wrap around; non-periodic fields use nodes spanning [lo, hi] inclusive and
    reject queries outside the box. Interpolation is multilinear (order 1) or
    cubic spline (order 3).
    """

    def __init__(
        self,
        box: Box,
        samples: np.ndarray,
        order: int = 1,
        periodic: bool = True,
        name: str = "grid",
        time: float = 0.0,
    ):
        samples = np.array(samples, dtype=float)
        dim = box.dim
        if samples.ndim != dim + 1 or samples.shape[-1] != dim:
            raise DimensionError(f"Samples of shape {samples.shape} do not describe a {dim}D field")
        if order not in (1, 3):
            raise ValueError(f"Interpolation order must be 1 or 3, got {order}")
        self.dim = dim
        self.box = box
        self.samples = samples
        self.samples.setflags(write=False)
        self.order = order
        self.periodic = periodic
        self.name = name
        self.time = time
        self.autonomous = True
        self.sup_bound = float(np.max(np.linalg.norm(samples, axis=-1))) if samples.size else 0.0
        self.lipschitz = None

    @classmethod
    def from_field(
        cls,
        field: VectorField,
        box: Box,
        resolution: Union[int, Sequence[int]],
        t: float = 0.0,
        order: int = 1,
    ) -> "GridField":
        resolution = resolution_tuple(resolution, box.dim)
        samples = field.evaluate(t, box.nodes(resolution))
        return cls(box, samples, order=order, periodic=True, name=f"grid({field.name})", time=t)

    @property
    def resolution(self) -> Tuple[int, ...]:
        return self.samples.shape[:-1]

    @property
    def spacing(self) -> np.ndarray:
        n = np.asarray(self.resolution, dtype=float)
        return self.box.lengths / (n if self.periodic else n - 1)

    @property
    def has_analytic_jacobian(self) -> bool:
        return self.order == 1

    def _grid_coords(self, x: np.ndarray) -> np.ndarray:
        coords = (x - np.asarray(self.box.lo)) / self.spacing
        if self.periodic:
            return np.mod(coords, np.asarray(self.resolution, dtype=float))
        upper = np.asarray(self.resolution, dtype=float) - 1
        if np.any(coords < -1e-12) or np.any(coords > upper + 1e-12):
            raise FieldDomainError(f"Query outside the box of non-periodic field '{self.name}'")
        return np.clip(coords, 0.0, upper)

    def _cells(self, x: np.ndarray):
        coords = self._grid_coords(x)
        n = np.asarray(self.resolution)
        base = np.floor(coords).astype(int)
        if not self.periodic:
            base = np.minimum(base, n - 2)
        frac = coords - base
        return base, frac, n

    def _corner_index(self, base, corner, n):
        idx = base + np.asarray(corner)
        if self.periodic:
            idx = np.mod(idx, n)
        return tuple(idx[..., k] for k in range(self.dim))

    def evaluate(self, t: float, x) -> np.ndarray:
        x = self._check(x)
        if self.order == 3:
            return self._evaluate_cubic(x)
        base, frac, n = self._cells(x)
        out = np.zeros(x.shape)
        for corner in product((0, 1), repeat=self.dim):
            weight = np.ones(x.shape[:-1])
            for k, c in enumerate(corner):
                weight = weight * (frac[..., k] if c else 1.0 - frac[..., k])
            out += weight[..., None] * self.samples[self._corner_index(base, corner, n)]
        return out

    def _evaluate_cubic(self, x: np.ndarray) -> np.ndarray:
        coords = self._grid_coords(x)
        flat = coords.reshape(-1, self.dim).T
        mode = "grid-wrap" if self.periodic else "nearest"
        components = [
            ndimage.map_coordinates(self.samples[..., c], flat, order=3, mode=mode)
            for c in range(self.dim)
        ]
        return np.stack(components, axis=-1).reshape(x.shape)

    def jacobian(self, t: float, x) -> np.ndarray:
        """Piecewise Jacobian of the multilinear interpolant (order 1) or FD (order 3)"""
        if self.order == 3:
            return fd_jacobian(self, t, x)
        x = self._check(x)
        base, frac, n = self._cells(x)
        h = self.spacing
        jac = np.zeros(x.shape + (self.dim,))
        for corner in product((0, 1), repeat=self.dim):
            values = self.samples[self._corner_index(base, corner, n)]
            for j in range(self.dim):
                weight = np.full(x.shape[:-1], (1.0 if corner[j] else -1.0) / h[j])
                for k, c in enumerate(corner):
                    if k != j:
                        weight = weight * (frac[..., k] if c else 1.0 - frac[..., k])
                jac[..., :, j] += weight[..., None] * values
        return jac

    def __repr__(self) -> str:
        return f"GridField(name={self.name!r}, resolution={self.resolution}, order={self.order})"


def windowed(field: VectorField, bump: Bump) -> AnalyticField:
    """Product field chi * f with Jacobian chi * grad f + f (x) grad chi"""
    if bump.dim != field.dim:
        raise DimensionError("Window and field dimensions differ")

    def func(t, x):
        return bump(x)[..., None] * field.evaluate(t, x)

    def jac(t, x):
        return bump(x)[..., None, None] * field.jacobian(t, x) + field.evaluate(t, x)[..., :, None] * bump.gradient(x)[..., None, :]

    return AnalyticField(
        field.dim, func, jac, name=f"windowed_{field.name}", autonomous=field.autonomous,
    )


# ============================================================================
# Builtin catalog
# ============================================================================

DEFAULT_WINDOW_RADIUS = 1.5


def _constant(dim: int, value: Optional[Sequence[float]] = None) -> AnalyticField:
    c = np.zeros(dim) if value is None else np.asarray(value, dtype=float)
    if value is None:
        c[0] = 1.0
    if c.shape != (dim,):
        raise DimensionError(f"Constant value {value} is not a {dim}-vector")
    return AnalyticField(
        dim,
        lambda t, x: np.broadcast_to(c, x.shape).copy(),
        lambda t, x: np.zeros(x.shape + (dim,)),
        name="constant", sup_bound=float(np.linalg.norm(c)), lipschitz=0.0,
    )


def _rotation2d(dim: int = 2) -> AnalyticField:
    generator = np.array([[0.0, -1.0], [1.0, 0.0]])
    return AnalyticField(
        2,
        lambda t, x: np.stack([-x[..., 1], x[..., 0]], axis=-1),
        lambda t, x: np.broadcast_to(generator, x.shape[:-1] + (2, 2)).copy(),
        name="rotation2d", lipschitz=1.0,
    )


def _dilation(dim: int) -> AnalyticField:
    return AnalyticField(
        dim,
        lambda t, x: np.array(x, dtype=float),
        lambda t, x: np.broadcast_to(np.eye(dim), x.shape[:-1] + (dim, dim)).copy(),
        name="dilation", lipschitz=1.0,
    )


def _shear2d(dim: int = 2) -> AnalyticField:
    generator = np.array([[0.0, 1.0], [0.0, 0.0]])
    return AnalyticField(
        2,
        lambda t, x: np.stack([x[..., 1], np.zeros(x.shape[:-1])], axis=-1),
        lambda t, x: np.broadcast_to(generator, x.shape[:-1] + (2, 2)).copy(),
        name="shear2d", lipschitz=1.0,
    )


def _rotation3d(dim: int = 3) -> AnalyticField:
    generator = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    return AnalyticField(
        3,
        lambda t, x: np.stack([-x[..., 1], x[..., 0], np.zeros(x.shape[:-1])], axis=-1),
        lambda t, x: np.broadcast_to(generator, x.shape[:-1] + (3, 3)).copy(),
        name="rotation3d", lipschitz=1.0,
    )


def _abc_flow(dim: int = 3, a: float = 1.0, b: float = 1.0, c: float = 1.0) -> AnalyticField:
    def func(t, x):
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        return np.stack([
            a * np.sin(Z) + c * np.cos(Y),
            b * np.sin(X) + a * np.cos(Z),
            c * np.sin(Y) + b * np.cos(X),
        ], axis=-1)

    def jac(t, x):
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        zero = np.zeros(x.shape[:-1])
        return np.stack([
            np.stack([zero, -c * np.sin(Y), a * np.cos(Z)], axis=-1),
            np.stack([b * np.cos(X), zero, -a * np.sin(Z)], axis=-1),
            np.stack([-b * np.sin(X), c * np.cos(Y), zero], axis=-1),
        ], axis=-2)

    return AnalyticField(
        3, func, jac, name="abc_flow",
        sup_bound=float(np.sqrt(3.0) * 2.0 * max(a, b, c)),
        lipschitz=float(np.sqrt(2.0 * (a * a + b * b + c * c))),
    )


_BUILTINS: Dict[str, Tuple[Callable[..., AnalyticField], Tuple[int, ...]]] = {
    "constant": (_constant, (2, 3)),
    "rotation2d": (_rotation2d, (2,)),
    "dilation": (_dilation, (2, 3)),
    "shear2d": (_shear2d, (2,)),
    "rotation3d": (_rotation3d, (3,)),
    "abc_flow": (_abc_flow, (3,)),
}


def list_builtins() -> List[Dict[str, object]]:
    """Names and supported dimensions of the builtin catalog (windowed_<name> variants included)"""
    rows = []
    for name, (_, dims) in _BUILTINS.items():
        rows.append({"name": name, "dims": list(dims)})
        rows.append({"name": f"windowed_{name}", "dims": list(dims)})
    return rows


def builtin(name: str, dim: Optional[int] = None, window_radius: float = DEFAULT_WINDOW_RADIUS, **params) -> AnalyticField:
    """
    Look up a builtin field.

    Args:
        name: Catalog name, optionally prefixed with "windowed_"
        dim: Dimension for fields that exist in 2D and 3D (defaults to the first supported)
        window_radius: Radius of the bump used by windowed variants (centred at the origin)
        **params: Field parameters, e.g. value=(1, 0) for "constant"

    Raises:
        KeyError: unknown name
        DimensionError: unsupported dimension
    """
    base_name = name[len("windowed_"):] if name.startswith("windowed_") else name
    if base_name not in _BUILTINS:
        raise KeyError(f"Unknown builtin field '{name}'")
    factory, dims = _BUILTINS[base_name]
    dim = dims[0] if dim is None else int(dim)
    if dim not in dims:
        raise DimensionError(f"Builtin '{base_name}' exists in dimensions {dims}, not {dim}")
    field = factory(dim, **params)
    if base_name != name:
        field = windowed(field, Bump((0.0,) * dim, window_radius))
    return field


def builtin_catalog() -> List[AnalyticField]:
    """The six builtin fields at their default dimension"""
    return [builtin(name) for name in _BUILTINS]


# ============================================================================
# Operators
# ============================================================================

def evaluate(f: VectorField, t: float, x) -> np.ndarray:
    """f(t, x); the time argument is ignored by autonomous fields"""
    return f.evaluate(t, x)


def jacobian(f: VectorField, t: float, x) -> np.ndarray:
    """Analytic Jacobian when available, else central finite differences"""
    return f.jacobian(t, x)


def divergence(f: VectorField, t: float, x) -> np.ndarray:
    return np.trace(f.jacobian(t, x), axis1=-2, axis2=-1)


def curl3(f: VectorField, t: float, x) -> np.ndarray:
    if f.dim != 3:
        raise DimensionError(f"curl3 needs a 3D field, '{f.name}' is {f.dim}D")
    J = f.jacobian(t, x)
    return np.stack([
        J[..., 2, 1] - J[..., 1, 2],
        J[..., 0, 2] - J[..., 2, 0],
        J[..., 1, 0] - J[..., 0, 1],
    ], axis=-1)


def lie_bracket(b: VectorField, v: VectorField, t: float, x) -> np.ndarray:
    """[b, v] = grad b . v - grad v . b"""
    if b.dim != v.dim:
        raise DimensionError(f"Lie bracket of a {b.dim}D and a {v.dim}D field")
    first = np.einsum("...ij,...j->...i", b.jacobian(t, x), v.evaluate(t, x))
    second = np.einsum("...ij,...j->...i", v.jacobian(t, x), b.evaluate(t, x))
    return first - second


def check_jacobian(f: VectorField, box: Optional[Box] = None, n: int = 1000, seed: int = 0, t: float = 0.0) -> float:
    """
    Compare the analytic Jacobian against central differences at random points.

    Returns:
        Max over points of |J_analytic - J_fd|_F / max(|J_analytic|_F, 1)
    """
    box = box or Box.cube(f.dim, 2.0)
    rng = np.random.default_rng(seed)
    points = rng.uniform(box.lo, box.hi, size=(n, f.dim))
    analytic = f.jacobian(t, points)
    numeric = fd_jacobian(f, t, points)
    err = np.linalg.norm(analytic - numeric, axis=(-2, -1))
    scale = np.maximum(np.linalg.norm(analytic, axis=(-2, -1)), 1.0)
    return float(np.max(err / scale))


def estimate_sup_norm(f: VectorField, box: Box, resolution: Union[int, Sequence[int]] = 32, t: float = 0.0) -> float:
    nodes = box.nodes(resolution_tuple(resolution, box.dim))
    return float(np.max(np.linalg.norm(f.evaluate(t, nodes), axis=-1)))


def estimate_divergence_sup(f: VectorField, box: Box, resolution: Union[int, Sequence[int]] = 32, t: float = 0.0) -> float:
    nodes = box.nodes(resolution_tuple(resolution, box.dim))
    return float(np.max(np.abs(divergence(f, t, nodes))))


def central_jacobian(samples: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    """
    Periodic second-order central differences of grid samples.

    Args:
        samples: Array (n_1, ..., n_d, d)
        spacing: Grid step per axis

    Returns:
        Array (n_1, ..., n_d, d, d) with [..., i, j] = d_j f_i
    """
    dim = samples.ndim - 1
    columns = [
        (np.roll(samples, -1, axis=j) - np.roll(samples, 1, axis=j)) / (2.0 * spacing[j])
        for j in range(dim)
    ]
    return np.stack(columns, axis=-1)


def central_divergence(samples: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    dim = samples.ndim - 1
    return sum(
        (np.roll(samples[..., j], -1, axis=j) - np.roll(samples[..., j], 1, axis=j)) / (2.0 * spacing[j])
        for j in range(dim)
    )


def gaussian_curl(dim: int = 3, center: Optional[Sequence[float]] = None, width: float = 0.5, amplitude: float = 1.0) -> AnalyticField:
    """
    Divergence-free field (d_y g, -d_x g, 0) with g a Gaussian of the given
    width around `center`: the curl of (0, 0, g) in 3D, the skew gradient in 2D.
    """
    if dim not in (2, 3):
        raise DimensionError(f"gaussian_curl exists in 2D and 3D, not {dim}")
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    s2 = width * width

    def g(x):
        d = x - c
        return amplitude * np.exp(-np.sum(d * d, axis=-1) / (2.0 * s2)), d

    def func(t, x):
        value, d = g(x)
        out = np.zeros(x.shape)
        out[..., 0] = -d[..., 1] / s2 * value
        out[..., 1] = d[..., 0] / s2 * value
        return out

    def jac(t, x):
        value, d = g(x)
        hessian = (d[..., :, None] * d[..., None, :] / (s2 * s2) - np.eye(dim) / s2) * value[..., None, None]
        out = np.zeros(x.shape + (dim,))
        out[..., 0, :] = hessian[..., 1, :]
        out[..., 1, :] = -hessian[..., 0, :]
        return out

    return AnalyticField(dim, func, jac, name="gaussian_curl")
