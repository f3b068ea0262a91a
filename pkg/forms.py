"""
Compactly supported test objects: the smooth bump window, polynomial
coefficients, test 1-forms with their exterior derivative, and the fixed
25-form catalog used as a weak-star proximity battery.
"""
from dataclasses import dataclass, field
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import DimensionError

Exponent = Tuple[int, ...]


@dataclass(frozen=True)
class Bump:
    """
    Smooth window supported in the closed ball of `radius` around `center`.

    With plateau == 0 the profile is (1 - |x-c|^2/R^2)^4. With a positive
    plateau the window is identically 1 for |x-c| <= plateau and decays with
    (1 - q^2)^4, q = (|x-c|^2 - r0^2) / (R^2 - r0^2).
    """

    center: Tuple[float, ...]
    radius: float
    plateau: float = 0.0

    def __post_init__(self):
        if self.radius <= 0 or not (0.0 <= self.plateau < self.radius):
            raise ValueError(f"Invalid bump radii: radius={self.radius}, plateau={self.plateau}")

    @property
    def dim(self) -> int:
        return len(self.center)

    def _u(self, x: np.ndarray):
        diff = x - np.asarray(self.center, dtype=float)
        r2 = np.sum(diff * diff, axis=-1)
        if self.plateau == 0.0:
            u = r2 / self.radius**2
            du = 2.0 * diff / self.radius**2
        else:
            span = self.radius**2 - self.plateau**2
            q = np.clip((r2 - self.plateau**2) / span, 0.0, 1.0)
            u = q * q
            inside = ((q > 0.0) & (q < 1.0))[..., None]
            du = np.where(inside, 2.0 * q[..., None] * 2.0 * diff / span, 0.0)
        return u, du

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u, _ = self._u(x)
        return np.where(u < 1.0, (1.0 - np.minimum(u, 1.0)) ** 4, 0.0)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u, du = self._u(x)
        inside = u < 1.0
        factor = np.where(inside, -4.0 * (1.0 - np.minimum(u, 1.0)) ** 3, 0.0)
        return factor[..., None] * du

    def support_radius(self) -> float:
        return self.radius


@dataclass(frozen=True)
class Polynomial:
    """Multivariate polynomial as {exponent tuple: coefficient}"""

    dim: int
    terms: Dict[Exponent, float] = field(default_factory=dict)

    @classmethod
    def constant(cls, dim: int, value: float) -> "Polynomial":
        return cls(dim, {(0,) * dim: float(value)})

    @classmethod
    def monomial(cls, exponent: Sequence[int], coef: float = 1.0) -> "Polynomial":
        return cls(len(exponent), {tuple(int(e) for e in exponent): float(coef)})

    @property
    def degree(self) -> int:
        return max((sum(e) for e, c in self.terms.items() if c != 0.0), default=0)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms.get(e, 0.0) + c
        return Polynomial(self.dim, terms)

    def scaled(self, factor: float) -> "Polynomial":
        return Polynomial(self.dim, {e: c * factor for e, c in self.terms.items()})

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for exponent, coef in self.terms.items():
            if coef == 0.0:
                continue
            term = np.full(x.shape[:-1], coef)
            for axis, power in enumerate(exponent):
                if power:
                    term = term * x[..., axis] ** power
            out = out + term
        return out

    def derivative(self, axis: int) -> "Polynomial":
        terms = {}
        for exponent, coef in self.terms.items():
            power = exponent[axis]
            if power == 0 or coef == 0.0:
                continue
            lowered = list(exponent)
            lowered[axis] -= 1
            key = tuple(lowered)
            terms[key] = terms.get(key, 0.0) + coef * power
        return Polynomial(self.dim, terms)

    def gradient(self, x) -> np.ndarray:
        return np.stack([self.derivative(axis)(x) for axis in range(self.dim)], axis=-1)


@dataclass(frozen=True)
class TestForm1:
    """
    Compactly supported 1-form a(x)·dx with proxy vector a = bump * (alpha_1, ..., alpha_d).

    d() returns the exterior derivative as the antisymmetric matrix
    W_ij = d_i a_j - d_j a_i, so that d(omega)(u, w) = u^T W w.
    """

    __test__ = False  # not a pytest class

    coefficients: Tuple[Polynomial, ...]
    bump: Optional[Bump] = None
    label: str = ""

    def __post_init__(self):
        if self.bump is not None and self.bump.dim != self.dim:
            raise DimensionError("Bump and coefficient dimensions differ")
        if any(p.degree > 4 for p in self.coefficients):
            raise ValueError("Test form coefficients must have total degree <= 4")

    @property
    def dim(self) -> int:
        return len(self.coefficients)

    def _window(self, x):
        if self.bump is None:
            return np.ones(x.shape[:-1]), np.zeros(x.shape)
        return self.bump(x), self.bump.gradient(x)

    def proxy(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        phi, _ = self._window(x)
        return np.stack([phi * p(x) for p in self.coefficients], axis=-1)

    def proxy_jacobian(self, x) -> np.ndarray:
        """J[..., i, j] = d_j a_i"""
        x = np.asarray(x, dtype=float)
        phi, dphi = self._window(x)
        rows = []
        for p in self.coefficients:
            rows.append(phi[..., None] * p.gradient(x) + p(x)[..., None] * dphi)
        return np.stack(rows, axis=-2)

    def d(self, x) -> np.ndarray:
        jac = self.proxy_jacobian(x)
        return np.swapaxes(jac, -1, -2) - jac

    def __call__(self, x, vectors) -> np.ndarray:
        """omega(x)[vector]"""
        return np.sum(self.proxy(x) * np.asarray(vectors, dtype=float), axis=-1)


@dataclass(frozen=True)
class TestForm0:
    """Test function f = bump * p (bump optional, then f is a plain polynomial)"""

    __test__ = False

    poly: Polynomial
    bump: Optional[Bump] = None

    @property
    def dim(self) -> int:
        return self.poly.dim

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        value = self.poly(x)
        return value if self.bump is None else value * self.bump(x)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.bump is None:
            return self.poly.gradient(x)
        return self.bump(x)[..., None] * self.poly.gradient(x) + self.poly(x)[..., None] * self.bump.gradient(x)

    def d(self) -> "ExactForm1":
        return ExactForm1(self)


@dataclass(frozen=True)
class ExactForm1:
    """df for a test function f; closed, so its exterior derivative vanishes"""

    potential: TestForm0

    @property
    def dim(self) -> int:
        return self.potential.dim

    def proxy(self, x) -> np.ndarray:
        return self.potential.gradient(x)

    def d(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (self.dim,))

    def __call__(self, x, vectors) -> np.ndarray:
        return np.sum(self.proxy(x) * np.asarray(vectors, dtype=float), axis=-1)


def zero_form(dim: int) -> TestForm1:
    return TestForm1(tuple(Polynomial(dim, {}) for _ in range(dim)), None, "zero")


def _unit(dim: int, axis: int) -> Exponent:
    e = [0] * dim
    e[axis] = 1
    return tuple(e)


def coefficient_patterns(dim: int) -> List[Tuple[str, Tuple[Polynomial, ...]]]:
    """The five coefficient patterns of the catalog"""
    zero = Polynomial(dim, {})
    one = Polynomial.constant(dim, 1.0)

    def basis(axis: int) -> Tuple[Polynomial, ...]:
        return tuple(one if i == axis else zero for i in range(dim))

    position = tuple(Polynomial.monomial(_unit(dim, i)) for i in range(dim))
    rotation = tuple(
        Polynomial.monomial(_unit(dim, 1), -1.0) if i == 0
        else Polynomial.monomial(_unit(dim, 0)) if i == 1
        else zero
        for i in range(dim)
    )
    quadratic = tuple(
        Polynomial.monomial(tuple(2 if k == 0 else 0 for k in range(dim))) if i == 0
        else Polynomial.monomial(tuple(1 if k in (0, i) else 0 for k in range(dim)))
        for i in range(dim)
    )
    return [
        ("e1", basis(0)),
        ("e2", basis(1)),
        ("position", position),
        ("rotation", rotation),
        ("quadratic", quadratic),
    ]


CATALOG_CENTERS_2D = [(0.0, 0.0), (0.5, 0.0), (-0.5, 0.0), (0.0, 0.5), (0.0, -0.5)]
CATALOG_RADIUS = 1.2


def form_catalog(dim: int, radius: float = CATALOG_RADIUS) -> List[TestForm1]:
    """
    The fixed battery of 25 test forms (5 bump centres x 5 coefficient patterns).

    Args:
        dim: 2 or 3 (3D centres are the 2D ones with z = 0)
        radius: Bump radius shared by all forms

    Returns:
        List of 25 TestForm1, in a fixed order
    """
    if dim not in (2, 3):
        raise DimensionError(f"Form catalog supports d=2 or 3, got {dim}")
    forms = []
    for c_index, center in enumerate(CATALOG_CENTERS_2D):
        full_center = tuple(center) + (0.0,) * (dim - 2)
        bump = Bump(full_center, radius)
        for name, coefficients in coefficient_patterns(dim):
            forms.append(TestForm1(coefficients, bump, f"c{c_index}-{name}"))
    return forms


def random_form(dim: int, rng: np.random.Generator, radius: float = CATALOG_RADIUS) -> TestForm1:
    """Random cubic-coefficient form centred near the origin"""
    exponents = [e for e in product(range(4), repeat=dim) if sum(e) <= 3]
    coefficients = []
    for _ in range(dim):
        picks = rng.choice(len(exponents), size=4, replace=False)
        coefficients.append(Polynomial(dim, {exponents[k]: float(rng.normal()) for k in picks}))
    center = tuple(float(c) for c in rng.uniform(-0.3, 0.3, size=dim))
    return TestForm1(tuple(coefficients), Bump(center, radius), "random")


def function_catalog(dim: int, radius: float = CATALOG_RADIUS) -> List[TestForm0]:
    """Test functions for 0-currents: the catalog bumps times 1, x1, x2, x1^2, x1*x2"""
    if dim not in (2, 3):
        raise DimensionError(f"Function catalog supports d=2 or 3, got {dim}")
    exponents = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1)]
    functions = []
    for center in CATALOG_CENTERS_2D:
        bump = Bump(tuple(center) + (0.0,) * (dim - 2), radius)
        for e in exponents:
            functions.append(TestForm0(Polynomial.monomial(e + (0,) * (dim - 2)), bump))
    return functions
