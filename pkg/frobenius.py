"""
Commutativity, invariance and lifted-flow checkers.

Flows of b and v commute when their Lie bracket vanishes; a current whose Lie
derivative along a divergence-free b vanishes is invariant under the flow; a
weighted family of curves pushed curve by curve represents the pushed current.
When the flows commute, (rho_t v) Lebesgue also solves the GTE with b, which
weighted_gte_residual measures in the weak form.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import qmc

from currents import (
    CurveChain,
    Current,
    FlowMapping,
    jacobian_mass,
    lie_derivative_pair,
    mass,
    pair,
    pair_pushforward_jacobian,
    push_chain,
    pushforward,
    weak_distance,
)
from errors import ConfigError, PreconditionError
from fields import Box, VectorField, estimate_divergence_sup, lie_bracket, resolution_tuple
from flow import IntegratorConfig, advance, density_at, flow_map
from forms import TestForm1, form_catalog
from transport import TimeBump

logger = logging.getLogger(__name__)

DEFAULT_LATTICE = (0.25, 0.5, 1.0)
DEFAULT_SAMPLES = 200
COMMUTE_TOL = 1e-6
GTE_BOX_HALF_WIDTH = 2.0
GTE_TIME_NODES = 41


@dataclass
class CommutativityReport:
    """Per (t, s) pair: max and mean of |X_t(Y_s(x)) - Y_s(X_t(x))| over the samples"""

    pairs: List[Tuple[float, float]]
    max_defect: List[float]
    mean_defect: List[float]
    bracket_residual: float
    tol: float
    verdict: bool = field(init=False)
    gte_residual: Optional[float] = None

    def __post_init__(self):
        self.verdict = bool(max(self.max_defect, default=0.0) <= self.tol)

    @property
    def worst(self) -> float:
        return float(max(self.max_defect, default=0.0))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["pairs"] = [list(p) for p in self.pairs]
        return data


@dataclass
class InvarianceReport:
    """Weak-star proxy distance between (X_t)_* T and T per time, plus the hypothesis residual"""

    times: List[float]
    distances: List[float]
    hypothesis_residual: float
    catalog: str = "catalog25"

    @property
    def worst(self) -> float:
        return float(max(self.distances, default=0.0))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def halton_samples(box: Box, n: int = DEFAULT_SAMPLES, seed: int = 0) -> np.ndarray:
    """n scrambled Halton points in the box"""
    sampler = qmc.Halton(d=box.dim, scramble=True, seed=seed)
    return qmc.scale(sampler.random(n), box.lo, box.hi)


def bracket_residual_norm(b: VectorField, v: VectorField, box: Box, resolution=32, t: float = 0.0) -> float:
    """max over the grid nodes of |[b, v]|"""
    nodes = box.nodes(resolution_tuple(resolution, box.dim))
    return float(np.max(np.linalg.norm(lie_bracket(b, v, t, nodes), axis=-1)))


def weighted_gte_residual(
    b: VectorField,
    v: VectorField,
    horizon: float,
    forms: Optional[Sequence[TestForm1]] = None,
    box: Optional[Box] = None,
    resolution=None,
    time_nodes: int = GTE_TIME_NODES,
    cfg: Optional[IntegratorConfig] = None,
) -> float:
    """
    Weak GTE residual of T_t = (rho_t v) Lebesgue on [0, horizon], with rho_t
    the density of the flow of b: max over the forms of

        | integral of <T_t, omega> psi'(t) dt - integral of <L_b T_t, omega> psi(t) dt |

    <L_b T, omega> is taken as -integral of d omega(b, rho v) minus the
    integral of rho v . grad(omega(b)), so only b and the forms are
    differentiated. Zero (up to quadrature) when the flows of b and v commute.
    """
    if horizon <= 0.0:
        return 0.0
    dim = b.dim
    forms = list(forms) if forms is not None else form_catalog(dim)
    box = box or Box.cube(dim, GTE_BOX_HALF_WIDTH)
    resolution = resolution_tuple(resolution or (128 if dim == 2 else 32), dim)
    nodes = box.nodes(resolution)
    cell = float(np.prod(box.spacing(resolution)))
    v_vals = v.evaluate(0.0, nodes)
    b_vals, jac_b = b.evaluate(0.0, nodes), b.jacobian(0.0, nodes)
    pairing_density, lie_density = [], []
    for omega in forms:
        a = omega.proxy(nodes)
        grad_ab = np.einsum("...ij,...i->...j", omega.proxy_jacobian(nodes), b_vals)
        grad_ab = grad_ab + np.einsum("...ij,...i->...j", jac_b, a)
        wedge = np.einsum("...i,...ij->...j", b_vals, omega.d(nodes))
        pairing_density.append(a)
        lie_density.append(-wedge - grad_ab)

    times = np.linspace(0.0, horizon, int(time_nodes))
    psi = TimeBump(0.0, float(horizon))
    incompressible = estimate_divergence_sup(b, box, resolution) <= 1e-12
    values = np.zeros((len(times), len(forms)))
    for k, t in enumerate(times):
        rho = np.ones(resolution) if incompressible or t == 0.0 else density_at(b, float(t), nodes, cfg)
        weighted = rho[..., None] * v_vals
        for j in range(len(forms)):
            pairing = float(np.sum(weighted * pairing_density[j])) * cell
            lie = float(np.sum(weighted * lie_density[j])) * cell
            values[k, j] = pairing * float(psi.derivative(t)) - lie * float(psi(t))
    residual = float(np.max(np.abs(trapezoid(values, times, axis=0))))
    logger.debug("Weighted GTE residual for '%s' and '%s': %.3g", b.name, v.name, residual)
    return residual


def _pair_defect(b, v, t, s, samples, cfg) -> np.ndarray:
    xt_ys = flow_map(b, t, flow_map(v, s, samples, cfg), cfg)
    ys_xt = flow_map(v, s, flow_map(b, t, samples, cfg), cfg)
    return np.linalg.norm(xt_ys - ys_xt, axis=-1)


def commutator_defect(
    b: VectorField,
    v: VectorField,
    t: float,
    s: float,
    samples,
    cfg: Optional[IntegratorConfig] = None,
    box: Optional[Box] = None,
    tol: float = COMMUTE_TOL,
) -> CommutativityReport:
    """
    defect(x) = |X_t(Y_s(x)) - Y_s(X_t(x))| at the sample points, with the
    bracket residual sup |[b, v]| over a grid of `box` (default: bounding box of the samples).
    """
    return commutativity_lattice(b, v, (t,), (s,), samples, cfg, box, tol)


def commutativity_lattice(
    b: VectorField,
    v: VectorField,
    ts: Sequence[float] = DEFAULT_LATTICE,
    ss: Sequence[float] = DEFAULT_LATTICE,
    samples=None,
    cfg: Optional[IntegratorConfig] = None,
    box: Optional[Box] = None,
    tol: float = COMMUTE_TOL,
    seed: int = 0,
    gte_check: bool = False,
    gte_resolution=None,
) -> CommutativityReport:
    """
    Commutator defects over the (t, s) lattice; samples default to 200 Halton
    points in the box. With gte_check the report also carries the weak GTE
    residual of (rho_t v) Lebesgue up to max(ts).
    """
    cfg = cfg or IntegratorConfig.default()
    if samples is None:
        box = box or Box.cube(b.dim, 1.0)
        samples = halton_samples(box, DEFAULT_SAMPLES, seed)
    samples = b._check(samples).reshape(-1, b.dim)
    if box is None:
        box = Box(tuple(samples.min(axis=0)), tuple(samples.max(axis=0) + 1e-12))
    pairs, max_defect, mean_defect = [], [], []
    for t in ts:
        for s in ss:
            defect = _pair_defect(b, v, float(t), float(s), samples, cfg)
            pairs.append((float(t), float(s)))
            max_defect.append(float(np.max(defect)))
            mean_defect.append(float(np.mean(defect)))
    report = CommutativityReport(pairs, max_defect, mean_defect, bracket_residual_norm(b, v, box), tol)
    if gte_check:
        report.gte_residual = weighted_gte_residual(b, v, max(float(t) for t in ts), resolution=gte_resolution, cfg=cfg)
    logger.info(
        "Commutativity of '%s' and '%s': worst defect %.3g over %d pairs, bracket residual %.3g",
        b.name, v.name, report.worst, len(pairs), report.bracket_residual,
    )
    return report


def invariance_defect(
    b: VectorField,
    initial: Current,
    times: Sequence[float],
    forms: Optional[Sequence[TestForm1]] = None,
    box: Optional[Box] = None,
    cfg: Optional[IntegratorConfig] = None,
    div_tol: float = 1e-8,
) -> InvarianceReport:
    """
    Per time, max over the forms of |<(X_t)_* T, w> - <T, w>|, and the
    hypothesis residual max |<L_b T, w>|.

    Raises:
        PreconditionError: |div b| above div_tol on the grid of `box`
    """
    box = box or Box.cube(b.dim, 2.0)
    div_sup = estimate_divergence_sup(b, box)
    if div_sup > div_tol:
        raise PreconditionError(f"Invariance needs a divergence-free field, '{b.name}' has |div| = {div_sup:.3g}")
    forms = list(forms) if forms is not None else form_catalog(initial.dim)
    cfg = cfg or IntegratorConfig.default()
    distances = []
    for t in times:
        if t == 0.0:
            distances.append(0.0)
            continue
        pushed = pushforward(initial, FlowMapping(b, float(t), cfg))
        distances.append(weak_distance(pushed, initial, forms))
    residual = float(max(abs(lie_derivative_pair(initial, b, form)) for form in forms))
    return InvarianceReport([float(t) for t in times], distances, residual, f"catalog{len(forms)}")


def lifted_pushforward_check(
    b: VectorField,
    eta: CurveChain,
    t: float,
    forms: Optional[Sequence[TestForm1]] = None,
    cfg: Optional[IntegratorConfig] = None,
    refine_tol: Optional[float] = None,
) -> Dict[str, Any]:
    """
    Push every curve of the atomic measure through X_t (the lifted flow) and compare:
    pairings of the pushed curves against the pushforward formula of the summed
    current, and the pushed lengths against the Jacobian mass integral.

    Returns:
        {t, pairing_mismatch, lifted_mass, jacobian_mass, mass_mismatch, warnings}
    """
    forms = list(forms) if forms is not None else form_catalog(eta.dim)
    cfg = cfg or IntegratorConfig.default()
    mapping = FlowMapping(b, t, cfg)
    lifted, report = push_chain(eta, mapping, refine_tol)
    mismatch = max(abs(pair(lifted, w) - pair_pushforward_jacobian(eta, mapping, w)) for w in forms)
    lifted_mass = mass(lifted)
    formula_mass = jacobian_mass(eta, mapping)
    return {
        "t": float(t),
        "pairing_mismatch": float(mismatch),
        "lifted_mass": lifted_mass,
        "jacobian_mass": formula_mass,
        "mass_mismatch": abs(lifted_mass - formula_mass),
        "max_stretch": report["max_stretch"],
        "warnings": report["warnings"],
    }


def non_concentration_check(
    v: VectorField,
    s: float,
    cloud,
    cfg: Optional[IntegratorConfig] = None,
    div_sup: Optional[float] = None,
    box: Optional[Box] = None,
    tol: float = 1e-6,
) -> Dict[str, Any]:
    """
    Compression contract of a regular Lagrangian flow: the image of Lebesgue
    measure under Y_s has density 1/det(grad Y_s) at the image point, which must
    stay below C = exp(|div v|_inf s).
    """
    cloud = v._check(cloud)
    if div_sup is None:
        flat = cloud.reshape(-1, v.dim)
        box = box or Box(tuple(flat.min(axis=0) - 1.0), tuple(flat.max(axis=0) + 1.0))
        div_sup = estimate_divergence_sup(v, box)
    compression = float(np.max(advance(v, s, cloud, cfg).density))
    bound = math.exp(div_sup * abs(s))
    return {
        "s": float(s),
        "max_compression": compression,
        "bound": bound,
        "div_sup": float(div_sup),
        "ok": compression <= bound * (1.0 + tol),
    }


def random_curve_pairs(
    dim: int, rng: np.random.Generator, n_pairs: int = 10, n_vertices: int = 33, scale: float = 0.1
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Random smooth parametrised curves in [-1, 1]^d with perturbed partners on the same parameters"""
    s = np.linspace(0.0, 1.0, n_vertices)[:, None]
    pairs = []
    for _ in range(n_pairs):
        start = rng.uniform(-0.8, 0.8, size=dim)
        direction = rng.normal(size=dim)
        wobble = rng.normal(size=dim)
        curve = start + 0.5 * s * direction + 0.1 * np.sin(np.pi * s) * wobble
        partner = curve + scale * rng.uniform(-1.0, 1.0, size=(1, dim)) * np.cos(3.0 * s)
        pairs.append((curve, partner))
    return pairs


def lifted_flow_lipschitz_check(
    b: VectorField,
    curve_pairs: Sequence[Tuple[np.ndarray, np.ndarray]],
    t: float,
    lip: Optional[float] = None,
    cfg: Optional[IntegratorConfig] = None,
    tol: float = 1e-9,
) -> Dict[str, Any]:
    """
    sup_s |X_t(g1(s)) - X_t(g2(s))| <= exp(Lip(b) t) sup_s |g1(s) - g2(s)| on each pair.

    Raises:
        ConfigError: no Lipschitz constant given or declared on b
    """
    lip = b.lipschitz if lip is None else lip
    if lip is None:
        raise ConfigError(f"Field '{b.name}' declares no Lipschitz constant; pass lip explicitly")
    factor = math.exp(lip * abs(t))
    worst_ratio = 0.0
    ok = True
    for first, second in curve_pairs:
        before = float(np.max(np.linalg.norm(first - second, axis=-1)))
        after = float(np.max(np.linalg.norm(flow_map(b, t, first, cfg) - flow_map(b, t, second, cfg), axis=-1)))
        if before > 0.0:
            worst_ratio = max(worst_ratio, after / before)
        ok = ok and after <= factor * before + tol
    return {"t": float(t), "lip": float(lip), "max_ratio": worst_ratio, "bound": factor, "ok": ok}
