"""
Scenario files: loading, validation, and the experiment runners behind the CLI.

A scenario is a TOML file with the sections [scenario], [fields], [initial],
[params] and [tolerances] (keys documented in USAGE_GUIDE.txt). Every runner
returns a list of checks {name, value, bound, pass} plus a diagnostics dict.
"""
import logging
import math

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

import settings
from currents import (
    CurveChain,
    builtin_chain,
    chain_from_json,
    load_chain,
    mass,
    pair,
)
from errors import ConfigError, DimensionError
from fields import (
    AnalyticField,
    Box,
    VectorField,
    builtin,
    builtin_catalog,
    estimate_sup_norm,
    gaussian_curl,
    list_builtins,
    windowed,
)
from flow import IntegratorConfig, density_bounds, inverse_defect, jacobian_fd_consistency
from forms import Bump, form_catalog
from frobenius import (
    commutativity_lattice,
    halton_samples,
    invariance_defect,
    lifted_flow_lipschitz_check,
    lifted_pushforward_check,
    non_concentration_check,
    random_curve_pairs,
)
from transport import (
    duhamel_at,
    duhamel_solve,
    frozen_field_reference,
    frozen_line_compare,
    gte_solve,
    induction_solve,
    l2_error,
    lemma_vae_to_gte_check,
    vae_eulerian,
    vae_lagrangian,
    vae_weak_residual,
    weak_residual,
)

logger = logging.getLogger(__name__)

KINDS = ("flow_check", "vae_compare", "gte_invariance", "frobenius", "duhamel", "alfven", "lifted_flow", "convergence")

REQUIRED_FIELDS = {
    "flow_check": (),
    "vae_compare": ("b", "v"),
    "gte_invariance": ("b",),
    "frobenius": ("b", "v"),
    "duhamel": ("b",),
    "alfven": ("V", "B"),
    "lifted_flow": ("b",),
}
NEEDS_CHAIN = ("gte_invariance", "duhamel", "lifted_flow")

# Typed [params] entries, coerced while loading
INT_PARAMS = (
    "samples", "resolution", "quadrature_resolution", "gte_resolution", "time_nodes", "intervals", "refinement",
)
FLOAT_PARAMS = ("dt", "horizon", "cfl", "defect_floor", "path_dt", "t", "line_length", "expected_mass")
FLOAT_LIST_PARAMS = ("times", "ts", "ss")
INT_LIST_PARAMS = ("resolutions",)
BOOL_PARAMS = ("lemma", "weak", "negative_control", "compressible", "all_orders")

DEFAULT_TOLERANCES = {
    "density": 1e-6,
    "inverse": 1e-8,
    "jacobian": 1e-6,
    "representation": 1e-7,
    "commute": 1e-6,
    "bracket": 1e-8,
    "invariance": 1e-6,
    "hypothesis": 1e-6,
    "weak": 1e-4,
    "reduction": 1e-10,
    "static": 1e-8,
    "refine": 1e-5,
    "pairing": 1e-6,
    "mass": 1e-5,
    "line": 1e-3,
    "lemma": 1e-5,
    "boundary": 1e-5,
    "order_min": 1.7,
    "order_max": 2.3,
    "gte_hypothesis": 1e-4,
    "closed_form": 1e-6,
}

Check = Dict[str, Any]


def check(name: str, value: float, bound: float, passed: Optional[bool] = None, at_least: bool = False) -> Check:
    """One result row; passes when value <= bound (value >= bound with at_least)"""
    value = float(value)
    if passed is None:
        passed = value >= bound if at_least else value <= bound
    return {"name": name, "value": value, "bound": float(bound), "pass": bool(passed)}


@dataclass
class Scenario:
    """A validated scenario file"""

    name: str
    kind: str
    dim: int
    fields: Dict[str, VectorField]
    initial: Dict[str, Any]
    params: Dict[str, Any]
    tolerances: Dict[str, float]
    seed: int = 0
    source_path: Optional[Path] = None
    chains: Dict[str, CurveChain] = field(default_factory=dict)

    def tol(self, key: str) -> float:
        return float(self.tolerances.get(key, DEFAULT_TOLERANCES[key]))

    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig.default(dt=self.params.get("dt"), scheme=self.params.get("scheme"))

    def box(self, default_half_width: float = 2.0) -> Box:
        return parse_box(self.params.get("box"), self.dim, default_half_width)


# ============================================================================
# Loading
# ============================================================================

def parse_box(spec, dim: int, default_half_width: float = 2.0) -> Box:
    """[lo, hi] for a cube, [[lo...], [hi...]] per axis, or None for the default cube"""
    if spec is None:
        return Box.cube(dim, default_half_width)
    try:
        lo, hi = spec
        lo = (float(lo),) * dim if np.isscalar(lo) else tuple(float(x) for x in lo)
        hi = (float(hi),) * dim if np.isscalar(hi) else tuple(float(x) for x in hi)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"Malformed box {spec!r}: {exc}") from exc
    if len(lo) != dim or len(hi) != dim or any(a >= b for a, b in zip(lo, hi)):
        raise ConfigError(f"Box {spec!r} is not a valid {dim}D box")
    return Box(lo, hi)


def _known_builtins() -> set:
    return {row["name"] for row in list_builtins()} | {"gaussian_curl"}


def build_field(spec: Union[str, Sequence[str], Dict[str, Any]], dim: int, name: str) -> VectorField:
    """
    Field from a scenario entry: a builtin name, a list of component
    expressions, or a table {builtin | exprs, jacobian, window, window_center,
    window_plateau, ...builtin parameters}.

    Raises:
        ConfigError: unknown builtin, malformed expression, wrong dimension
    """
    try:
        if isinstance(spec, str):
            return _builtin_field(spec, dim, {})
        if isinstance(spec, list):
            if len(spec) != dim:
                raise ConfigError(f"Field '{name}' has {len(spec)} components in a {dim}D scenario")
            return AnalyticField.from_exprs(spec, name=name)
        if isinstance(spec, dict):
            params = dict(spec)
            window = params.pop("window", None)
            center = params.pop("window_center", None)
            plateau = float(params.pop("window_plateau", 0.0))
            if "builtin" in params:
                result = _builtin_field(params.pop("builtin"), dim, params)
            elif "exprs" in params:
                exprs = params.pop("exprs")
                if len(exprs) != dim:
                    raise ConfigError(f"Field '{name}' has {len(exprs)} components in a {dim}D scenario")
                result = AnalyticField.from_exprs(exprs, params.pop("jacobian", None), name=name)
            else:
                raise ConfigError(f"Field table '{name}' needs a 'builtin' or 'exprs' key")
            if window is not None:
                bump_center = tuple(float(c) for c in center) if center is not None else (0.0,) * dim
                result = windowed(result, Bump(bump_center, float(window), plateau))
            return result
    except DimensionError as exc:
        raise ConfigError(str(exc), reason=exc.reason) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"Malformed field '{name}': {exc}") from exc
    raise ConfigError(f"Field '{name}' must be a builtin name, a list of expressions or a table")


def _builtin_field(name: str, dim: int, params: Dict[str, Any]) -> VectorField:
    if name not in _known_builtins():
        raise ConfigError(f"Unknown builtin field '{name}'")
    if name == "gaussian_curl":
        return gaussian_curl(dim, **params)
    return builtin(name, dim, **params)


def build_chain(spec: Dict[str, Any], dim: int, base_dir: Path) -> CurveChain:
    """Chain from {chain = "file.json"}, {curves = [...]} or {shape = "segment" | "circle" | "rings" | "loop", ...}"""
    spec = dict(spec)
    if "chain" in spec:
        path = Path(spec["chain"])
        try:
            chain = load_chain(path if path.is_absolute() else base_dir / path)
        except OSError as exc:
            raise ConfigError(f"Cannot read curve chain file: {exc}") from exc
    elif "curves" in spec:
        chain = chain_from_json(spec["curves"])
    elif "shape" in spec:
        shape = spec.pop("shape")
        try:
            chain = builtin_chain(shape, dim, **spec)
        except (TypeError, ValueError, DimensionError) as exc:
            raise ConfigError(f"Malformed initial shape: {exc}") from exc
    else:
        raise ConfigError("Initial chain needs 'chain', 'curves' or 'shape'")
    if chain.dim != dim:
        raise ConfigError(f"Initial chain is {chain.dim}D in a {dim}D scenario")
    return chain


def _typed(key: str, value: Any, cast: Callable[[Any], Any]) -> Any:
    try:
        return cast(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"Invalid value {value!r} for '{key}': {exc}", reason="invalid_param") from exc


def _as_bool(value: Any) -> bool:
    if not isinstance(value, bool):
        raise TypeError("expected true or false")
    return value


def _as_list(cast: Callable[[Any], Any]) -> Callable[[Any], List[Any]]:
    def convert(value):
        if isinstance(value, (str, bytes)) or not isinstance(value, Sequence):
            raise TypeError("expected a list")
        return [cast(v) for v in value]
    return convert


def coerce_params(params: Dict[str, Any]) -> Dict[str, Any]:
    """
    Convert the typed [params] entries in place.

    Raises:
        ConfigError: reason "invalid_param" for a value of the wrong type
    """
    casts = [(INT_PARAMS, int), (FLOAT_PARAMS, float), (FLOAT_LIST_PARAMS, _as_list(float)),
             (INT_LIST_PARAMS, _as_list(int)), (BOOL_PARAMS, _as_bool)]
    for keys, cast in casts:
        for key in keys:
            if params.get(key) is not None:
                params[key] = _typed(f"params.{key}", params[key], cast)
    return params


def load_scenario(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> Scenario:
    """
    Read and validate a scenario file.

    Args:
        path: TOML scenario file
        overrides: CLI values (dt, resolution, seed) that win over the file

    Raises:
        ConfigError: unreadable file, unknown kind, missing or invalid entries
    """
    path = Path(path)
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f"Cannot read scenario '{path}': {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"Scenario '{path}' is not valid TOML: {exc}") from exc

    head = data.get("scenario", {})
    kind = head.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"Unknown experiment kind {kind!r}, expected one of {KINDS}")
    dim = _typed("scenario.dim", head.get("dim", 2), int)
    if dim not in (2, 3):
        raise ConfigError(f"Scenario dimension must be 2 or 3, got {dim}")
    params = dict(data.get("params", {}))
    for key, value in (overrides or {}).items():
        if value is not None:
            params[key] = value
    coerce_params(params)
    tolerances = {k: _typed(f"tolerances.{k}", v, float) for k, v in data.get("tolerances", {}).items()}
    bad = [k for k, v in tolerances.items() if not v > 0]
    if bad:
        raise ConfigError(f"Tolerances must be positive: {bad}")
    seed = _typed("seed", params.pop("seed", head.get("seed", settings.DEFAULT_SEED)), int)

    fields = {name: build_field(spec, dim, name) for name, spec in data.get("fields", {}).items()}
    scenario = Scenario(
        name=str(head.get("name", path.stem)),
        kind=kind,
        dim=dim,
        fields=fields,
        initial=dict(data.get("initial", {})),
        params=params,
        tolerances=tolerances,
        seed=seed,
        source_path=path,
    )
    validate(scenario)
    return scenario


def validate(scenario: Scenario) -> None:
    """Kind-specific required entries; builds the initial chains"""
    kind = scenario.kind
    required = REQUIRED_FIELDS.get(kind)
    if kind == "convergence":
        base = scenario.params.get("base")
        if base not in ("vae", "alfven"):
            raise ConfigError("Convergence scenarios need params.base = 'vae' or 'alfven'")
        required = ("b", "v") if base == "vae" else ("V", "B")
        resolutions = scenario.params.get("resolutions")
        if not resolutions or len(resolutions) < 2:
            raise ConfigError("Convergence scenarios need at least two params.resolutions")
        for n in resolutions:
            if n < 2 or n & (n - 1):
                raise ConfigError(f"Convergence resolutions must be powers of two, got {n}")
    missing = [name for name in required if name not in scenario.fields]
    if missing:
        raise ConfigError(f"Scenario kind '{kind}' needs fields {missing}")
    if kind == "flow_check" and "b" not in scenario.fields and scenario.params.get("fields") != "all":
        raise ConfigError("flow_check needs field 'b' or params.fields = 'all'")
    if kind in ("alfven",) or scenario.params.get("base") == "alfven":
        if scenario.dim != 3:
            raise ConfigError("Induction scenarios are 3D")
    base_dir = scenario.source_path.parent if scenario.source_path else Path(".")
    if kind in NEEDS_CHAIN:
        if not scenario.initial:
            raise ConfigError(f"Scenario kind '{kind}' needs an [initial] chain")
        chain_spec = {k: v for k, v in scenario.initial.items() if k != "source"}
        scenario.chains["initial"] = build_chain(chain_spec, scenario.dim, base_dir)
    if kind == "duhamel":
        if "source" not in scenario.initial:
            raise ConfigError("Duhamel scenarios need an [initial.source] chain")
        scenario.chains["source"] = build_chain(scenario.initial["source"], scenario.dim, base_dir)


# ============================================================================
# Runners
# ============================================================================

def _times(scenario: Scenario, default: Sequence[float]) -> List[float]:
    return [float(t) for t in scenario.params.get("times", default)]


def run_flow_check(scenario: Scenario) -> Tuple[List[Check], Dict[str, Any]]:
    """Density bounds, inverse property and Jacobian consistency for one field or the whole catalog"""
    cfg = scenario.integrator()
    fields = builtin_catalog() if scenario.params.get("fields") == "all" else [scenario.fields["b"]]
    times = _times(scenario, (0.25, 0.5, 1.0))
    n = int(scenario.params.get("samples", 1000))
    rng = np.random.default_rng(scenario.seed)
    checks: List[Check] = []
    diagnostics: Dict[str, Any] = {}
    for b in fields:
        box = parse_box(scenario.params.get("box"), b.dim, 1.0)
        points = rng.uniform(box.lo, box.hi, size=(n, b.dim))
        for t in times:
            bounds = density_bounds(b, t, points, cfg, box=box, tol=scenario.tol("density"))
            diagnostics[f"{b.name}@{t}"] = bounds
            checks.append(check(f"density_min[{b.name},t={t}]", bounds["min"], bounds["lower"] - scenario.tol("density"), at_least=True))
            checks.append(check(f"density_max[{b.name},t={t}]", bounds["max"], bounds["upper"] + scenario.tol("density")))
        checks.append(check(f"inverse[{b.name}]", inverse_defect(b, max(times), points, cfg), scenario.tol("inverse")))
        checks.append(check(
            f"jacobian_fd[{b.name}]",
            jacobian_fd_consistency(b, max(times), points[:20], cfg),
            scenario.tol("jacobian"),
        ))
    return checks, diagnostics


def _expected_field(scenario: Scenario) -> Optional[AnalyticField]:
    exprs = scenario.params.get("expected")
    if exprs is None:
        return None
    return build_field(list(exprs), scenario.dim, "expected")


def _vae_l2(scenario: Scenario, resolution: int, cfg: IntegratorConfig) -> float:
    b, v_bar = scenario.fields["b"], scenario.fields["v"]
    box = scenario.box()
    horizon = float(scenario.params.get("horizon", 0.5))
    run = vae_eulerian(b, v_bar, box, resolution, horizon, cfl=float(scenario.params.get("cfl", 0.5)))
    reference = vae_lagrangian(b, v_bar, horizon, box.nodes((resolution,) * box.dim), cfg)
    return l2_error(run.final, reference)


def run_vae_compare(scenario: Scenario) -> Tuple[List[Check], Dict[str, Any]]:
    """Representation formula vs closed form; optional Eulerian, weak-form and current-level checks"""
    cfg = scenario.integrator()
    b, v_bar = scenario.fields["b"], scenario.fields["v"]
    box = scenario.box()
    checks: List[Check] = []
    diagnostics: Dict[str, Any] = {}
    expected = _expected_field(scenario)
    times = _times(scenario, (0.5,))
    if expected is not None:
        rng = np.random.default_rng(scenario.seed)
        points = rng.uniform(box.lo, box.hi, size=(int(scenario.params.get("samples", 100)), scenario.dim))
        for t in times:
            error = np.max(np.linalg.norm(vae_lagrangian(b, v_bar, t, points, cfg) - expected.evaluate(t, points), axis=-1))
            checks.append(check(f"representation[t={t}]", error, scenario.tol("representation")))
    if "resolution" in scenario.params:
        error = _vae_l2(scenario, int(scenario.params["resolution"]), cfg)
        diagnostics["l2_error"] = error
        checks.append(check("eulerian_l2", error, scenario.tol("l2") if "l2" in scenario.tolerances else math.inf))
    if scenario.params.get("lemma", False):
        resolution = int(scenario.params.get("quadrature_resolution", 256))
        forms = form_catalog(scenario.dim)
        for t in times:
            lemma = lemma_vae_to_gte_check(b, v_bar, t, forms, box, resolution, cfg)
            checks.append(check(f"vae_to_gte[t={t}]", lemma["max_abs_diff"], scenario.tol("lemma")))
    if scenario.params.get("weak", False):
        resolution = int(scenario.params.get("quadrature_resolution", 128))
        horizon = float(scenario.params.get("horizon", 1.0))
        grid = np.linspace(0.0, horizon, int(scenario.params.get("time_nodes", 41)))
        worst = max(
            abs(vae_weak_residual(b, v_bar, form, grid, box, resolution, cfg=cfg))
            for form in form_catalog(scenario.dim)[:5]
        )
        checks.append(check("vae_weak_residual", worst, scenario.tol("weak")))
    if not checks:
        raise ConfigError("vae_compare needs params.expected, params.resolution, lemma or weak")
    return checks, diagnostics


def _path_times(horizon: float, step: float) -> np.ndarray:
    return np.linspace(0.0, horizon, int(round(horizon / step)) + 1)


def run_gte_invariance(scenario: Scenario) -> Tuple[List[Check], Dict[str, Any]]:
    """Invariance under a divergence-free flow, with an optional negative control and weak-residual refinement"""
    cfg = scenario.integrator()
    b = scenario.fields["b"]
    initial = scenario.chains["initial"]
    times = _times(scenario, (0.5, 1.0))
    forms = form_catalog(scenario.dim)
    report = invariance_defect(b, initial, times, forms, scenario.box(), cfg)
    negative = bool(scenario.params.get("negative_control", False))
    checks: List[Check] = []
    if negative:
        floor = float(scenario.params.get("defect_floor", 0.1))
        checks.append(check(f"defect[t={times[-1]}]", report.distances[-1], floor, at_least=True))
        checks.append(check("hypothesis_residual", report.hypothesis_residual, floor, at_least=True))
    else:
        for t, distance in zip(report.times, report.distances):
            checks.append(check(f"defect[t={t}]", distance, scenario.tol("invariance")))
        checks.append(check("hypothesis_residual", report.hypothesis_residual, scenario.tol("hypothesis")))

    diagnostics: Dict[str, Any] = {"invariance": report.to_dict()}
    step = scenario.params.get("path_dt")
    if step is not None:
        horizon = float(scenario.params.get("horizon", 1.0))
        coarse = gte_solve(b, initial, _path_times(horizon, float(step)), cfg)
        fine = gte_solve(b, initial, _path_times(horizon, float(step) / 2.0), cfg)
        coarse_res = [abs(weak_residual(coarse, b, w)) for w in forms]
        fine_res = [abs(weak_residual(fine, b, w)) for w in forms]
        checks.append(check("weak_residual", max(coarse_res), scenario.tol("weak")))
        halving = max(f - (0.5 * c + 1e-9) for c, f in zip(coarse_res, fine_res))
        checks.append(check("weak_residual_halving", halving, 0.0))
        if b.lipschitz is not None:
            m0 = mass(initial)
            excess = max(
                mass(T) - math.exp(b.lipschitz * t) * m0 * (1.0 + 1e-4)
                for t, T in coarse
            )
            checks.append(check("mass_growth", excess, 0.0))
        diagnostics["weak_residual"] = {"coarse": coarse_res, "fine": fine_res}
    return checks, diagnostics


def run_frobenius(scenario: Scenario) -> Tuple[List[Check], Dict[str, Any]]:
    """Commutator defects on the (t, s) lattice, compression contract, lifted-flow Lipschitz bound"""
    cfg = scenario.integrator()
    b, v = scenario.fields["b"], scenario.fields["v"]
    box = scenario.box(1.0)
    ts = [float(t) for t in scenario.params.get("ts", (0.25, 0.5, 1.0))]
    ss = [float(s) for s in scenario.params.get("ss", (0.25, 0.5, 1.0))]
    samples = halton_samples(box, int(scenario.params.get("samples", 200)), scenario.seed)
    report = commutativity_lattice(
        b, v, ts, ss, samples, cfg, box, scenario.tol("commute"),
        gte_check=True, gte_resolution=scenario.params.get("gte_resolution"),
    )
    checks: List[Check] = []
    if scenario.params.get("expect", "commute") == "commute":
        checks.append(check("max_defect", report.worst, scenario.tol("commute")))
        checks.append(check("bracket_residual", report.bracket_residual, scenario.tol("bracket")))
        checks.append(check("gte_hypothesis", report.gte_residual, scenario.tol("gte_hypothesis")))
    else:
        ratio = min(d / (t * s) for (t, s), d in zip(report.pairs, report.max_defect))
        checks.append(check("min_defect_over_ts", ratio, float(scenario.params.get("defect_floor", 0.1)), at_least=True))
        checks.append(check(
            "gte_hypothesis_violated", report.gte_residual, scenario.tol("gte_hypothesis"), at_least=True,
        ))
    if scenario.params.get("closed_form") == "rotation_translation":
        # rotation b against a constant v: |X_t Y_s x - Y_s X_t x| = 2 s |v| |sin(t/2)|
        speed = float(np.linalg.norm(v.evaluate(0.0, np.zeros((1, scenario.dim)))))
        gap = max(
            abs(d - 2.0 * s * speed * abs(math.sin(t / 2.0)))
            for (t, s), d in zip(report.pairs, report.max_defect)
        )
        checks.append(check("closed_form", gap, scenario.tol("closed_form")))
    elif "closed_form" in scenario.params:
        raise ConfigError(
            f"Unknown closed form '{scenario.params['closed_form']}'", reason="invalid_param",
        )
    compression = non_concentration_check(v, max(ss), samples, cfg, box=box)
    checks.append(check("non_concentration", compression["max_compression"], compression["bound"] * (1.0 + 1e-6)))
    if b.lipschitz is not None:
        pairs = random_curve_pairs(scenario.dim, np.random.default_rng(scenario.seed))
        lip = lifted_flow_lipschitz_check(b, pairs, max(ts), cfg=cfg)
        checks.append(check("lifted_lipschitz", lip["max_ratio"], lip["bound"] + 1e-9))
    return checks, {"commutativity": report.to_dict(), "compression": compression}


def run_duhamel(scenario: Scenario) -> Tuple[List[Check], Dict[str, Any]]:
    """Homogeneous reduction, static quadrature (b = 0) and self-refinement of the Duhamel formula"""
    cfg = scenario.integrator()
    b = scenario.fields["b"]
    initial, source_chain = scenario.chains["initial"], scenario.chains["source"]
    t = float(scenario.params.get("t", 0.5))
    n = int(scenario.params.get("intervals", 50))
    refine = int(scenario.params.get("refinement", 10))
    forms = form_catalog(scenario.dim)

    def source(_s):
        return source_chain

    grid = np.linspace(0.0, t, n + 1)
    homogeneous = duhamel_solve(b, initial, grid, None, cfg).currents[-1]
    pushed = gte_solve(b, initial, grid, cfg).currents[-1]
    checks = [check(
        "homogeneous_reduction",
        max(abs(pair(homogeneous, w) - pair(pushed, w)) for w in forms),
        scenario.tol("reduction"),
    )]
    coarse = duhamel_at(b, initial, t, source, n, cfg)
    fine = duhamel_at(b, initial, t, source, refine * n, cfg)
    checks.append(check(
        "refinement_oracle",
        max(abs(pair(coarse, w) - pair(fine, w)) for w in forms),
        scenario.tol("refine"),
    ))
    if estimate_sup_norm(b, scenario.box()) == 0.0:
        static = max(abs(pair(coarse, w) - (pair(initial, w) + t * pair(source_chain, w))) for w in forms)
        checks.append(check("static_quadrature", static, scenario.tol("static")))
    return checks, {"t": t, "intervals": n}


def _alfven_l2(scenario: Scenario, resolution: int, cfg: IntegratorConfig) -> Tuple[float, Any]:
    V, B_bar = scenario.fields["V"], scenario.fields["B"]
    box = scenario.box(math.pi)
    t = float(scenario.params.get("t", scenario.params.get("horizon", 0.5)))
    run = induction_solve(V, B_bar, box, resolution, t, times=[0.0, t], cfl=float(scenario.params.get("cfl", 0.5)))
    reference = frozen_field_reference(V, B_bar, t, box, resolution, cfg)
    return l2_error(run.final, reference), run


def run_alfven(scenario: Scenario) -> Tuple[List[Check], Dict[str, Any]]:
    """Induction solution vs frozen-in pushforward, divergence drift, frozen field lines"""
    cfg = scenario.integrator()
    V, B_bar = scenario.fields["V"], scenario.fields["B"]
    box = scenario.box(math.pi)
    resolution = int(scenario.params.get("resolution", 32))
    t = float(scenario.params.get("t", 0.5))
    error, run = _alfven_l2(scenario, resolution, cfg)
    checks = [check("induction_l2", error, scenario.tol("l2") if "l2" in scenario.tolerances else 5e-3)]
    initial_div = run.states[0].divergence_max()
    drift = max(run.div_history, default=initial_div) - initial_div
    checks.append(check("div_drift", drift, scenario.tol("div") if "div" in scenario.tolerances else 1e-2))

    seeds = scenario.params.get("seeds", [[0.0, 0.0, 0.0], [0.2, -0.3, 0.1], [-0.4, 0.1, -0.2]])
    length = float(scenario.params.get("line_length", 1.0))
    line_tol = scenario.tol("line")
    plain = frozen_line_compare(V, B_bar, t, seeds, box, resolution, cfg, False, length, state=run.final)
    diagnostics = {"l2_error": error, "div_history_max": max(run.div_history, default=0.0), "lines": plain}
    if scenario.params.get("compressible", False):
        rescaled = frozen_line_compare(V, B_bar, t, seeds, box, resolution, cfg, True, length, state=run.final)
        diagnostics["lines_rescaled"] = rescaled
        checks.append(check("lines_plain_not_frozen", plain["param_deviation"], line_tol, at_least=True))
        checks.append(check("lines_rescaled_frozen", rescaled["param_deviation"], line_tol))
    else:
        checks.append(check("line_shape", plain["shape_deviation"], line_tol))
        checks.append(check("line_param", plain["param_deviation"], line_tol))
    return checks, diagnostics


def run_lifted_flow(scenario: Scenario) -> Tuple[List[Check], Dict[str, Any]]:
    """Curve-by-curve pushforward vs the current pushforward, and the mass identity"""
    cfg = scenario.integrator()
    b = scenario.fields["b"]
    eta = scenario.chains["initial"]
    checks: List[Check] = []
    reports = []
    expected = scenario.params.get("expected_mass")
    for t in _times(scenario, (1.0,)):
        report = lifted_pushforward_check(b, eta, t, cfg=cfg)
        reports.append(report)
        checks.append(check(f"pairing[t={t}]", report["pairing_mismatch"], scenario.tol("pairing")))
        checks.append(check(f"mass_identity[t={t}]", report["mass_mismatch"], scenario.tol("mass")))
    if expected is not None:
        checks.append(check("expected_mass", abs(reports[-1]["lifted_mass"] - float(expected)), scenario.tol("mass")))
    return checks, {"reports": reports}


# ============================================================================
# Convergence
# ============================================================================

def convergence_study(scenario: Scenario, levels: Optional[int] = None) -> Dict[str, Any]:
    """
    Run the base experiment at successive resolutions and measure the observed
    order p = log2(e_h / e_{h/2}).

    Returns:
        {rows: [{level, resolution, h, l2_error, order}], orders, status}
        with status "ok", "exact" (all errors at round-off) or "non_monotone"
    """
    resolutions = [int(n) for n in scenario.params["resolutions"]]
    if levels is not None:
        start = int(resolutions[0])
        resolutions = [start * 2 ** k for k in range(levels)]
    cfg = scenario.integrator()
    base = scenario.params["base"]
    errors = []
    for n in resolutions:
        error = _vae_l2(scenario, n, cfg) if base == "vae" else _alfven_l2(scenario, n, cfg)[0]
        logger.info("Convergence level %d: error %.4g", n, error)
        errors.append(error)
    exact = all(e < 1e-12 for e in errors)
    rows = []
    orders: List[Optional[float]] = []
    box = scenario.box(math.pi if base == "alfven" else 2.0)
    for level, (n, error) in enumerate(zip(resolutions, errors)):
        order: Union[str, float] = ""
        if level > 0:
            if exact:
                order = "exact"
            elif error > 0 and errors[level - 1] > 0:
                order = math.log2(errors[level - 1] / error)
                orders.append(order)
        rows.append({
            "level": level,
            "resolution": n,
            "h": float(np.min(box.lengths)) / n,
            "l2_error": error,
            "order": order,
        })
    monotone = all(b < a for a, b in zip(errors, errors[1:]))
    status = "exact" if exact else ("ok" if monotone else "non_monotone")
    if status == "non_monotone":
        logger.warning("Non-monotone convergence table for '%s': %s", scenario.name, errors)
    return {"rows": rows, "orders": orders, "status": status}


def run_convergence(scenario: Scenario, levels: Optional[int] = None) -> Tuple[List[Check], Dict[str, Any]]:
    """Orders within [order_min, order_max] (the final pair, or all pairs with params.all_orders)"""
    study = convergence_study(scenario, levels)
    checks: List[Check] = []
    if study["status"] == "exact":
        checks.append(check("exact", study["rows"][-1]["l2_error"], 1e-12))
        return checks, study
    checks.append(check("monotone", 0.0 if study["status"] == "ok" else 1.0, 0.0))
    orders = study["orders"] if scenario.params.get("all_orders", False) else study["orders"][-1:]
    low, high = scenario.tol("order_min"), scenario.tol("order_max")
    for k, order in enumerate(orders):
        checks.append(check(f"order_min[{k}]", order, low, at_least=True))
        checks.append(check(f"order_max[{k}]", order, high))
    if "l2" in scenario.tolerances:
        checks.append(check("final_l2", study["rows"][-1]["l2_error"], scenario.tol("l2")))
    return checks, study


RUNNERS: Dict[str, Callable[[Scenario], Tuple[List[Check], Dict[str, Any]]]] = {
    "flow_check": run_flow_check,
    "vae_compare": run_vae_compare,
    "gte_invariance": run_gte_invariance,
    "frobenius": run_frobenius,
    "duhamel": run_duhamel,
    "alfven": run_alfven,
    "lifted_flow": run_lifted_flow,
    "convergence": run_convergence,
}


def run_experiment(scenario: Scenario) -> Tuple[List[Check], Dict[str, Any]]:
    logger.info("Running scenario '%s' (%s)", scenario.name, scenario.kind)
    return RUNNERS[scenario.kind](scenario)
