"""
Tests for transport.py - advection solvers, current paths, Duhamel and induction
"""
import csv
import math

import numpy as np
import pytest

from currents import ACCurrent, FlowMapping, circle, mass, pair, pushforward, segment
from errors import CFLError, ConfigError, DimensionError, PreconditionError
from fields import AnalyticField, Box, GridField, builtin, gaussian_curl, windowed
from flow import IntegratorConfig
from forms import Bump, Polynomial, TestForm1, form_catalog, function_catalog
from transport import (
    TimeBump,
    boundary_transport_check,
    duhamel_at,
    duhamel_solve,
    export_path_csv,
    frozen_field_reference,
    frozen_line_compare,
    gte_solve,
    induction_solve,
    l2_error,
    lemma_vae_to_gte_check,
    path_summary,
    rescaled_state,
    transported_density,
    uniform_times,
    vae_eulerian,
    vae_lagrangian,
    vae_weak_residual,
    weak_residual,
)

CFG = IntegratorConfig(dt=1e-3)
COARSE = IntegratorConfig(dt=1e-2)
BOX = Box.cube(2, 2.0)


def blob(center=(0.5, 0.0), radius: float = 0.8) -> AnalyticField:
    """Compactly supported initial field chi * e1"""
    return windowed(builtin("constant", 2), Bump(center, radius))


def linear_forms():
    """Unwindowed polynomial forms"""
    x, y = Polynomial.monomial((1, 0)), Polynomial.monomial((0, 1))
    return [
        TestForm1((y, x), label="y-x"),
        TestForm1((Polynomial.monomial((0, 1), -1.0), x), label="rot"),
        TestForm1((Polynomial.monomial((2, 0)), Polynomial.monomial((1, 1))), label="quad"),
    ]


def sample_points(dim: int, n: int = 50, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n, dim))


class TestRepresentationFormula:
    """v_t = (grad X_t . v_bar)(X_{-t})"""

    def test_dilation(self):
        """Constant c under dilation grows to e^t c"""
        c = builtin("constant", 2, value=(0.3, -0.4))
        v = vae_lagrangian(builtin("dilation", 2), c, 0.7, sample_points(2), CFG)
        assert np.allclose(v, math.exp(0.7) * np.array([0.3, -0.4]))

    def test_rotation(self):
        """e1 under rotation turns into (cos t, sin t)"""
        v = vae_lagrangian(builtin("rotation2d"), builtin("constant", 2), 1.2, sample_points(2), CFG)
        assert np.allclose(v, [math.cos(1.2), math.sin(1.2)])

    def test_time_zero(self):
        x = sample_points(2)
        assert np.allclose(vae_lagrangian(builtin("shear2d"), blob(), 0.0, x), blob().evaluate(0.0, x))

    def test_transported_density(self):
        """rho_t v_t = e^{-t} c for the planar dilation"""
        c = builtin("constant", 2)
        moved = transported_density(builtin("dilation", 2), c, 0.5, sample_points(2), CFG)
        assert np.allclose(moved, [math.exp(-0.5), 0.0])


class TestEulerianScheme:
    """Grid RK4 solver for the vector advection equation"""

    def test_cfl_violation(self):
        with pytest.raises(CFLError):
            vae_eulerian(builtin("rotation2d"), blob(), BOX, 32, 1.0, dt=1.0)

    def test_recorded_times(self):
        run = vae_eulerian(builtin("rotation2d"), blob(), BOX, 16, 0.5, times=[0.0, 0.25, 0.5])
        assert len(run.states) == 3
        assert run.states[0].t == 0.0
        assert run.final.t == pytest.approx(0.5)
        assert np.allclose(run.states[0].samples, blob().evaluate(0.0, BOX.nodes((16, 16))))

    def test_step_never_exceeds_requested_dt(self):
        """0.07 / 0.049 is not an integer; the solver takes two steps of 0.035"""
        box = Box.cube(2, 1.0)
        run = vae_eulerian(builtin("constant", 2), builtin("constant", 2), box, 20, 0.07, dt=0.049)
        assert run.steps == 2
        assert run.dt <= 0.049
        assert run.final.dt == pytest.approx(0.035)
        assert run.final.t == pytest.approx(0.07)

    def test_requested_dt_just_below_cfl_bound(self):
        """|b| = 1 and h = 0.1 give a bound of 0.05"""
        box = Box.cube(2, 1.0)
        run = vae_eulerian(builtin("constant", 2), builtin("constant", 2), box, 20, 0.12, dt=0.05)
        assert run.steps == 3
        assert run.dt <= 0.05 * (1.0 + 1e-12)

    def test_output_time_outside_horizon(self):
        with pytest.raises(ConfigError):
            vae_eulerian(builtin("rotation2d"), blob(), BOX, 16, 0.5, times=[1.0])

    def test_bad_initial_samples(self):
        with pytest.raises(DimensionError):
            vae_eulerian(builtin("rotation2d"), np.zeros((8, 8, 2)), BOX, 16, 0.5)

    def test_second_order_convergence(self):
        """L2 error against the representation formula drops by about four per refinement"""
        b = builtin("rotation2d")
        errors = []
        for n in (32, 64):
            state = vae_eulerian(b, blob(), BOX, n, 0.5).final
            reference = vae_lagrangian(b, blob(), 0.5, state.nodes(), CFG)
            errors.append(l2_error(state, reference))
        assert errors[1] < errors[0]
        assert errors[0] / errors[1] > 3.0

    def test_weak_form(self):
        """The representation formula satisfies the weak equation"""
        b = builtin("rotation2d")
        times = np.linspace(0.0, 1.0, 21)
        for form in form_catalog(2)[:5]:
            assert abs(vae_weak_residual(b, blob(), form, times, BOX, 64, cfg=COARSE)) < 1e-4

    @pytest.mark.parametrize("name", ["rotation2d", "dilation", "shear2d"])
    def test_vae_gives_gte(self, name):
        """(rho_t v_t) Lebesgue pairs like (X_t)_* T_{v_bar}"""
        v_bar = blob(center=(0.0, 0.0), radius=0.8)
        report = lemma_vae_to_gte_check(builtin(name, 2), v_bar, 0.5, form_catalog(2), BOX, 128, COARSE)
        assert report["forms"] == 25
        assert report["max_abs_diff"] < 1e-5


class TestTimes:
    """Uniform time grids"""

    def test_uniform_times_pass_through(self):
        grid, report = uniform_times([0.0, 0.5, 1.0])
        assert report["uniform"]
        assert np.allclose(grid, [0.0, 0.5, 1.0])

    def test_snapping(self):
        grid, report = uniform_times([0.0, 0.3, 1.0])
        assert not report["uniform"]
        assert report["max_shift"] == pytest.approx(0.2)
        assert np.allclose(grid, [0.0, 0.5, 1.0])

    def test_repeated_times(self):
        with pytest.raises(ConfigError):
            uniform_times([0.0, 0.0, 1.0])

    def test_time_bump(self):
        psi = TimeBump(0.0, 2.0)
        assert psi(1.0) == pytest.approx(1.0)
        assert psi(0.0) == 0.0
        assert psi(2.5) == 0.0
        h = 1e-6
        assert psi.derivative(0.4) == pytest.approx((psi(0.4 + h) - psi(0.4 - h)) / (2 * h), rel=1e-6)


class TestGeometricTransport:
    """T_t = (X_t)_* T_bar and its weak residual"""

    def test_rotated_circle_is_invariant(self):
        path = gte_solve(builtin("rotation2d"), circle(radius=0.7, n=256), np.linspace(0.0, 1.0, 5), COARSE)
        for form in form_catalog(2)[:10]:
            values = [pair(current, form) for _, current in path]
            assert max(values) - min(values) < 1e-8

    def test_dilation_scales_mass(self):
        path = gte_solve(builtin("dilation", 2), segment((0.1, 0.0), (0.5, 0.3)), [0.0, 0.5, 1.0], CFG)
        masses = [mass(current) for _, current in path]
        assert masses[1] == pytest.approx(math.exp(0.5) * masses[0])
        assert masses[2] == pytest.approx(math.e * masses[0])

    def test_initial_current_is_kept(self):
        chain = segment((0.0, 0.0), (1.0, 0.0))
        path = gte_solve(builtin("shear2d"), chain, [0.0, 1.0], CFG)
        assert path.currents[0] is chain

    def test_time_dependent_field(self):
        with pytest.raises(ConfigError):
            gte_solve(AnalyticField.from_exprs(["t", "0"]), segment((0.0, 0.0), (1.0, 0.0)), [0.0, 1.0])

    def test_weak_residual_of_solution(self):
        """Only the time quadrature is left, fourth order in the step"""
        b = builtin("shear2d")
        chain = segment((-0.4, -0.2), (0.5, 0.3))
        coarse = gte_solve(b, chain, np.linspace(0.0, 1.0, 21), CFG)
        fine = gte_solve(b, chain, np.linspace(0.0, 1.0, 41), CFG)
        for form in linear_forms():
            first, second = abs(weak_residual(coarse, b, form)), abs(weak_residual(fine, b, form))
            assert first < 1e-4
            assert second <= first / 8.0 + 1e-12

    def test_weak_residual_detects_wrong_field(self):
        path = gte_solve(builtin("shear2d"), segment((-0.4, -0.2), (0.5, 0.3)), np.linspace(0.0, 1.0, 21), CFG)
        assert abs(weak_residual(path, builtin("rotation2d"), linear_forms()[0])) > 1e-3

    def test_single_time_path(self):
        path = gte_solve(builtin("shear2d"), segment((0.0, 0.0), (1.0, 0.0)), [0.5], CFG)
        assert weak_residual(path, builtin("shear2d"), linear_forms()[0]) == 0.0

    def test_boundary_moves_with_divergence_free_flow(self):
        T = ACCurrent(builtin("constant", 2), BOX, 128, Bump((0.0, 0.0), 0.8))
        report = boundary_transport_check(builtin("rotation2d"), T, 0.6, function_catalog(2)[:10], COARSE)
        assert report["max_abs_diff"] < 1e-5

    def test_boundary_transport_needs_divergence_free(self):
        T = ACCurrent(builtin("constant", 2), BOX, 32, Bump((0.0, 0.0), 0.8))
        with pytest.raises(PreconditionError):
            boundary_transport_check(builtin("dilation", 2), T, 0.5, function_catalog(2)[:2])

    def test_export_and_summary(self, tmp_path):
        path = gte_solve(builtin("rotation2d"), circle(n=32), [0.0, 0.5, 1.0], COARSE)
        target = export_path_csv(path, linear_forms(), tmp_path / "out" / "pairings.csv")
        with open(target, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["t", "y-x", "rot", "quad"]
        assert len(rows) == 4
        summary = path_summary(path, field="rotation2d")
        assert summary["kind"] == "chain"
        assert summary["n_times"] == 3
        assert summary["field"] == "rotation2d"


class TestDuhamel:
    """Transport with a source term"""

    def test_no_source_is_pure_transport(self):
        b, chain = builtin("shear2d"), segment((0.0, 0.0), (1.0, 1.0))
        with_duhamel = duhamel_solve(b, chain, [0.0, 0.5, 1.0], None, CFG)
        plain = gte_solve(b, chain, [0.0, 0.5, 1.0], CFG)
        form = linear_forms()[2]
        for (_, first), (_, second) in zip(with_duhamel, plain):
            assert pair(first, form) == pytest.approx(pair(second, form))

    def test_static_field_accumulates_source(self):
        """b = 0 gives T_t = T_bar + t S"""
        b = builtin("constant", 2, value=(0.0, 0.0))
        initial, source = segment((0.5, 0.5), (1.0, 0.0)), segment((0.0, 0.0), (1.0, 1.0))
        path = duhamel_solve(b, initial, np.linspace(0.0, 1.0, 5), lambda s: source, COARSE)
        form = linear_forms()[0]
        for t, current in path:
            expected = pair(initial, form) + t * pair(source, form)
            assert pair(current, form) == pytest.approx(expected, abs=1e-12)

    def test_transported_source(self):
        """R_s = (X_s)_* S gives T_t = (X_t)_* (T_bar + t S)"""
        b = builtin("rotation2d")
        initial, source = segment((0.2, 0.0), (0.8, 0.0)), segment((0.0, 0.3), (0.0, 0.9))
        path = duhamel_solve(
            b, initial, np.linspace(0.0, 1.0, 6), lambda s: pushforward(source, FlowMapping(b, s, COARSE)), COARSE
        )
        for t, current in path:
            mapping = FlowMapping(b, t, COARSE)
            for form in linear_forms():
                expected = pair(pushforward(initial, mapping), form) + t * pair(pushforward(source, mapping), form)
                assert pair(current, form) == pytest.approx(expected, abs=1e-8)

    def test_single_time(self):
        b = builtin("constant", 2, value=(0.0, 0.0))
        initial, source = segment((0.0, 0.0), (1.0, 0.0)), segment((0.0, 0.0), (1.0, 1.0))
        current = duhamel_at(b, initial, 2.0, lambda s: source, 4, COARSE)
        assert pair(current, linear_forms()[0]) == pytest.approx(2.0)

    def test_invalid_arguments(self):
        b, chain = builtin("rotation2d"), segment((0.0, 0.0), (1.0, 0.0))
        with pytest.raises(ConfigError):
            duhamel_at(b, chain, 1.0, lambda s: chain, 0)
        with pytest.raises(ConfigError):
            duhamel_solve(b, chain, None, lambda s: chain)
        with pytest.raises(ConfigError):
            duhamel_solve(b, chain, [0.5, 1.0], lambda s: chain)


class TestInduction:
    """d_t B = curl(V x B) and frozen-in field lines"""

    def test_uniform_field_under_rotation(self):
        """A uniform e1 turns into (cos t, sin t, 0)"""
        box = Box.cube(3, 1.0)
        run = induction_solve(builtin("rotation3d"), builtin("constant", 3), box, 8, 1.0, times=[0.0, 1.0], dt=0.02)
        assert np.allclose(run.states[0].samples, [1.0, 0.0, 0.0])
        assert np.allclose(run.final.samples, [math.cos(1.0), math.sin(1.0), 0.0], atol=1e-6)
        assert len(run.div_history) == run.steps
        assert max(run.div_history) < 1e-12

    def test_conservative_form_preserves_divergence(self):
        """div of the discrete curl vanishes, so max|div B| keeps its initial value"""
        box = Box.cube(3, 2.0)
        V = GridField.from_field(builtin("rotation3d"), box, 16)
        B_bar = gaussian_curl(3, center=(0.5, 0.0, 0.0), width=0.5)
        run = induction_solve(V, B_bar, box, 16, 0.2, times=[0.0, 0.2])
        initial = run.states[0].divergence_max()
        assert len(run.div_history) == run.steps
        assert max(abs(d - initial) for d in run.div_history) < 1e-10
        assert run.final.divergence_max() == pytest.approx(initial, abs=1e-10)
        assert np.max(np.abs(run.final.samples - run.states[0].samples)) > 1e-3

    def test_matches_frozen_reference(self):
        box = Box.cube(3, 1.0)
        V, B_bar = builtin("dilation", 3), builtin("constant", 3)
        state = induction_solve(V, B_bar, box, 8, 0.5, dt=0.01).final
        reference = frozen_field_reference(V, B_bar, 0.5, box, 8, COARSE)
        assert np.allclose(reference, [math.exp(-1.0), 0.0, 0.0])
        assert l2_error(state, reference) < 1e-6

    def test_rescaling_by_density(self):
        """B_t / rho_t under dilation is e^t e1"""
        box = Box.cube(3, 1.0)
        V = builtin("dilation", 3)
        state = induction_solve(V, builtin("constant", 3), box, 8, 0.5, dt=0.01).final
        assert np.allclose(rescaled_state(state, V, COARSE).samples, [math.exp(0.5), 0.0, 0.0], atol=1e-6)

    def test_needs_3d(self):
        with pytest.raises(DimensionError):
            induction_solve(builtin("rotation2d"), builtin("constant", 2), BOX, 8, 0.5)

    def test_frozen_lines_incompressible(self):
        seeds = [[0.1, 0.0, 0.0], [0.0, 0.2, 0.1]]
        report = frozen_line_compare(
            builtin("rotation3d"), builtin("constant", 3), 0.5, seeds, Box.cube(3, 2.0), 16, COARSE,
            line_length=0.5, n_steps=50,
        )
        assert report["truncated"] == 0
        assert report["shape_deviation"] < 1e-6
        assert report["param_deviation"] < 1e-6

    def test_frozen_lines_compressible(self):
        """Shapes are frozen either way, parametrisations only after dividing by rho"""
        V, B_bar, box = builtin("dilation", 3), builtin("constant", 3), Box.cube(3, 3.0)
        seeds = [[0.1, 0.0, 0.0], [0.0, -0.1, 0.1]]
        plain = frozen_line_compare(V, B_bar, 0.5, seeds, box, 16, COARSE, line_length=0.5, n_steps=50)
        rescaled = frozen_line_compare(V, B_bar, 0.5, seeds, box, 16, COARSE, rescale=True, line_length=0.5, n_steps=50)
        assert plain["shape_deviation"] < 1e-6
        assert rescaled["shape_deviation"] < 1e-6
        assert rescaled["param_deviation"] < 1e-6
        # 0.5 * (e^{1/2} - e^{-1})
        assert plain["param_deviation"] == pytest.approx(0.5 * (math.exp(0.5) - math.exp(-1.0)), rel=1e-4)

    @pytest.mark.slow
    def test_second_order_convergence(self):
        """A localized divergence-free field carried by rotation"""
        box = Box.cube(3, 2.0)
        V, B_bar = builtin("rotation3d"), gaussian_curl(3, center=(0.5, 0.0, 0.0), width=0.4)
        errors = []
        for n in (32, 64):
            state = induction_solve(V, B_bar, box, n, 0.5).final
            errors.append(l2_error(state, frozen_field_reference(V, B_bar, 0.5, box, n, COARSE)))
        assert errors[0] / errors[1] > 3.0
