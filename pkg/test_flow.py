"""
Tests for flow.py - flow maps, Jacobians and densities
"""
import math

import numpy as np
import pytest

from errors import ConfigError, IntegrationError
from fields import AnalyticField, Box, builtin, builtin_catalog
from flow import (
    IntegratorConfig,
    advance,
    continuity_residual,
    density_at,
    density_bounds,
    flow_map,
    inverse_defect,
    jacobian_fd_consistency,
    semigroup_defect,
)

CFG = IntegratorConfig(dt=1e-3)
COARSE = IntegratorConfig(dt=1e-2)


def sample_points(dim: int, n: int = 100, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n, dim))


def rotation_matrix(t: float) -> np.ndarray:
    return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


class TestIntegratorConfig:
    """Integrator settings and their validation"""

    def test_overrides_win(self):
        cfg = IntegratorConfig.default(dt=0.05, scheme="rk2")
        assert cfg.dt == 0.05
        assert cfg.scheme == "rk2"

    def test_none_overrides_are_ignored(self):
        assert IntegratorConfig.default(dt=None).dt > 0

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            IntegratorConfig(dt=0.0)
        with pytest.raises(ConfigError):
            IntegratorConfig(scheme="euler")

    def test_step_budget(self):
        """|t| / dt above max_steps"""
        cfg = IntegratorConfig(dt=1e-3, max_steps=10)
        with pytest.raises(IntegrationError) as info:
            flow_map(builtin("rotation2d"), 1.0, np.zeros(2), cfg)
        assert info.value.reason == "step_budget_exceeded"


class TestClosedForms:
    """Flows with known solutions"""

    def test_rotation(self):
        """X_t is the rotation by angle t"""
        x = sample_points(2)
        expected = x @ rotation_matrix(1.0).T
        assert np.allclose(flow_map(builtin("rotation2d"), 1.0, x, CFG), expected, atol=1e-12)

    def test_dilation_jacobian_and_density(self):
        """grad X_t = e^t I and rho = e^{-d t}"""
        x = sample_points(3)
        sample = advance(builtin("dilation", 3), 0.5, x, CFG)
        assert np.allclose(sample.endpoint, math.exp(0.5) * x)
        assert np.allclose(sample.jacobian, math.exp(0.5) * np.eye(3))
        assert np.allclose(sample.density, math.exp(-1.5))

    def test_shear(self):
        """X_t(x, y) = (x + t y, y)"""
        x = sample_points(2)
        moved = flow_map(builtin("shear2d"), 0.7, x, CFG)
        assert np.allclose(moved, np.stack([x[:, 0] + 0.7 * x[:, 1], x[:, 1]], axis=-1))

    def test_constant_translation(self):
        x = sample_points(2)
        moved = flow_map(builtin("constant", 2, value=(1.0, -2.0)), 0.25, x, CFG)
        assert np.allclose(moved, x + np.array([0.25, -0.5]))

    def test_zero_time_is_identity(self):
        x = sample_points(2)
        sample = advance(builtin("shear2d"), 0.0, x, CFG)
        assert np.array_equal(sample.endpoint, x)
        assert np.allclose(sample.det, 1.0)

    def test_time_dependent_field(self):
        """b = (1 + t, 0) moves x by t + t^2 / 2"""
        field = AnalyticField.from_exprs(["1 + t", "0"])
        moved = flow_map(field, 1.0, np.zeros((1, 2)), CFG)
        assert moved[0, 0] == pytest.approx(1.5)

    def test_single_point_shape(self):
        assert flow_map(builtin("rotation2d"), 0.1, np.array([1.0, 0.0]), CFG).shape == (2,)


class TestFlowProperties:
    """Group, inverse and density properties over the catalog"""

    @pytest.mark.parametrize("field", builtin_catalog(), ids=lambda f: f.name)
    def test_inverse(self, field):
        assert inverse_defect(field, 0.5, sample_points(field.dim), CFG) <= 1e-8

    @pytest.mark.parametrize("field", builtin_catalog(), ids=lambda f: f.name)
    def test_semigroup(self, field):
        assert semigroup_defect(field, 0.3, 0.4, sample_points(field.dim), CFG) <= 1e-8

    @pytest.mark.parametrize("field", builtin_catalog(), ids=lambda f: f.name)
    def test_density_bounds(self, field):
        """e^{-|div b| t} <= rho <= e^{|div b| t}"""
        for t in (0.25, 0.5, 1.0):
            report = density_bounds(field, t, sample_points(field.dim, 1000), COARSE, box=Box.cube(field.dim, 1.0))
            assert report["ok"], report

    @pytest.mark.parametrize("field", builtin_catalog(), ids=lambda f: f.name)
    def test_jacobian_matches_fd_of_endpoints(self, field):
        assert jacobian_fd_consistency(field, 0.5, sample_points(field.dim, 20), CFG) <= 1e-6

    def test_divergence_free_density_is_one(self):
        rho = density_at(builtin("abc_flow"), 0.8, sample_points(3), CFG)
        assert np.allclose(rho, 1.0, atol=1e-9)

    def test_continuity_equation(self):
        """d_t rho + div(rho b) = 0 for a compressible field"""
        field = AnalyticField.from_exprs(["x^2", "sin(y)"])
        assert continuity_residual(field, 0.3, sample_points(2, 20), CFG) <= 1e-4

    def test_non_finite_state(self):
        """Blow-up of x' = x^2 in finite time"""
        field = AnalyticField.from_exprs(["x^2", "0"])
        with pytest.raises(IntegrationError):
            flow_map(field, 5.0, np.array([[10.0, 0.0]]), IntegratorConfig(dt=0.1))
