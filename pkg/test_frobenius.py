"""
Tests for frobenius.py - commuting flows, invariant currents and lifted flows
"""
import math

import numpy as np
import pytest

from currents import builtin_chain, circle, mass, segment
from errors import ConfigError, PreconditionError
from fields import AnalyticField, Box, builtin
from flow import IntegratorConfig
from frobenius import (
    bracket_residual_norm,
    commutativity_lattice,
    commutator_defect,
    halton_samples,
    invariance_defect,
    lifted_flow_lipschitz_check,
    lifted_pushforward_check,
    non_concentration_check,
    random_curve_pairs,
    weighted_gte_residual,
)

COARSE = IntegratorConfig(dt=1e-2)


class TestCommutativity:
    """X_t Y_s = Y_s X_t exactly when [b, v] = 0"""

    def test_rotation_and_dilation_commute(self):
        report = commutativity_lattice(builtin("rotation2d"), builtin("dilation", 2), cfg=COARSE)
        assert len(report.pairs) == 9
        assert report.worst <= 1e-6
        assert report.verdict
        assert report.bracket_residual < 1e-12

    def test_shear_commutes_with_its_direction(self):
        report = commutativity_lattice(builtin("shear2d"), builtin("constant", 2), cfg=COARSE)
        assert report.verdict

    @pytest.mark.parametrize("t,s", [(0.25, 0.5), (1.0, 0.5), (1.0, 1.0)])
    def test_rotation_and_translation(self, t, s):
        """|R_t(x + s e1) - (R_t x + s e1)| = 2 s |sin(t / 2)| everywhere"""
        samples = halton_samples(Box.cube(2, 1.0), 50)
        report = commutator_defect(builtin("rotation2d"), builtin("constant", 2), t, s, samples, COARSE)
        expected = 2.0 * s * abs(math.sin(t / 2.0))
        assert report.max_defect[0] == pytest.approx(expected, rel=1e-8)
        assert report.mean_defect[0] == pytest.approx(expected, rel=1e-8)
        assert not report.verdict
        assert report.bracket_residual == pytest.approx(1.0)

    def test_report_serializes(self):
        report = commutator_defect(builtin("rotation2d"), builtin("dilation", 2), 0.5, 0.5, np.zeros((1, 2)))
        data = report.to_dict()
        assert data["pairs"] == [[0.5, 0.5]]
        assert data["verdict"] is True

    def test_halton_samples_fill_the_box(self):
        points = halton_samples(Box((0.0, -1.0), (2.0, 1.0)), 100, seed=3)
        assert points.shape == (100, 2)
        assert np.all(points[:, 0] >= 0.0) and np.all(points[:, 0] <= 2.0)
        assert np.all(points[:, 1] >= -1.0) and np.all(points[:, 1] <= 1.0)

    def test_bracket_residual_norm(self):
        """[rotation, e1] is the rotated e1, of unit length everywhere"""
        box = Box.cube(2, 1.0)
        assert bracket_residual_norm(builtin("rotation2d"), builtin("constant", 2), box) == pytest.approx(1.0)
        assert bracket_residual_norm(builtin("rotation2d"), builtin("dilation", 2), box) < 1e-12


class TestWeightedTransport:
    """(rho_t v) Lebesgue solves the GTE with b when the flows commute"""

    def test_rotation_carries_dilation(self):
        """Divergence-free b, so rho = 1"""
        residual = weighted_gte_residual(builtin("rotation2d"), builtin("dilation", 2), 1.0, cfg=COARSE)
        assert residual < 1e-4

    @pytest.mark.slow
    def test_dilation_carries_rotation(self):
        """Compressible b: rho_t = exp(-2t) enters the pairing"""
        residual = weighted_gte_residual(builtin("dilation", 2), builtin("rotation2d"), 0.5, cfg=COARSE)
        assert residual < 1e-4

    def test_rotation_does_not_carry_translation(self):
        residual = weighted_gte_residual(builtin("rotation2d"), builtin("constant", 2), 0.5, cfg=COARSE)
        assert residual > 1e-2

    def test_zero_horizon(self):
        assert weighted_gte_residual(builtin("rotation2d"), builtin("constant", 2), 0.0) == 0.0

    def test_lattice_report_carries_residual(self):
        plain = commutativity_lattice(builtin("rotation2d"), builtin("dilation", 2), [0.5], [0.5], cfg=COARSE)
        assert plain.gte_residual is None
        report = commutativity_lattice(
            builtin("rotation2d"), builtin("dilation", 2), [0.5], [0.5], cfg=COARSE, gte_check=True,
        )
        assert report.gte_residual < 1e-4
        assert report.to_dict()["gte_residual"] == report.gte_residual


class TestInvariance:
    """Currents with vanishing Lie derivative stay put"""

    def test_concentric_circles_under_rotation(self):
        rings = builtin_chain("rings", 2, radii=[0.5, 1.0], n=720)
        report = invariance_defect(builtin("rotation2d"), rings, [0.0, 0.25, 0.5, 1.0], cfg=COARSE)
        assert report.distances[0] == 0.0
        assert report.worst < 1e-6
        assert report.hypothesis_residual < 1e-6
        assert report.catalog == "catalog25"

    def test_radial_segment_moves(self):
        """A radial segment is not invariant and its Lie derivative is visible"""
        report = invariance_defect(builtin("rotation2d"), segment((0.0, 0.0), (1.0, 0.0)), [0.5, 1.0], cfg=COARSE)
        assert report.worst > 1e-2
        assert report.hypothesis_residual > 1e-2

    def test_compressible_field_is_rejected(self):
        with pytest.raises(PreconditionError):
            invariance_defect(builtin("dilation", 2), circle(n=64), [0.5])

    def test_abc_flow_is_accepted(self):
        """Divergence-free 3D field with a chain that is not invariant"""
        report = invariance_defect(
            builtin("abc_flow"), segment((0.0, 0.0, 0.0), (0.3, 0.0, 0.0)), [0.1], cfg=COARSE,
        )
        assert len(report.distances) == 1
        assert report.to_dict()["times"] == [0.1]


class TestLiftedFlow:
    """Curves pushed one by one represent the pushed current"""

    def test_dilation_of_rings(self):
        eta = builtin_chain("rings", 2, radii=[0.25, 0.5], n=64)
        report = lifted_pushforward_check(builtin("dilation", 2), eta, 1.0, cfg=COARSE)
        assert report["pairing_mismatch"] < 1e-8
        assert report["lifted_mass"] == pytest.approx(math.e * mass(eta), rel=1e-8)
        assert report["mass_mismatch"] < 1e-8
        assert report["max_stretch"] == pytest.approx(math.e, rel=1e-8)

    def test_rotation_keeps_mass(self):
        eta = builtin_chain("segment", 2, start=(0.1, 0.1), end=(0.6, -0.2), weight=2.0)
        report = lifted_pushforward_check(builtin("rotation2d"), eta, 1.0, cfg=COARSE)
        assert report["lifted_mass"] == pytest.approx(mass(eta))
        assert report["warnings"] == []

    def test_lipschitz_bound(self):
        pairs = random_curve_pairs(2, np.random.default_rng(7))
        for name in ("rotation2d", "shear2d", "dilation"):
            report = lifted_flow_lipschitz_check(builtin(name, 2), pairs, 0.8, cfg=COARSE)
            assert report["ok"], report
            assert report["max_ratio"] <= report["bound"] * (1.0 + 1e-9)

    def test_rotation_is_an_isometry(self):
        pairs = random_curve_pairs(2, np.random.default_rng(8), n_pairs=3)
        report = lifted_flow_lipschitz_check(builtin("rotation2d"), pairs, 1.0, cfg=COARSE)
        assert report["max_ratio"] == pytest.approx(1.0, rel=1e-8)

    def test_missing_lipschitz_constant(self):
        field = AnalyticField.from_exprs(["sin(y)", "0"])
        with pytest.raises(ConfigError):
            lifted_flow_lipschitz_check(field, random_curve_pairs(2, np.random.default_rng(0), 1), 0.5)
        assert lifted_flow_lipschitz_check(field, random_curve_pairs(2, np.random.default_rng(0), 1), 0.5, lip=1.0)["ok"]


class TestNonConcentration:
    """Images of Lebesgue measure stay below exp(|div v| s)"""

    def test_dilation_is_tight_backwards(self):
        """Backward dilation compresses at exactly the allowed rate"""
        cloud = halton_samples(Box.cube(2, 1.0), 50)
        report = non_concentration_check(builtin("dilation", 2), -0.5, cloud, COARSE)
        assert report["div_sup"] == pytest.approx(2.0)
        assert report["max_compression"] == pytest.approx(report["bound"], rel=1e-8)
        assert report["ok"]

    def test_divergence_free_flow(self):
        cloud = halton_samples(Box.cube(3, 1.0), 50)
        report = non_concentration_check(builtin("abc_flow"), 1.0, cloud, COARSE, div_sup=0.0)
        assert report["max_compression"] == pytest.approx(1.0, abs=1e-8)
        assert report["ok"]

    def test_violated_bound(self):
        """Understating |div v| breaks the contract"""
        cloud = halton_samples(Box.cube(2, 1.0), 20)
        report = non_concentration_check(builtin("dilation", 2), -0.5, cloud, COARSE, div_sup=1.0)
        assert not report["ok"]
