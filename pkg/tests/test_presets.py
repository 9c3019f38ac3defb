import json

import numpy as np
import pytest

from ramlab.errors import ConfigError, ValidationError
from ramlab.presets import PresetCatalog, PresetConfig, list_presets
from ramlab.proposals import RngStream
from ramlab.targets import EllipticalStudentTarget, GaussianMixtureTarget, GaussianTarget, ProductTarget


class TestCatalog:
    def test_known_presets(self, catalog):
        assert set(catalog.get_presets()) == {'student2d-paper', 'student-rand-d', 'gaussian-rand-d', 'mixture-d',
                                              'gaussian-spherical-d', 'cauchy-product-d'}

    def test_bivariate_student_parameters(self, catalog):
        target = catalog.require('student2d-paper').build_target(2, 0, 0)
        assert isinstance(target, EllipticalStudentTarget)
        np.testing.assert_array_equal(target.location, [1.0, 2.0])
        np.testing.assert_array_equal(target.pseudo_covariance.entries, [[0.2, 0.1], [0.1, 0.8]])
        assert target.dof == 1.0

    def test_mixture_parameters(self, catalog):
        described = catalog.require('mixture-d').describe(3)
        assert described['target']['means'] == [[4.0, 0.0, 0.0], [-4.0, 0.0, 0.0]]
        assert described['target']['shared_covariance'] == [1.0, 100.0, 100.0]
        assert described['target']['weights'] == [0.5, 0.5]

    def test_initial_factor_variants(self, catalog):
        assert catalog.initial_factors == {'identity': 1.0, 'small': 1e-4, 'large': 1e4}

    def test_unknown_preset_lists_available(self, catalog):
        with pytest.raises(ValidationError) as exc:
            catalog.require('student3d')
        assert 'student2d-paper' in exc.value.errors[0]

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / "presets.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            PresetCatalog(path)

    def test_unknown_start_rule(self, tmp_path):
        path = tmp_path / "presets.json"
        path.write_text(json.dumps({'presets': {'x': {'target': {'kind': 'product', 'marginal': 'normal'},
                                                      'start': 'anywhere'}}}))
        with pytest.raises(ConfigError):
            PresetCatalog(path)

    def test_list_presets(self, catalog):
        listing = list_presets(catalog)
        assert [p['name'] for p in listing['presets']] == sorted(catalog.get_presets())
        assert listing['initial_factors']['small'] == "0.0001*I"
        bivariate = next(p for p in listing['presets'] if p['name'] == 'student2d-paper')
        assert bivariate['fixed_dim'] and bivariate['dim'] == 2
        assert bivariate['section']


class TestPresetConfig:
    def test_fixed_dimension(self, catalog):
        preset = catalog.require('student2d-paper')
        assert preset.check_dim(2) is None
        assert "fixed" in preset.check_dim(3)
        assert catalog.require('mixture-d').check_dim(8) is None

    def test_random_shapes_keyed_by_stream(self, catalog):
        preset = catalog.require('gaussian-rand-d')
        a = preset.build_target(3, 5, 15)
        assert isinstance(a, GaussianTarget)
        np.testing.assert_array_equal(a.covariance.entries, preset.build_target(3, 5, 15).covariance.entries)
        assert not np.array_equal(a.covariance.entries, preset.build_target(3, 5, 31).covariance.entries)

    def test_target_kinds(self, catalog):
        assert isinstance(catalog.require('mixture-d').build_target(2, 0, 0), GaussianMixtureTarget)
        assert isinstance(catalog.require('cauchy-product-d').build_target(2, 0, 0), ProductTarget)

    def test_start_rules(self, catalog):
        bivariate = catalog.require('student2d-paper')
        target = bivariate.build_target(2, 0, 0)
        np.testing.assert_array_equal(bivariate.initial_point(target, RngStream(0)), [1.0, 2.0])
        mixture = catalog.require('mixture-d')
        np.testing.assert_array_equal(mixture.initial_point(mixture.build_target(2, 0, 0), RngStream(0)), [0.0, 0.0])
        steady = catalog.require('gaussian-rand-d')
        target = steady.build_target(2, 0, 0)
        np.testing.assert_array_equal(steady.initial_point(target, RngStream(0, 15, 1)),
                                      steady.initial_point(target, RngStream(0, 15, 1)))

    def test_truths_and_groups(self, catalog):
        gaussian = catalog.require('gaussian-rand-d')
        assert gaussian.truth_values(8) == {'hpd_10': 0.1, 'hpd_25': 0.25, 'hpd_50': 0.5, 'hpd_75': 0.75,
                                            'hpd_90': 0.9}
        assert gaussian.rmse_scale == 100.0
        mixture = catalog.require('mixture-d')
        assert mixture.truth_values(3) == {'mean_1': 0.0, 'mean_2': 0.0, 'mean_3': 0.0}
        assert mixture.rmse_groups(3) == {'x1': ['mean_1'], 'x2..d': ['mean_2', 'mean_3']}
        assert catalog.require('cauchy-product-d').truth_values(2) == {}

    def test_from_dict_defaults(self):
        preset = PresetConfig.from_dict('x', {'target': {'kind': 'product', 'marginal': 'normal'}})
        assert (preset.start, preset.truths, preset.algorithms) == ('origin', 'none', ['ram'])
        assert preset.dim == 2 and preset.fixed_dim is None
        assert isinstance(preset.build_target(4, 0, 0), ProductTarget)

    @pytest.mark.parametrize("config", [
        {},
        {'target': 'gaussian'},
        {'target': {'kind': 'banana'}},
        {'target': {'kind': 'gaussian', 'covariance': 'identity'}, 'truths': 'medians'},
        {'target': {'kind': 'gaussian', 'covariance': 'identity'}, 'truths': 'hpd'},
    ])
    def test_from_dict_rejects(self, config):
        with pytest.raises(ConfigError):
            PresetConfig.from_dict('x', config)
