"""Validation behaviour of the immutable value types."""

import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from hlm_backend.errors import DataValidationError, ParameterValidationError, SpecificationError
from hlm_backend.models import (
    ConditionalMoments,
    GibbsConfig,
    HlmSpec,
    Parameters,
    PriorConfig,
)

from conftest import make_dataset


class TestDataset:
    """Shape, ordering and mask rules of a two-level dataset."""

    def test_arrays_are_read_only(self):
        dataset = make_dataset([1.0, 2.0, 3.0], [0, 0, 1], [0.5, 1.5])
        assert not dataset.y.flags.writeable
        with pytest.raises(ValueError):
            dataset.c[0, 0] = 9.0

    def test_derived_sizes(self):
        dataset = make_dataset([1.0, 2.0, 3.0], [0, 0, 1], [0.5, 1.5])
        assert (dataset.N, dataset.J, dataset.p) == (3, 2, 1)
        np.testing.assert_array_equal(dataset.n_j, [2, 1])
        assert dataset.c_names == ("C1",)

    def test_unsorted_clusters_rejected(self):
        with pytest.raises(DataValidationError):
            make_dataset([1.0, 2.0, 3.0], [1, 0, 1], [0.5, 1.5])

    def test_empty_cluster_rejected(self):
        with pytest.raises(DataValidationError):
            make_dataset([1.0, 2.0], [0, 2], [0.5, 1.0, 1.5])

    def test_nan_allowed_only_under_mask(self):
        make_dataset([np.nan, 2.0], [0, 1], [0.5, np.nan],
                     y_missing=[True, False], c_missing=[False, True])
        with pytest.raises(DataValidationError):
            make_dataset([np.nan, 2.0], [0, 1], [0.5, 1.0])
        with pytest.raises(DataValidationError):
            make_dataset([1.0, 2.0], [0, 1], [0.5, np.nan])

    def test_known_covariates_must_be_observed(self):
        with pytest.raises(DataValidationError):
            make_dataset([1.0, 2.0], [0, 1], [0.5, 1.0], x2=[[1.0], [np.nan]])

    def test_unmask_clears_masks_and_keeps_values(self):
        dataset = make_dataset([1.0, 2.0, 3.0], [0, 0, 1], [0.5, 1.5],
                               y_missing=[False, True, False], c_missing=[True, False])
        clear = dataset.unmask()
        assert not clear.y_missing.any() and not clear.c_missing.any()
        np.testing.assert_array_equal(clear.y, dataset.y)
        np.testing.assert_array_equal(clear.c, dataset.c)

    def test_spec_mismatch(self):
        dataset = make_dataset([1.0, 2.0], [0, 1], [0.5, 1.0])
        with pytest.raises(SpecificationError):
            dataset.check_spec(HlmSpec(p=2))
        dataset.check_spec(HlmSpec(p=1))


class TestParameters:
    def test_valid_parameters(self):
        params = Parameters(np.ones(5), 4.0, 16.0, np.zeros(4), np.eye(2))
        assert params.tau == 4.0
        assert not params.beta.flags.writeable

    @pytest.mark.parametrize("tau, sigma2", [(0.0, 1.0), (1.0, -1.0), (np.inf, 1.0)])
    def test_variances_must_be_positive(self, tau, sigma2):
        with pytest.raises(ValueError):
            Parameters(np.ones(2), tau, sigma2, np.zeros(1), np.eye(1))

    def test_T_must_be_spd(self):
        with pytest.raises(ValueError):
            Parameters(np.ones(3), 1.0, 1.0, np.zeros(2), [[1.0, 2.0], [2.0, 1.0]])


class TestConfigs:
    def test_prior_defaults(self):
        priors = PriorConfig()
        assert priors.ig_shape == 1.0
        assert priors.ig_rate == pytest.approx(2.0)
        assert priors.iw_dof is None and priors.iw_scale is None

    def test_prior_rejects_bad_values(self):
        with pytest.raises(ValueError):
            PriorConfig(ig_shape=0.0)
        with pytest.raises(ValueError):
            PriorConfig(iw_scale=[[1.0, 0.0], [0.0, -1.0]])
        with pytest.raises(ParameterValidationError) as excinfo:
            PriorConfig(iw_dof=0.5).check_dimension(2)
        assert "IW_DOF" in excinfo.value.errors
        with pytest.raises(SpecificationError):
            PriorConfig(iw_scale=np.eye(3)).check_dimension(2)

    def test_gibbs_config_bounds(self):
        with pytest.raises(ValueError):
            GibbsConfig(kept=0)
        with pytest.raises(ValueError):
            GibbsConfig(burn_in=-1)
        assert GibbsConfig().n_chains == 2

    def test_conditional_moments_need_positive_variance(self):
        assert ConditionalMoments(1.0, 0.5).variance == 0.5
        with pytest.raises(ValueError):
            ConditionalMoments(1.0, 0.0)
