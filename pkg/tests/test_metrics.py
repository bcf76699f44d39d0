import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forest_dnc.metrics import mode_mass, wasserstein1_marginal, wasserstein1_sum


class TestWasserstein1:
    def test_identical_samples_zero(self):
        x = np.random.default_rng(0).normal(size=(500, 2))
        assert wasserstein1_marginal(x, x.copy(), dim=0) == 0.0
        assert wasserstein1_sum(x, x.copy()) == 0.0

    def test_translation_gives_shift(self):
        x = np.random.default_rng(1).normal(size=(400, 1))
        for c in (0.5, -2.25):
            assert wasserstein1_marginal(x, x + c) == pytest.approx(abs(c), rel=1e-12)

    def test_unit_mean_gap_between_gaussians(self):
        rng = np.random.default_rng(2)
        a = rng.normal(0.0, 1.0, size=(100_000, 1))
        b = rng.normal(1.0, 1.0, size=(100_000, 1))
        assert wasserstein1_marginal(a, b) == pytest.approx(1.0, abs=0.02)

    def test_symmetry_with_unequal_sizes(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(1_000, 1))
        b = rng.normal(0.3, 1.2, size=(333, 1))
        assert wasserstein1_marginal(a, b) == wasserstein1_marginal(b, a)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_triangle_inequality_equal_sizes(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = rng.normal(size=(3, 50, 1)) * rng.uniform(0.5, 2, size=(3, 1, 1))
        ab = wasserstein1_marginal(a, b)
        bc = wasserstein1_marginal(b, c)
        ac = wasserstein1_marginal(a, c)
        assert ac <= ab + bc + 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            wasserstein1_marginal(np.empty((0, 1)), np.zeros((3, 1)))

    def test_downsampling_deterministic(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(997, 1))
        b = rng.normal(size=(400, 1))
        assert wasserstein1_marginal(a, b) == wasserstein1_marginal(a, b)


class TestModeMass:
    def test_point_mass_at_first_center(self):
        samples = np.tile([0.0, 1.0], (50, 1))
        masses = mode_mass(samples, [[0.0, 1.0], [1.0, -1.0]], radius=0.75)
        assert masses.tolist() == [1.0, 0.0]

    def test_symmetric_split(self):
        samples = np.vstack([np.tile([0.0, 1.0], (25, 1)), np.tile([1.0, -1.0], (25, 1))])
        masses = mode_mass(samples, [[0.0, 1.0], [1.0, -1.0]], radius=0.75)
        assert masses.tolist() == [0.5, 0.5]

    def test_radius_boundary_inclusive(self):
        samples = np.array([[0.75, 0.0]])
        assert mode_mass(samples, [[0.0, 0.0]], radius=0.75).tolist() == [1.0]
