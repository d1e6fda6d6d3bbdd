import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from umtn.datagen import (
    COEFF_VARIANCE,
    MAX_MODE,
    ConvDiffConfig,
    FourierInitialCondition,
    SequenceDataset,
    _field_grids,
    _rhs,
    _simulate_batch,
    coefficient_fields,
    generate_dataset,
    grid_coordinates,
    sample_initial_condition,
    simulate_convdiff,
)
from umtn.errors import ConfigError, DivergenceError
from umtn.interpolation import SiteSet

SIZE = 2 * MAX_MODE + 1


def small_config(**overrides):
    defaults = dict(
        grid_size=16,
        dt_out=0.01,
        t_end=0.05,
        n_sites=10,
        n_sequences=3,
        split=(1, 1, 1),
        substeps_per_output=2,
        seed=0,
    )
    defaults.update(overrides)
    return ConvDiffConfig(**defaults)


class TestCoefficientFields:
    def test_center_values(self):
        a, b, c = coefficient_fields((math.pi, math.pi))
        assert a == pytest.approx(0.1, abs=1e-12)
        assert b == pytest.approx(-1.2, abs=1e-12)
        assert c == pytest.approx(0.5, abs=1e-12)

    def test_origin_values(self):
        a, b, c = coefficient_fields((0.0, 0.0))
        assert a == pytest.approx(1.1, abs=1e-12)
        assert b == pytest.approx(2.8, abs=1e-12)
        assert c == pytest.approx(0.0, abs=1e-12)  # corner is sqrt(2)*pi from the center

    def test_grid_version_matches_pointwise(self):
        a, b, c = _field_grids(8)
        xs, ys = grid_coordinates(8)
        for i in (0, 3, 7):
            for j in (0, 4, 6):
                pa, pb, pc = coefficient_fields((xs[i], ys[j]))
                assert_allclose([a[i, j], b[i, j], c[i, j]], [pa, pb, pc], atol=1e-14)


class TestFourierInitialCondition:
    def test_zero_coefficients_give_zero_field(self):
        ic = FourierInitialCondition(np.zeros((SIZE, SIZE)), np.zeros((SIZE, SIZE)))
        assert np.all(ic.on_grid(12) == 0.0)
        assert ic.evaluate(np.array([1.0]), np.array([2.0]))[0] == 0.0

    def test_constant_mode(self):
        lam = np.zeros((SIZE, SIZE))
        lam[MAX_MODE, MAX_MODE] = 2.5  # k = l = 0
        ic = FourierInitialCondition(lam, np.zeros((SIZE, SIZE)))
        assert_allclose(ic.on_grid(8), np.full((8, 8), 2.5))

    def test_value_at_origin_is_cosine_coefficient_sum(self):
        rng = np.random.default_rng(5)
        ic = FourierInitialCondition.sample(rng)
        value = ic.evaluate(np.array([0.0]), np.array([0.0]))[0]
        assert value == pytest.approx(ic.lambda_kl.sum(), rel=1e-12)

    def test_periodic_in_both_axes(self):
        ic = FourierInitialCondition.sample(np.random.default_rng(6))
        x = np.linspace(0, 2 * np.pi, 7)
        y = np.linspace(0, 2 * np.pi, 7)
        base = ic.evaluate(x, y)
        assert_allclose(ic.evaluate(x + 2 * np.pi, y), base, atol=1e-9)
        assert_allclose(ic.evaluate(x, y - 2 * np.pi), base, atol=1e-9)

    def test_on_grid_matches_evaluate(self):
        ic = FourierInitialCondition.sample(np.random.default_rng(7))
        xs, ys = grid_coordinates(9)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        assert_allclose(ic.on_grid(9), ic.evaluate(X, Y), atol=1e-10)

    def test_wrong_shape_rejected(self):
        with pytest.raises(ValueError):
            FourierInitialCondition(np.zeros((3, 3)), np.zeros((3, 3)))

    def test_sample_spread_reads_variance_not_std(self):
        draws = FourierInitialCondition.sample(np.random.default_rng(8))
        pooled = np.concatenate([draws.lambda_kl.ravel(), draws.zeta_kl.ravel()])
        assert np.std(pooled) == pytest.approx(math.sqrt(COEFF_VARIANCE), rel=0.1)

    def test_sample_initial_condition_shape(self):
        field = sample_initial_condition(np.random.default_rng(9), grid_size=11)
        assert field.shape == (11, 11)


class TestConfigValidation:
    def test_split_must_sum_to_sequences(self):
        with pytest.raises(ConfigError, match="split"):
            small_config(split=(1, 1, 2))

    def test_split_counts_must_be_positive(self):
        with pytest.raises(ConfigError, match="positive"):
            small_config(split=(3, 0, 0))

    def test_t_end_must_be_multiple_of_dt_out(self):
        with pytest.raises(ConfigError, match="integer multiple"):
            small_config(t_end=0.055)

    def test_diffusion_stability_bound(self):
        # defaults: h ~ 0.126 so the bound is ~7.9e-3; one substep leaves dt at 0.01
        with pytest.raises(ConfigError, match="stability"):
            ConvDiffConfig(substeps_per_output=1)

    def test_too_many_sites_rejected(self):
        with pytest.raises(ConfigError, match="exceeds"):
            small_config(grid_size=3, n_sites=10)

    def test_round_trip_through_dict(self):
        config = small_config(seed=4)
        assert ConvDiffConfig.from_dict(config.to_dict()) == config

    def test_derived_quantities(self):
        config = small_config()
        assert config.n_outputs == 5
        assert config.sequence_length == 5
        assert config.dt_internal == pytest.approx(0.005)
        assert config.grid_spacing == pytest.approx(2 * np.pi / 16)


class TestRhs:
    def test_single_mode_discrete_identity(self):
        """For u = sin(x) the periodic stencil has a closed form.

        Central difference of sin is (sin(h)/h) cos; the second difference is
        ((2 cos(h) - 2)/h^2) sin.  Both identities are exact on the periodic
        grid, so the oracle holds to roundoff.
        """
        g = 16
        xs, ys = grid_coordinates(g)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        u = np.sin(X)
        h = 2 * np.pi / g
        a, b, c = _field_grids(g)
        expected = a * (np.sin(h) / h) * np.cos(X) + c * ((2 * np.cos(h) - 2) / h**2) * np.sin(X)
        assert_allclose(_rhs(u, h, a, b, c), expected, atol=1e-12)

    def test_constant_field_has_zero_rhs(self):
        g = 8
        a, b, c = _field_grids(g)
        assert np.all(_rhs(np.full((g, g), 3.7), 2 * np.pi / g, a, b, c) == 0.0)

    def test_batch_axis_broadcasts(self):
        g = 8
        a, b, c = _field_grids(g)
        rng = np.random.default_rng(10)
        batch = rng.normal(size=(3, g, g))
        h = 2 * np.pi / g
        stacked = _rhs(batch, h, a, b, c)
        for i in range(3):
            assert_allclose(stacked[i], _rhs(batch[i], h, a, b, c))


class TestSimulate:
    def test_zero_initial_stays_zero(self):
        config = small_config()
        snaps = simulate_convdiff(config, np.zeros((16, 16)))
        assert snaps.shape == (6, 16, 16)
        assert np.all(snaps == 0.0)

    def test_constant_initial_stays_constant(self):
        # no reaction term, so constants are exact equilibria of the stencil
        config = small_config()
        snaps = simulate_convdiff(config, np.full((16, 16), 1.5))
        assert np.all(snaps == 1.5)

    def test_self_convergence_in_substeps(self):
        config = small_config()
        u0 = sample_initial_condition(np.random.default_rng(11), grid_size=16)
        coarse = simulate_convdiff(small_config(substeps_per_output=2), u0)
        mid = simulate_convdiff(small_config(substeps_per_output=4), u0)
        fine = simulate_convdiff(small_config(substeps_per_output=8), u0)
        err_coarse = np.max(np.abs(coarse[-1] - fine[-1]))
        err_mid = np.max(np.abs(mid[-1] - fine[-1]))
        assert err_coarse < 1e-5
        assert err_mid < err_coarse / 4

    def test_batch_matches_single(self):
        config = small_config()
        rng = np.random.default_rng(12)
        fields = np.stack([sample_initial_condition(rng, 16) for _ in range(2)])
        batch = _simulate_batch(config, fields)
        for i in range(2):
            assert np.array_equal(batch[i], simulate_convdiff(config, fields[i]))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_overflowing_state_raises_divergence_error(self):
        config = small_config()
        u0 = np.zeros((16, 16))
        u0[::2, :] = 1e308
        u0[1::2, :] = -1e308
        with pytest.raises(DivergenceError) as excinfo:
            simulate_convdiff(config, u0)
        assert excinfo.value.at_time == pytest.approx(0.01)

    def test_non_2d_initial_rejected(self):
        with pytest.raises(ValueError):
            simulate_convdiff(small_config(), np.zeros(16))


class TestGenerateDataset:
    def test_shapes_and_split(self):
        config = small_config()
        ds = generate_dataset(config, tau=2)
        assert ds.sequences.shape == (3, 5, 10)
        assert ds.sites.n == 10
        assert ds.tau == 2 and ds.horizon == 3
        assert ds.seed == 0
        for name in ("train", "val", "test"):
            assert ds.split_values(name).shape == (1, 5, 10)
        joined = np.concatenate([ds.split_indices(n) for n in ds.SPLITS])
        assert np.array_equal(joined, np.arange(3))

    def test_sites_lie_on_the_grid(self):
        config = small_config()
        ds = generate_dataset(config, tau=2)
        steps = ds.sites.sites / config.grid_spacing
        assert_allclose(steps, np.round(steps), atol=1e-9)
        assert np.all(ds.sites.sites >= 0.0)
        assert np.all(ds.sites.sites < 2 * np.pi)

    def test_bitwise_deterministic(self):
        first = generate_dataset(small_config(seed=3), tau=2)
        second = generate_dataset(small_config(seed=3), tau=2)
        assert np.array_equal(first.sequences, second.sequences)
        assert np.array_equal(first.sites.sites, second.sites.sites)

    def test_seed_changes_output(self):
        first = generate_dataset(small_config(seed=3), tau=2)
        second = generate_dataset(small_config(seed=4), tau=2)
        assert not np.array_equal(first.sequences, second.sequences)

    def test_chunking_does_not_change_values(self):
        whole = generate_dataset(small_config(), tau=2, chunk_size=100)
        chunked = generate_dataset(small_config(), tau=2, chunk_size=1)
        assert np.array_equal(whole.sequences, chunked.sequences)


class TestSequenceDataset:
    def make_raw(self):
        rng = np.random.default_rng(13)
        sites = SiteSet(rng.uniform(0, 2 * np.pi, (6, 2)))
        seqs = rng.normal(1.0, 2.0, size=(4, 5, 6))
        return SequenceDataset(sites, seqs, (2, 1, 1), tau=2)

    def test_normalize_centers_training_split(self):
        norm = self.make_raw().normalize()
        train = norm.split_values("train")
        assert abs(train.mean()) < 1e-8
        assert abs(train.var() - 1.0) < 1e-6
        assert norm.normalized

    def test_statistics_come_from_train_split_only(self):
        raw = self.make_raw()
        assert raw.mean == pytest.approx(raw.split_values("train").mean())
        norm = raw.normalize()
        # val split keeps an offset unless it happens to share the train stats
        assert abs(norm.split_values("val").mean()) > 1e-3

    def test_round_trip(self):
        raw = self.make_raw()
        norm = raw.normalize()
        back = norm.denormalize_values(norm.sequences)
        assert_allclose(back, raw.sequences, atol=1e-12)

    def test_normalize_idempotent(self):
        norm = self.make_raw().normalize()
        assert norm.normalize() is norm

    def test_zero_variance_warns_and_divides_by_one(self):
        sites = SiteSet(np.arange(3, dtype=float)[:, None])
        seqs = np.full((3, 4, 3), 7.0)
        ds = SequenceDataset(sites, seqs, (1, 1, 1), tau=2)
        with pytest.warns(RuntimeWarning, match="zero variance"):
            norm = ds.normalize()
        assert np.all(norm.sequences == 0.0)

    def test_split_must_partition(self):
        sites = SiteSet(np.arange(3, dtype=float)[:, None])
        with pytest.raises(ValueError):
            SequenceDataset(sites, np.zeros((4, 5, 3)), (2, 1, 2), tau=2)

    def test_tau_bounds_checked(self):
        sites = SiteSet(np.arange(3, dtype=float)[:, None])
        with pytest.raises(ValueError):
            SequenceDataset(sites, np.zeros((3, 5, 3)), (1, 1, 1), tau=5)

    def test_non_finite_sequences_rejected(self):
        sites = SiteSet(np.arange(3, dtype=float)[:, None])
        seqs = np.zeros((3, 5, 3))
        seqs[1, 2, 0] = np.nan
        from umtn.errors import DataError

        with pytest.raises(DataError):
            SequenceDataset(sites, seqs, (1, 1, 1), tau=2)
