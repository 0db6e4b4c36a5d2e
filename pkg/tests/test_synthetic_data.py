"""Tests for mixtures, latent sampling and named RNG streams."""

import csv
import json

import numpy as np
import pytest
from scipy import stats

from pdpm_lab.errors import ContractError
from pdpm_lab.seeding import derive_seed, make_rng, restore_rng, rng_state, standard_normal
from pdpm_lab.synthetic_data import (MixtureSpec, PriorSpec, dump_dataset, make_grid, make_ring,
                                     mixture_from_name, sample_components, sample_latent, sample_real)


def nearest_neighbor_distances(centers):
    d = np.linalg.norm(centers[:, None] - centers[None], axis=2)
    np.fill_diagonal(d, np.inf)
    return d.min(axis=1)


class TestRing:
    def test_unit_circle_angles(self):
        ring = make_ring(radius=1.0)
        np.testing.assert_allclose(ring.centers[0], [1.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(ring.centers[2], [0.0, 1.0], atol=1e-15)
        assert ring.n_modes == 8

    def test_symmetry(self):
        ring = make_ring(radius=2.5)
        nn = nearest_neighbor_distances(ring.centers)
        np.testing.assert_allclose(nn, nn[0], rtol=1e-12)
        np.testing.assert_allclose(ring.centers.mean(axis=0), [0.0, 0.0], atol=1e-12)

    def test_invalid_geometry(self):
        with pytest.raises(ContractError):
            make_ring(radius=0.0)


class TestGrid:
    def test_corners(self):
        grid = make_grid(halfwidth=4.0)
        corners = {tuple(c) for c in grid.centers if abs(c[0]) == 4.0 and abs(c[1]) == 4.0}
        assert corners == {(4.0, 4.0), (4.0, -4.0), (-4.0, 4.0), (-4.0, -4.0)}

    def test_distinct_with_even_spacing(self):
        grid = make_grid(halfwidth=4.0)
        assert len({tuple(c) for c in grid.centers}) == 25
        np.testing.assert_allclose(nearest_neighbor_distances(grid.centers), 2.0, rtol=1e-12)

    def test_named_overrides(self):
        assert mixture_from_name("grid25", halfwidth=2.0).centers.max() == 2.0
        assert mixture_from_name("ring8", std=0.2).std == 0.2
        with pytest.raises(ContractError):
            mixture_from_name("spiral")


class TestMixtureSampling:
    def test_vanishing_noise(self):
        spec = MixtureSpec(make_ring().centers, std=1e-9, name="ring8")
        x = sample_real(spec, 500, make_rng(0, "real_data")).data
        dist = np.linalg.norm(x[:, None] - spec.centers[None], axis=2).min(axis=1)
        assert dist.max() < 1e-6

    def test_component_balance(self):
        _, comps = sample_components(make_ring(), 100_000, make_rng(1, "real_data"))
        counts = np.bincount(comps, minlength=8)
        np.testing.assert_allclose(counts, 100_000 / 8, rtol=0.05)

    def test_same_seed_same_samples(self):
        a = sample_real(make_grid(), 64, make_rng(3, "real_data")).data
        b = sample_real(make_grid(), 64, make_rng(3, "real_data")).data
        assert np.array_equal(a, b)

    def test_invalid_spec(self):
        with pytest.raises(ContractError):
            MixtureSpec(np.zeros((2, 2)), std=0.0)
        with pytest.raises(ContractError):
            MixtureSpec(np.zeros((0, 2)), std=1.0)

    def test_spec_dict_round_trip(self):
        ring = make_ring()
        back = MixtureSpec.from_dict(json.loads(json.dumps(ring.to_dict())))
        assert np.array_equal(back.centers, ring.centers) and back.std == ring.std

    def test_dump_dataset(self, tmp_path):
        path = dump_dataset(make_grid(), 40, make_rng(0, "dataset_dump"), tmp_path / "grid.csv")
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["x", "y", "component_index"]
        assert len(rows) == 41
        assert all(0 <= int(r[2]) < 25 for r in rows[1:])


class TestLatents:
    def test_moments(self):
        z = standard_normal(make_rng(0, "latent"), (1_000_000,))
        assert abs(z.mean()) < 0.01
        assert z.var() == pytest.approx(1.0, rel=0.02)

    def test_kolmogorov_smirnov(self):
        z = standard_normal(make_rng(2, "latent"), 100_000)
        assert stats.kstest(z, "norm").statistic < 0.01

    def test_same_seed_same_batch(self):
        prior = PriorSpec(d=5)
        a = sample_latent(prior, 16, make_rng(9, "latent")).data
        b = sample_latent(prior, 16, make_rng(9, "latent")).data
        assert a.shape == (16, 5) and np.array_equal(a, b)

    def test_prior_dimension_checked(self):
        with pytest.raises(ContractError):
            PriorSpec(d=0)


class TestStreams:
    def test_streams_are_independent(self):
        a = make_rng(0, "latent").random(4)
        b = make_rng(0, "real_data").random(4)
        assert not np.array_equal(a, b)

    def test_drawing_one_stream_never_shifts_another(self):
        untouched = make_rng(5, "latent").random(3)
        make_rng(5, "real_data").random(1000)
        assert np.array_equal(make_rng(5, "latent").random(3), untouched)

    def test_state_round_trip(self):
        rng = make_rng(1, "probe")
        rng.random(10)
        state = json.loads(json.dumps(rng_state(rng)))
        expected = rng.random(5)
        assert np.array_equal(restore_rng(state).random(5), expected)

    def test_unknown_stream(self):
        with pytest.raises(KeyError):
            make_rng(0, "weather")

    def test_derived_seeds_differ(self):
        assert len({derive_seed(0, i) for i in range(10)}) == 10
