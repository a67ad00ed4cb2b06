import numpy as np
import pytest

from folheat.errors import ValidationError
from folheat.sampling import (
    FourierParams,
    build_sample_set,
    gen_constant,
    gen_fourier,
    gen_gaussian,
    load_sample_set,
    save_sample_set,
)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestFourier:
    def test_degenerate_amplitudes_give_mid_range(self, grid11):
        mesh, dofs = grid11
        fp = FourierParams(
            n_terms=3,
            amp_x_ranges=((0.0, 0.0),),
            amp_y_ranges=((0.0, 0.0),),
        )
        field = gen_fourier(fp, mesh, dofs, rng(1))
        assert np.all(field == 0.5)

    def test_single_constant_term(self, grid11):
        mesh, dofs = grid11
        fp = FourierParams(
            n_terms=1,
            offset_ranges=((1.0, 1.0),),
            amp_x_ranges=((0.0, 0.0),),
            amp_y_ranges=((0.0, 0.0),),
        )
        assert np.all(gen_fourier(fp, mesh, dofs, rng(2)) == 0.5)

    def test_deterministic_under_seed(self, grid11):
        mesh, dofs = grid11
        fp = FourierParams()
        a = gen_fourier(fp, mesh, dofs, rng(3))
        b = gen_fourier(fp, mesh, dofs, rng(3))
        assert np.array_equal(a, b)

    def test_range_and_nondegeneracy(self, grid11):
        mesh, dofs = grid11
        fp = FourierParams()
        for seed in range(100):
            field = gen_fourier(fp, mesh, dofs, rng(seed))
            assert field.min() >= 0.0 and field.max() <= 1.0
            assert field.max() - field.min() > 1e-9  # nonzero frequencies exist

    def test_bad_ranges_rejected(self):
        with pytest.raises(ValidationError):
            FourierParams(offset_ranges=((1.0, 0.5),))
        with pytest.raises(ValidationError):
            FourierParams(amp_x_ranges=())


class TestGaussian:
    def test_minmax_exact(self, grid11):
        mesh, dofs = grid11
        field = gen_gaussian(mesh, dofs, rng(4))
        assert field.min() == 0.0
        assert field.max() == 1.0

    def test_reproducible(self, grid11):
        mesh, dofs = grid11
        assert np.array_equal(gen_gaussian(mesh, dofs, rng(5)), gen_gaussian(mesh, dofs, rng(5)))

    def test_large_sample_mean_near_half(self):
        # normalized iid normals concentrate around 0.5 for many nodes
        from folheat.mesh import DirichletSpec, build_dof_map, build_structured_grid

        mesh = build_structured_grid(340, 300, 1.0, 1.0)  # ~1e5 nodes
        dofs = build_dof_map(mesh, DirichletSpec({}))
        field = gen_gaussian(mesh, dofs, rng(6))
        assert 0.45 <= field.mean() <= 0.55


class TestConstant:
    def test_flat(self, grid11):
        _, dofs = grid11
        field = gen_constant(dofs, rng(7))
        assert field.max() - field.min() == 0.0
        assert field.shape == (dofs.n_free,)

    def test_deterministic(self, grid11):
        _, dofs = grid11
        assert np.array_equal(gen_constant(dofs, rng(8)), gen_constant(dofs, rng(8)))

    def test_levels_spread_over_unit_interval(self, grid11):
        _, dofs = grid11
        levels = [gen_constant(dofs, rng(seed))[0] for seed in range(300)]
        assert 0.4 <= float(np.mean(levels)) <= 0.6


class TestSampleSet:
    def test_paper_scale_shape(self, grid11):
        mesh, dofs = grid11
        ss = build_sample_set((12, 15, 3), FourierParams(n_terms=5), mesh, dofs, seed=1)
        assert ss.samples.shape == (30, 99)
        assert ss.provenance == {"fourier": 12, "gaussian": 15, "constant": 3}
        assert sum(ss.provenance.values()) == ss.n_samples
        assert ss.samples.min() >= 0.0 and ss.samples.max() <= 1.0

    def test_single_constant(self, grid11):
        mesh, dofs = grid11
        ss = build_sample_set((0, 0, 1), FourierParams(), mesh, dofs, seed=2)
        assert ss.n_samples == 1
        assert ss.samples.max() - ss.samples.min() == 0.0

    def test_bitwise_deterministic(self, grid11):
        mesh, dofs = grid11
        fp = FourierParams(n_terms=4)
        a = build_sample_set((5, 5, 2), fp, mesh, dofs, seed=3)
        b = build_sample_set((5, 5, 2), fp, mesh, dofs, seed=3)
        assert np.array_equal(a.samples, b.samples)

    def test_carries_grid_fingerprint(self, grid11):
        mesh, dofs = grid11
        ss = build_sample_set((1, 1, 1), FourierParams(n_terms=2), mesh, dofs, seed=4)
        assert ss.fingerprint == dofs.fingerprint

    def test_negative_counts_rejected(self, grid11):
        mesh, dofs = grid11
        with pytest.raises(ValidationError):
            build_sample_set((-1, 0, 0), FourierParams(), mesh, dofs, seed=0)

    def test_save_load_round_trip(self, tmp_path, grid11):
        mesh, dofs = grid11
        fp = FourierParams(n_terms=3)
        ss = build_sample_set((3, 2, 1), fp, mesh, dofs, seed=5)
        save_sample_set(tmp_path / "s", ss, fp)
        back = load_sample_set(tmp_path / "s")
        assert np.array_equal(back.samples, ss.samples)
        assert back.provenance == ss.provenance
        assert back.seed == ss.seed
        assert back.fingerprint == ss.fingerprint
