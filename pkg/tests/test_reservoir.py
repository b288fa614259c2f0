"""Reservoir construction, dynamics, hierarchy, and serialization tests."""

import json

import numpy as np
import pytest
import scipy.sparse as sp

from esnplace.reservoir import (
    HierarchySpec,
    ReservoirMatrices,
    ReservoirSpec,
    build_hierarchy,
    build_reservoir,
    concat_layer_states,
    load_reservoir,
    load_spec,
    run_hierarchy_sequence,
    run_sequence,
    save_reservoir,
    save_spec,
    spectral_radius,
    step,
    step_hierarchy,
    zeros_hierarchy_state,
    zeros_state,
)

from oracles import power_krylov_radius, scalar_leaky_step


def tiny_matrices(w_rows, w_in_rows, density=1.0, seed=0):
    """Hand-set matrices for oracle comparisons."""
    w = np.asarray(w_rows, dtype=float)
    return ReservoirMatrices(
        w=sp.csr_matrix(w),
        w_in=np.asarray(w_in_rows, dtype=float),
        density=density,
        seed=seed,
    )


class TestReservoirSpec:
    def test_validation(self):
        good = dict(size=10, input_dim=3)
        ReservoirSpec(**good)
        for bad in (
            dict(size=0),
            dict(input_dim=0),
            dict(leakage=-0.1),
            dict(leakage=1.1),
            dict(input_gain=0.0),
            dict(spectral_scale=0.0),
            dict(spectral_scale=1.5),
            dict(density=0.0),
            dict(density=1.5),
            dict(activation="relu6"),
        ):
            with pytest.raises(ValueError):
                ReservoirSpec(**{**good, **bad})

    def test_leakage_zero_allowed(self):
        # Degenerate frozen layers are constructible.
        spec = ReservoirSpec(size=4, input_dim=2, leakage=0.0)
        assert spec.leakage == 0.0

    def test_json_roundtrip(self, tmp_path):
        spec = ReservoirSpec(
            size=7, input_dim=3, leakage=0.5, input_gain=0.2,
            spectral_scale=0.9, density=0.4, seed=99,
        )
        path = tmp_path / "spec.json"
        save_spec(spec, path)
        assert load_spec(path) == spec
        assert json.loads(path.read_text())["size"] == 7


class TestSpectralRadius:
    def test_antidiagonal_normalization(self):
        # Symmetric 2x2 with entries 0.5 has eigenvalues +-0.5.
        w = np.array([[0.0, 0.5], [0.5, 0.0]])
        radius = spectral_radius(w)
        assert radius == pytest.approx(0.5, abs=1e-12)
        normalized = w / radius
        np.testing.assert_allclose(
            normalized, np.array([[0.0, 1.0], [1.0, 0.0]]), rtol=0, atol=1e-12
        )

    def test_matches_power_oracle_on_random(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            n = int(rng.integers(5, 120))
            w = sp.random(n, n, density=0.3, random_state=7, data_rvs=lambda k: rng.uniform(-1, 1, k))
            lib = spectral_radius(w)
            if lib < 1e-9:
                continue
            oracle = power_krylov_radius(w.tocsr(), seed=11)
            assert abs(lib - oracle) <= 1e-7 * max(lib, 1.0)

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            spectral_radius(np.zeros((2, 3)))


class TestBuildReservoir:
    def test_same_seed_identical(self):
        spec = ReservoirSpec(size=60, input_dim=9, density=0.3, seed=123)
        a = build_reservoir(spec)
        b = build_reservoir(spec)
        assert np.array_equal(a.w.toarray(), b.w.toarray())
        assert np.array_equal(a.w_in, b.w_in)

    def test_different_seed_differs(self):
        spec = ReservoirSpec(size=60, input_dim=9, density=0.3, seed=123)
        other = build_reservoir(ReservoirSpec(size=60, input_dim=9, density=0.3, seed=124))
        assert not np.array_equal(build_reservoir(spec).w_in, other.w_in)

    def test_sparsity_matches_binomial(self):
        spec = ReservoirSpec(size=1000, input_dim=2, density=0.1, seed=5)
        mats = build_reservoir(spec)
        total = 1000 * 1000
        sigma = np.sqrt(total * 0.1 * 0.9)
        assert abs(mats.w.nnz - total * 0.1) <= 3 * sigma

    def test_unit_radius_against_power_oracle(self):
        spec = ReservoirSpec(size=1000, input_dim=2, density=0.1, seed=5)
        mats = build_reservoir(spec)
        assert abs(power_krylov_radius(mats.w, seed=1) - 1.0) <= 1e-6

    def test_value_ranges(self):
        spec = ReservoirSpec(size=300, input_dim=40, density=0.5, seed=8)
        mats = build_reservoir(spec)
        raw_scale = spectral_radius(mats.w)
        assert raw_scale == pytest.approx(1.0, abs=1e-6)
        # Gaussian inputs: loose sanity bounds on moments.
        assert abs(mats.w_in.mean()) < 0.05
        assert abs(mats.w_in.std() - 1.0) < 0.05

    def test_matrices_immutable(self):
        mats = build_reservoir(ReservoirSpec(size=20, input_dim=3, seed=1))
        with pytest.raises(ValueError):
            mats.w_in[0, 0] = 5.0
        with pytest.raises(ValueError):
            mats.w.data[0] = 5.0

    def test_zero_radius_resample_and_failure(self):
        # With size 1 and minimal density, most draws leave W empty. Scan
        # seeds for one that recovers via resampling and one that cannot.
        spec = lambda s: ReservoirSpec(size=1, input_dim=1, density=0.01, seed=s)

        def nnz_at(seed):
            return np.random.default_rng(seed).binomial(1, 0.01)

        recovered = failed = None
        for seed in range(4000):
            draws = [nnz_at(seed + k) for k in range(9)]
            if draws[0] == 0 and any(draws[1:]):
                recovered = seed
            if not any(draws):
                failed = seed
            if recovered is not None and failed is not None:
                break
        assert recovered is not None and failed is not None
        mats = build_reservoir(spec(recovered))
        assert mats.w.nnz == 1
        with pytest.raises(RuntimeError, match="zero spectral radius"):
            build_reservoir(spec(failed))


class TestStep:
    def test_full_leak_zero_state_zero_input(self):
        spec = ReservoirSpec(size=12, input_dim=4, leakage=1.0, seed=2)
        mats = build_reservoir(spec)
        out = step(np.zeros(12), np.zeros(4), spec, mats)
        assert np.array_equal(out, np.zeros(12))

    def test_zero_leak_is_identity(self):
        spec = ReservoirSpec(size=12, input_dim=4, leakage=0.0, seed=2)
        mats = build_reservoir(spec)
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, 12)
        out = step(x, rng.standard_normal(4), spec, mats)
        assert np.array_equal(out, x)

    def test_matches_scalar_oracle(self):
        w = [[0.2, -0.7], [0.5, 0.1]]
        w_in = [[1.0, -0.5], [0.25, 0.75]]
        spec = ReservoirSpec(
            size=2, input_dim=2, leakage=0.5, input_gain=1.0,
            spectral_scale=0.5, density=1.0,
        )
        mats = tiny_matrices(w, w_in)
        x = [0.3, -0.8]
        s = [1.5, -0.25]
        expected = scalar_leaky_step(x, s, w, w_in, 0.5, 1.0, 0.5)
        got = step(np.array(x), np.array(s), spec, mats)
        np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)

    def test_purity(self):
        spec = ReservoirSpec(size=6, input_dim=3, seed=4)
        mats = build_reservoir(spec)
        x = np.random.default_rng(1).uniform(-1, 1, 6)
        s = np.random.default_rng(2).standard_normal(3)
        x_copy, s_copy = x.copy(), s.copy()
        step(x, s, spec, mats)
        assert np.array_equal(x, x_copy) and np.array_equal(s, s_copy)

    def test_dimension_mismatch(self):
        spec = ReservoirSpec(size=6, input_dim=3, seed=4)
        mats = build_reservoir(spec)
        with pytest.raises(ValueError):
            step(np.zeros(5), np.zeros(3), spec, mats)
        with pytest.raises(ValueError):
            step(np.zeros(6), np.zeros(4), spec, mats)


class TestRunSequence:
    def test_single_input_full_leak(self):
        spec = ReservoirSpec(size=10, input_dim=3, leakage=1.0, input_gain=0.7, seed=6)
        mats = build_reservoir(spec)
        s = np.random.default_rng(3).standard_normal(3)
        states = run_sequence(zeros_state(spec), s[None, :], spec, mats)
        expected = np.tanh(0.7 * (mats.w_in @ s))
        assert states.shape == (1, 10)
        np.testing.assert_allclose(states[0], expected, atol=1e-15)

    def test_zero_input_norm_decays(self):
        spec = ReservoirSpec(
            size=40, input_dim=2, leakage=0.5, spectral_scale=0.8, density=0.3, seed=9,
        )
        mats = build_reservoir(spec)
        x0 = np.random.default_rng(4).uniform(-1, 1, 40)
        states = run_sequence(x0, np.zeros((300, 2)), spec, mats)
        norms = np.linalg.norm(states, axis=1)
        assert norms[-1] < 1e-6
        transient = 30
        assert np.all(np.diff(norms[transient:]) <= 1e-12)

    def test_echo_state_convergence(self):
        spec = ReservoirSpec(
            size=80, input_dim=5, leakage=0.3, input_gain=1.0,
            spectral_scale=0.99, density=0.1, seed=12,
        )
        mats = build_reservoir(spec)
        rng = np.random.default_rng(5)
        signals = rng.standard_normal((1000, 5)) * 1.5
        a = run_sequence(rng.uniform(-1, 1, 80), signals, spec, mats)
        b = run_sequence(rng.uniform(-1, 1, 80), signals, spec, mats)
        assert np.linalg.norm(a[-1] - b[-1]) < 1e-6

    def test_states_bounded_in_unit_box(self):
        spec = ReservoirSpec(size=30, input_dim=4, leakage=0.6, input_gain=2.0, seed=3)
        mats = build_reservoir(spec)
        rng = np.random.default_rng(8)
        states = run_sequence(
            rng.uniform(-1, 1, 30), rng.standard_normal((200, 4)) * 3.0, spec, mats
        )
        assert np.all(states >= -1.0) and np.all(states <= 1.0)

    def test_trajectory_deterministic(self):
        spec = ReservoirSpec(size=25, input_dim=3, seed=77)
        mats = build_reservoir(spec)
        signals = np.random.default_rng(7).standard_normal((50, 3))
        a = run_sequence(zeros_state(spec), signals, spec, mats)
        b = run_sequence(zeros_state(spec), signals, spec, build_reservoir(spec))
        assert np.array_equal(a, b)

    def test_empty_sequence_rejected(self):
        spec = ReservoirSpec(size=5, input_dim=2, seed=1)
        mats = build_reservoir(spec)
        with pytest.raises(ValueError):
            run_sequence(zeros_state(spec), np.zeros((0, 2)), spec, mats)


def two_layer_spec(alpha1=0.7, alpha2=0.4, coupling=0.3, size=30, seed=40):
    layers = (
        ReservoirSpec(size=size, input_dim=6, leakage=alpha1, input_gain=0.8,
                      spectral_scale=0.9, density=0.2, seed=seed),
        ReservoirSpec(size=size, input_dim=size, leakage=alpha2,
                      spectral_scale=0.9, density=0.2, seed=seed + 1),
    )
    return HierarchySpec(layers=layers, coupling_scales=(coupling,))


class TestHierarchy:
    def test_validation(self):
        good = two_layer_spec()
        assert good.state_size == 60
        with pytest.raises(ValueError):
            HierarchySpec(layers=good.layers, coupling_scales=())
        with pytest.raises(ValueError):
            HierarchySpec(layers=good.layers, coupling_scales=(-0.5,))
        bad_chain = (
            good.layers[0],
            ReservoirSpec(size=30, input_dim=7, seed=1),
        )
        with pytest.raises(ValueError):
            HierarchySpec(layers=bad_chain, coupling_scales=(0.1,))

    def test_json_roundtrip(self):
        hspec = two_layer_spec()
        assert HierarchySpec.from_dict(hspec.to_dict()) == hspec

    def test_zero_coupling_decouples_second_layer(self):
        hspec = two_layer_spec(coupling=0.0)
        mats = build_hierarchy(hspec)
        rng = np.random.default_rng(2)
        signals = rng.standard_normal((150, 6))
        x2_init = rng.uniform(-1, 1, 30)
        trajs = run_hierarchy_sequence(
            [np.zeros(30), x2_init], signals, hspec, mats
        )
        # Layer 2 must match a standalone input-free run of itself.
        standalone = run_sequence(
            x2_init, np.zeros((150, 30)), hspec.layers[1], mats[1]
        )
        assert np.array_equal(trajs[1], standalone)
        assert np.linalg.norm(trajs[1][-1]) < 1e-2

    def test_frozen_second_layer(self):
        hspec = two_layer_spec(alpha1=1.0, alpha2=0.0)
        mats = build_hierarchy(hspec)
        rng = np.random.default_rng(3)
        x2_init = rng.uniform(-1, 1, 30)
        trajs = run_hierarchy_sequence(
            [np.zeros(30), x2_init], rng.standard_normal((40, 6)), hspec, mats
        )
        assert np.all(trajs[1] == x2_init)

    def test_matches_scalar_oracle(self):
        w1 = [[0.1, -0.4], [0.3, 0.2]]
        w2 = [[-0.2, 0.6], [0.1, -0.1]]
        w_in1 = [[0.5, -1.0], [0.25, 0.5]]
        c21 = [[0.7, -0.3], [0.2, 0.9]]
        layers = (
            ReservoirSpec(size=2, input_dim=2, leakage=0.6, input_gain=0.9,
                          spectral_scale=0.8, density=1.0),
            ReservoirSpec(size=2, input_dim=2, leakage=0.3,
                          spectral_scale=0.7, density=1.0),
        )
        hspec = HierarchySpec(layers=layers, coupling_scales=(0.4,))
        mats = (tiny_matrices(w1, w_in1), tiny_matrices(w2, c21))
        x1 = [0.2, -0.5]
        x2 = [-0.1, 0.4]
        s = [1.0, -2.0]
        new = step_hierarchy([np.array(x1), np.array(x2)], np.array(s), hspec, mats)
        exp1 = scalar_leaky_step(x1, s, w1, w_in1, 0.6, 0.9, 0.8)
        # Synchronous: layer 2 reads layer 1's pre-update state.
        exp2 = scalar_leaky_step(x2, x1, w2, c21, 0.3, 0.4, 0.7)
        np.testing.assert_allclose(new[0], exp1, atol=1e-12)
        np.testing.assert_allclose(new[1], exp2, atol=1e-12)

    def test_concatenated_representation(self):
        hspec = two_layer_spec()
        mats = build_hierarchy(hspec)
        signals = np.random.default_rng(4).standard_normal((20, 6))
        trajs = run_hierarchy_sequence(zeros_hierarchy_state(hspec), signals, hspec, mats)
        rep = concat_layer_states(trajs)
        assert rep.shape == (20, hspec.state_size)
        assert np.array_equal(rep[:, :30], trajs[0])

    def test_state_count_mismatch(self):
        hspec = two_layer_spec()
        mats = build_hierarchy(hspec)
        with pytest.raises(ValueError):
            step_hierarchy([np.zeros(30)], np.zeros(6), hspec, mats)


class TestSnapshots:
    def test_roundtrip_bitwise(self, tmp_path):
        spec = ReservoirSpec(size=50, input_dim=7, density=0.25, seed=31)
        mats = build_reservoir(spec)
        path = tmp_path / "reservoir.esnr"
        save_reservoir(path, mats)
        loaded = load_reservoir(path)
        assert np.array_equal(loaded.w.toarray(), mats.w.toarray())
        assert np.array_equal(loaded.w_in, mats.w_in)
        assert loaded.density == mats.density
        assert loaded.seed == mats.seed

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.esnr"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(ValueError, match="bad magic"):
            load_reservoir(path)

    def test_truncated_rejected(self, tmp_path):
        spec = ReservoirSpec(size=10, input_dim=2, seed=3)
        mats = build_reservoir(spec)
        path = tmp_path / "cut.esnr"
        save_reservoir(path, mats)
        path.write_bytes(path.read_bytes()[:40])
        with pytest.raises(ValueError):
            load_reservoir(path)
