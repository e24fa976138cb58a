"""Trajectory engine: reproducibility, statuses, dumps, the A/A-hat identity."""

import math

import numpy as np
import pytest

import oracles
from bprelab import (
    EnvPath,
    FixedPath,
    IIDMixture,
    OffspringLaw,
    ParameterError,
    SimConfig,
    TrajectoryBatch,
    increment_identity_check,
    run,
    single_state,
)
from bprelab.simulate import STATUS_CAPPED, STATUS_COMPLETED, STATUS_EXTINCT

GW_PMF = {0: 0.25, 2: 0.75}
GW_ENV = single_state(OffspringLaw(GW_PMF))
M23 = IIDMixture([OffspringLaw({2: 1.0}), OffspringLaw({3: 1.0})], [0.5, 0.5])


def small_cfg(**overrides):
    base = dict(
        env=GW_ENV, mode="annealed", n_max=12, replicas=500, master_seed=17,
        rho_grid=(1.2,),
    )
    base.update(overrides)
    return SimConfig(**base)


class TestSimConfig:
    def test_mode_validation(self):
        with pytest.raises(ParameterError, match="mode"):
            small_cfg(mode="frozen")

    def test_numeric_validation(self):
        with pytest.raises(ParameterError):
            small_cfg(n_max=0)
        with pytest.raises(ParameterError):
            small_cfg(replicas=0)
        with pytest.raises(ParameterError, match="pop_cap"):
            small_cfg(pop_cap=10)
        with pytest.raises(ParameterError, match="rho"):
            small_cfg(rho_grid=(0.5,))

    def test_annealed_needs_mixture(self):
        with pytest.raises(ParameterError, match="mixture"):
            small_cfg(env=FixedPath([OffspringLaw(GW_PMF)] * 12))

    def test_quenched_mixture_needs_path_seed(self):
        with pytest.raises(ParameterError, match="path_seed"):
            small_cfg(mode="quenched")
        small_cfg(mode="quenched", path_seed=3)  # fine

    def test_pop_cap_overflow_guard(self):
        with pytest.raises(ParameterError, match="int64"):
            small_cfg(pop_cap=2**62)

    def test_replica_seeds_are_spawned_streams(self):
        cfg = small_cfg()
        assert cfg.replica_seed(4).spawn_key == (4,)
        assert cfg.replica_seed(4).entropy == 17


class TestDeterminism:
    def test_same_config_bitwise_identical(self):
        a = run(small_cfg())
        b = run(small_cfg())
        assert np.array_equal(a.w, b.w)
        assert np.array_equal(a.a_hat, b.a_hat)
        assert np.array_equal(a.status, b.status)

    def test_thread_count_does_not_change_results(self):
        a = run(small_cfg(), threads=1)
        b = run(small_cfg(), threads=4)
        assert np.array_equal(a.w, b.w)
        assert np.array_equal(a.a_hat, b.a_hat)
        assert np.array_equal(a.status, b.status)
        assert np.array_equal(a.status_gen, b.status_gen)

    def test_threads_validated(self):
        with pytest.raises(ParameterError):
            run(small_cfg(), threads=0)

    def test_quenched_path_is_shared_and_seeded(self):
        cfg = small_cfg(env=M23, mode="quenched", path_seed=11)
        batch = run(cfg)
        assert batch.path is not None
        assert batch.path.seed == 11
        assert len(batch.path) == cfg.n_max
        again = run(cfg)
        assert again.path.laws == batch.path.laws

    def test_fixed_path_prefix_used_verbatim(self):
        laws = tuple(OffspringLaw(q) for q in ([GW_PMF, {3: 1.0}] * 6))
        batch = run(small_cfg(env=FixedPath(laws), mode="quenched"))
        assert batch.path.laws == laws[:12]


class TestTrajectories:
    def test_w_starts_at_one_and_scales_by_mean_products(self, gw_batch):
        assert np.all(gw_batch.w[:, 0] == 1.0)
        # Z_1 is 0 or 2, so W_1 must be 0 or 2/1.5 exactly
        w1 = np.unique(gw_batch.w[:, 1])
        assert set(np.round(w1, 12)) <= {0.0, round(2 / 1.5, 12)}

    def test_extinct_rows_freeze_at_zero(self, gw_batch):
        extinct = np.where(gw_batch.status == STATUS_EXTINCT)[0]
        assert extinct.size > 0
        for i in extinct[:20]:
            g = gw_batch.status_gen[i]
            assert g >= 1
            assert np.all(gw_batch.w[i, g:] == 0.0)
            assert gw_batch.w[i, g - 1] > 0.0
        assert gw_batch.status_label(int(extinct[0])) == f"extinct_at({gw_batch.status_gen[extinct[0]]})"

    def test_completed_rows_have_no_status_generation(self, gw_batch):
        done = gw_batch.status == STATUS_COMPLETED
        assert np.all(gw_batch.status_gen[done] == -1)
        assert gw_batch.status_label(int(np.where(done)[0][0])) == "completed"

    def test_extinction_fraction_matches_fixed_point(self, gw_batch):
        # extinction probability solves s = 1/4 + (3/4) s^2, i.e. s = 1/3;
        # by n = 25 the finite-horizon gap is ~0.5^25
        truth = oracles.extinction_probability(GW_PMF)
        assert truth == pytest.approx(1 / 3, abs=1e-10)
        sigma = math.sqrt(truth * (1 - truth) / gw_batch.replicas)
        assert abs(gw_batch.extinct_fraction - truth) < 4 * sigma

    def test_capping_freezes_at_the_cap_generation(self):
        # deterministic quadrupling crosses pop_cap = 1000 at generation 5
        env = single_state(OffspringLaw({4: 1.0}))
        batch = run(small_cfg(env=env, pop_cap=1000, replicas=8))
        assert np.all(batch.status == STATUS_CAPPED)
        assert np.all(batch.status_gen == 5)
        assert batch.capped_fraction == 1.0
        for i in range(8):
            assert np.all(batch.w[i, 5:] == batch.w[i, 5])
        assert batch.status_label(0) == "capped_at(5)"
        assert np.array_equal(batch.uncapped, np.zeros(8, dtype=bool))

    def test_martingale_mean_stays_at_one(self, gw_batch):
        w = gw_batch.w[gw_batch.uncapped]
        for n in (5, 20):
            se = w[:, n].std(ddof=1) / math.sqrt(len(w))
            assert abs(w[:, n].mean() - 1.0) < 4 * se

    def test_a_hat_matches_direct_recomputation(self, gw_batch):
        j = gw_batch.rho_index(1.1)
        k = np.arange(gw_batch.n_max)
        direct = np.cumsum(1.1**k * np.diff(gw_batch.w, axis=1), axis=1)
        # the engine builds its power table with scalar pow, which can sit
        # 1 ulp away from the vectorized one; this is a definition check
        assert np.allclose(gw_batch.a_hat[:, j, :], direct, rtol=1e-12, atol=1e-12)

    def test_rho_index_mismatch(self, gw_batch):
        with pytest.raises(ParameterError, match="no accumulator"):
            gw_batch.rho_index(1.15)


class TestIdentity:
    def test_residual_at_machine_precision(self, gw_batch):
        for rho in gw_batch.rho_grid:
            for n in (1, 10, gw_batch.n_max - 2):
                assert increment_identity_check(gw_batch, rho, n) < 1e-12

    def test_with_explicit_proxy_index(self, gw_batch):
        assert increment_identity_check(gw_batch, 1.3, 3, w_proxy_index=10) < 1e-12

    def test_validation(self, gw_batch):
        with pytest.raises(ParameterError, match="rho"):
            increment_identity_check(gw_batch, 1.0, 2)
        with pytest.raises(ParameterError):
            increment_identity_check(gw_batch, 1.2, gw_batch.n_max - 1)
        with pytest.raises(ParameterError):
            increment_identity_check(gw_batch, 1.2, 2, w_proxy_index=gw_batch.n_max + 1)


class TestDumps:
    def test_csv_layout(self, tmp_path):
        batch = run(small_cfg(replicas=3))
        target = tmp_path / "batch.csv"
        batch.to_csv(target)
        lines = target.read_text().splitlines()
        assert lines[0] == "replica,n,W,status"
        assert len(lines) == 1 + 3 * (batch.n_max + 1)
        first = lines[1].split(",")
        assert first[0] == "0" and first[1] == "0" and float(first[2]) == 1.0

    def test_save_load_round_trip(self, tmp_path):
        cfg = small_cfg(env=M23, mode="quenched", path_seed=23, replicas=50)
        batch = run(cfg)
        target = tmp_path / "batch.npz"
        batch.save(target)
        loaded = TrajectoryBatch.load(target)
        assert np.array_equal(loaded.w, batch.w)
        assert np.array_equal(loaded.a_hat, batch.a_hat)
        assert np.array_equal(loaded.status, batch.status)
        assert loaded.mode == "quenched"
        assert loaded.rho_grid == batch.rho_grid
        assert loaded.path.seed == 23
        assert loaded.path.laws == batch.path.laws
        # the reloaded batch is usable downstream
        assert increment_identity_check(loaded, 1.2, 5) < 1e-12

    def test_load_rejects_unknown_format(self, tmp_path, monkeypatch):
        batch = run(small_cfg(replicas=5))
        target = tmp_path / "batch.npz"
        batch.save(target)
        monkeypatch.setattr("bprelab.simulate._DUMP_FORMAT", 99)
        with pytest.raises(ParameterError, match="format"):
            TrajectoryBatch.load(target)
