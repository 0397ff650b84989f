import numpy as np
import pytest

from edgeshare.errors import ConfigError
from edgeshare.library import Model, ModelLibrary, ParameterBlock
from edgeshare.objective import (
    EvalContext,
    Placement,
    Workload,
    cache_hits,
    hit_ratio,
    hit_units,
    independent_storage_usage,
    marginal_gain,
    per_server_hit_ratio,
    per_server_hit_units,
    round_hits,
    storage_usage,
    unserved_indicator,
)

from conftest import random_instance, single_server_full_coverage


def make_lib(block_sizes, model_blocks):
    blocks = [ParameterBlock(b, s) for b, s in block_sizes.items()]
    models = [Model(m, tuple(bs)) for m, bs in model_blocks.items()]
    return ModelLibrary(blocks, models)


def flat_workload(p_rows, treq=100.0, tinf=0.001):
    p = np.array(p_rows, dtype=np.int64)
    return Workload(p_units=p,
                    latency_req=np.full(p.shape, treq),
                    inference_latency=np.full(p.shape, tinf))


class TestStorageUsage:
    lib = make_lib({"b1": 100, "b2": 50, "b3": 30},
                   {"A": ["b1", "b2"], "B": ["b1", "b3"]})

    def test_empty_row_uses_nothing(self):
        placement = Placement.empty(1, 2)
        assert storage_usage(self.lib, placement, 0) == 0

    def test_shared_block_counted_once(self):
        placement = Placement(np.array([[True, True]]))
        assert storage_usage(self.lib, placement, 0) == 180
        assert independent_storage_usage(self.lib, placement, 0) == 280

    def test_single_model_costs_its_size(self):
        placement = Placement(np.array([[True, False]]))
        assert storage_usage(self.lib, placement, 0) == self.lib.model_size("A")

    def test_usage_matches_the_per_block_indicator_sum(self):
        # Independent route: a block is billed once iff any cached model
        # contains it, i.e. 1 - prod(1 - x) over its containing models.
        rng = np.random.default_rng(13)
        for seed in range(10):
            lib, topo, _ = random_instance(seed)
            num_i = len(lib.model_ids)
            row = rng.random(num_i) < 0.5
            placement = Placement(row.reshape(1, -1))
            cached_ids = {lib.model_ids[i] for i in np.nonzero(row)[0]}
            expected = 0
            for bid, blk in lib.blocks.items():
                owners = lib.models_by_block.get(bid, ())
                product = 1
                for mid in owners:
                    product *= 0 if mid in cached_ids else 1
                expected += blk.size_bytes * (1 - product)
            assert storage_usage(lib, placement, 0) == expected

    def test_shared_accounting_never_exceeds_independent(self):
        rng = np.random.default_rng(7)
        for seed in range(20):
            lib, topo, workload = random_instance(seed)
            num_m, num_i = len(topo.servers), len(lib.model_ids)
            placement = Placement(rng.random((num_m, num_i)) < 0.5)
            for m in range(num_m):
                shared = storage_usage(lib, placement, m)
                indep = independent_storage_usage(lib, placement, m)
                assert shared <= indep


class TestHitRatio:
    def setup_method(self):
        self.lib = make_lib({"x": 10, "y": 20}, {"m0": ["x"], "m1": ["y"]})
        self.topo = single_server_full_coverage(1, capacity=100)
        self.workload = flat_workload([[600_000, 400_000]])

    def test_empty_placement_scores_zero(self):
        assert hit_ratio(self.lib, self.topo, self.workload, Placement.empty(1, 2)) == 0.0

    def test_everything_cached_within_latency_scores_one(self):
        placement = Placement(np.ones((1, 2), dtype=bool))
        assert hit_ratio(self.lib, self.topo, self.workload, placement) == 1.0

    def test_partial_cache_scores_the_cached_mass(self):
        placement = Placement(np.array([[True, False]]))
        assert hit_ratio(self.lib, self.topo, self.workload, placement) == pytest.approx(0.6)

    def test_all_zero_requests_rejected(self):
        wl = flat_workload([[0, 0]])
        with pytest.raises(ConfigError):
            hit_ratio(self.lib, self.topo, wl, Placement.empty(1, 2))

    def test_infeasible_placements_are_still_evaluable(self):
        # Evaluation is diagnostic; feasibility is a separate predicate.
        from edgeshare.objective import placement_feasible

        tiny = single_server_full_coverage(1, capacity=1)
        placement = Placement(np.ones((1, 2), dtype=bool))
        assert not placement_feasible(self.lib, tiny, placement)
        assert hit_ratio(self.lib, tiny, self.workload, placement) == 1.0

    def test_consistent_permutation_leaves_ratio_unchanged(self):
        rng = np.random.default_rng(3)
        for seed in range(5):
            lib, topo, workload = random_instance(seed, m_choices=(2,))
            num_m, num_i = len(topo.servers), len(lib.model_ids)
            placement = Placement(rng.random((num_m, num_i)) < 0.4)
            base = hit_ratio(lib, topo, workload, placement)

            perm_m = rng.permutation(num_m)
            perm_i = rng.permutation(num_i)
            lib2 = ModelLibrary(
                lib.blocks.values(),
                [lib.models[lib.model_ids[i]] for i in perm_i],
            )
            topo2 = type(topo)(
                servers=tuple(topo.servers[m] for m in perm_m),
                users=topo.users, channel=topo.channel,
                width_m=topo.width_m, height_m=topo.height_m)
            wl2 = Workload(
                p_units=workload.p_units[:, perm_i],
                latency_req=workload.latency_req[:, perm_i],
                inference_latency=workload.inference_latency[:, perm_i])
            placement2 = Placement(placement.matrix[np.ix_(perm_m, perm_i)])
            assert hit_ratio(lib2, topo2, wl2, placement2) == pytest.approx(base)


class TestSequentialAccounting:
    def setup_method(self):
        self.lib = make_lib({"x": 10}, {"m0": ["x"]})

    def two_server_topology(self, treq=100.0):
        # Both servers cover the single user.
        from edgeshare.network import ChannelParams, EdgeServer, Topology, UserNode
        servers = tuple(
            EdgeServer(id=f"s{m}", x=50.0 + m, y=50.0, capacity_bytes=100,
                       coverage_radius_m=200.0, total_bandwidth_hz=1e9,
                       total_power_watts=1.0)
            for m in range(2)
        )
        users = (UserNode(id="u0", x=50.0, y=60.0),)
        return Topology(servers=servers, users=users, channel=ChannelParams(),
                        width_m=200.0, height_m=200.0)

    def test_first_server_is_always_unserved(self):
        topo = self.two_server_topology()
        wl = flat_workload([[500_000]])
        prior = Placement.empty(2, 1)
        assert unserved_indicator(self.lib, topo, wl, prior, 0, 0, 0) == 1

    def test_earlier_hit_clears_the_indicator(self):
        topo = self.two_server_topology()
        wl = flat_workload([[500_000]])
        prior = Placement(np.array([[True], [False]]))
        assert unserved_indicator(self.lib, topo, wl, prior, 1, 0, 0) == 0

    def test_earlier_latency_violation_keeps_the_indicator(self):
        topo = self.two_server_topology()
        wl = flat_workload([[500_000]], treq=0.5, tinf=0.9)  # always too slow
        prior = Placement(np.array([[True], [False]]))
        assert unserved_indicator(self.lib, topo, wl, prior, 1, 0, 0) == 1

    def test_empty_row_contributes_nothing(self):
        topo = self.two_server_topology()
        wl = flat_workload([[500_000]])
        prior = Placement.empty(2, 1)
        assert per_server_hit_ratio(self.lib, topo, wl, prior, 0,
                                    np.array([False])) == 0.0

    def test_single_request_share(self):
        topo = self.two_server_topology()
        wl = flat_workload([[500_000]])
        prior = Placement.empty(2, 1)
        assert per_server_hit_ratio(self.lib, topo, wl, prior, 0,
                                    np.array([True])) == pytest.approx(1.0)

    def test_sum_of_server_shares_equals_global_ratio_exactly(self):
        # Random sequential placements on random instances; integer equality.
        rng = np.random.default_rng(11)
        for seed in range(8):
            lib, topo, workload = random_instance(seed, m_choices=(2, 3), max_mi=18)
            num_m, num_i = len(topo.servers), len(lib.model_ids)
            matrix = rng.random((num_m, num_i)) < 0.4
            placement = Placement(matrix)
            total = 0
            for m in range(num_m):
                total += per_server_hit_units(lib, topo, workload, placement, m,
                                              matrix[m])
            assert total == hit_units(lib, topo, workload, placement)


class TestCacheHits:
    def test_no_covered_users_no_hits(self):
        from edgeshare.network import ChannelParams, EdgeServer, Topology, UserNode
        server = EdgeServer(id="s", x=0.0, y=0.0, capacity_bytes=10,
                            coverage_radius_m=5.0, total_bandwidth_hz=1e9,
                            total_power_watts=1.0)
        topo = Topology(servers=(server,), users=(UserNode(id="u", x=90.0, y=0.0),),
                        channel=ChannelParams(), width_m=100.0, height_m=100.0)
        lib = make_lib({"x": 1}, {"m0": ["x"]})
        wl = flat_workload([[500_000]])
        assert cache_hits(lib, topo, wl, Placement.empty(1, 1), 0, 0) == 0

    def test_two_requesters_sum_in_micro_units(self):
        lib = make_lib({"x": 1, "y": 1}, {"m0": ["x"], "m1": ["y"]})
        topo = single_server_full_coverage(2, capacity=10)
        wl = flat_workload([[120_000, 0], [140_000, 0]])
        assert cache_hits(lib, topo, wl, Placement.empty(1, 2), 0, 0) == 260_000

    def test_fully_served_by_earlier_server_scores_zero(self):
        from edgeshare.network import ChannelParams, EdgeServer, Topology, UserNode
        servers = tuple(
            EdgeServer(id=f"s{m}", x=50.0, y=50.0 + m, capacity_bytes=10,
                       coverage_radius_m=100.0, total_bandwidth_hz=1e9,
                       total_power_watts=1.0)
            for m in range(2)
        )
        topo = Topology(servers=servers, users=(UserNode(id="u", x=50.0, y=55.0),),
                        channel=ChannelParams(), width_m=100.0, height_m=100.0)
        lib = make_lib({"x": 1}, {"m0": ["x"]})
        wl = flat_workload([[500_000]])
        prior = Placement(np.array([[True], [False]]))
        assert cache_hits(lib, topo, wl, prior, 1, 0) == 0


class TestRoundHits:
    def test_zero_epsilon_is_identity(self):
        u = np.array([370_000, 100_000, 0], dtype=np.int64)
        acc = round_hits(u, 0.0)
        assert (acc.rounded == u).all()
        assert acc.granularity == np.gcd(370_000, 100_000)

    def test_documented_rounding_example(self):
        # u = 0.37, u_min = 0.1, eps = 0.1 -> floor(0.37 / 0.01) = 37
        u = np.array([370_000, 100_000], dtype=np.int64)
        acc = round_hits(u, 0.1)
        assert acc.rounded[0] == 37

    def test_minimum_value_rounds_to_one_at_full_epsilon(self):
        u = np.array([250_000, 700_000], dtype=np.int64)
        acc = round_hits(u, 1.0)
        assert acc.rounded[0] == 1

    def test_zeros_are_ignored_for_the_minimum(self):
        u = np.array([0, 200_000, 300_000], dtype=np.int64)
        acc = round_hits(u, 0.5)
        assert acc.rounded[0] == 0
        assert acc.rounded[1] == 2  # floor(200000 / (0.5 * 200000))

    def test_out_of_range_epsilon_rejected(self):
        with pytest.raises(ConfigError):
            round_hits(np.array([1], dtype=np.int64), 1.5)


class TestMarginalGain:
    def setup_method(self):
        self.lib = make_lib({"x": 10, "y": 20}, {"m0": ["x"], "m1": ["y"]})
        self.topo = single_server_full_coverage(1, capacity=100)
        self.workload = flat_workload([[600_000, 400_000]])

    def test_already_placed_bit_gains_nothing(self):
        placement = Placement(np.array([[True, False]]))
        assert marginal_gain(self.lib, self.topo, self.workload, placement, 0, 0) == 0.0

    def test_unreachable_model_gains_nothing(self):
        wl = flat_workload([[600_000, 400_000]], treq=0.1, tinf=0.5)
        placement = Placement.empty(1, 2)
        assert marginal_gain(self.lib, self.topo, wl, placement, 0, 1) == 0.0

    def test_gain_is_never_negative(self):
        rng = np.random.default_rng(5)
        for seed in range(6):
            lib, topo, workload = random_instance(seed, max_mi=12)
            num_m, num_i = len(topo.servers), len(lib.model_ids)
            placement = Placement(rng.random((num_m, num_i)) < 0.3)
            for m in range(num_m):
                for i in range(num_i):
                    assert marginal_gain(lib, topo, workload, placement, m, i) >= 0.0


class TestSubmodularityAndMonotonicity:
    def test_diminishing_returns_and_monotonicity_on_small_instances(self):
        rng = np.random.default_rng(17)
        for seed in range(6):
            lib, topo, workload = random_instance(seed, max_mi=12)
            ctx = EvalContext(lib, topo, workload)
            num_m, num_i = len(topo.servers), len(lib.model_ids)
            for _ in range(30):
                small = rng.random((num_m, num_i)) < 0.3
                grow = rng.random((num_m, num_i)) < 0.3
                large = small | grow
                free = np.argwhere(~large)
                if free.size == 0:
                    continue
                m, i = free[rng.integers(len(free))]
                served_s = ctx.served_matrix(Placement(small))
                served_l = ctx.served_matrix(Placement(large))
                gain_small = ctx.marginal_units(served_s, m, i)
                gain_large = ctx.marginal_units(served_l, m, i)
                assert gain_small >= gain_large
                assert ctx.hit_units(Placement(small)) <= ctx.hit_units(Placement(large))

    def test_storage_usage_has_diminishing_returns(self):
        rng = np.random.default_rng(19)
        for seed in range(6):
            lib, topo, workload = random_instance(seed, max_mi=12)
            ctx = EvalContext(lib, topo, workload)
            num_i = len(lib.model_ids)
            for _ in range(30):
                small = rng.random(num_i) < 0.3
                large = small | (rng.random(num_i) < 0.3)
                free = np.nonzero(~large)[0]
                if free.size == 0:
                    continue
                i = int(free[rng.integers(len(free))])
                add_s = ctx.usage_bytes(_with(small, i)) - ctx.usage_bytes(small)
                add_l = ctx.usage_bytes(_with(large, i)) - ctx.usage_bytes(large)
                assert add_s >= add_l


def _with(row, i):
    out = row.copy()
    out[i] = True
    return out
