import itertools
import math

import pytest

from stackdse import (
    CollectiveConfig,
    TopologySpec,
    axis_spans,
    collective_time_1d,
    multidim_collective_time,
    network_cost,
    ring_hop_penalty,
)
from stackdse.simulator import CostCoefficients

from des_oracle import simulate_collective, simulate_hierarchical

ORACLE_GRID = list(itertools.product(
    ("RI", "RHD", "DI"),
    ("all-reduce", "reduce-scatter", "all-gather"),
    (2, 4, 8, 16),
    (1e3, 1e6),            # 1 KB, 1 MB
    (0.0, 1e-6),           # 0, 1 us
    (1, 2, 4),
))


@pytest.mark.parametrize("algorithm,pattern,p,payload,latency,chunks", ORACLE_GRID)
def test_analytic_matches_des_oracle(algorithm, pattern, p, payload, latency, chunks):
    bw = 50e9
    analytic = collective_time_1d(pattern, algorithm, p, payload, bw, latency, chunks)
    reference = simulate_collective(pattern, algorithm, p, payload, bw, latency, chunks)
    assert analytic > 0
    assert analytic == pytest.approx(reference, rel=1e-9)


def test_ring_all_reduce_example():
    # p=4, payload 4 units, bw 1, latency 0 -> 2*(p-1)*(M/p)/bw = 6
    assert collective_time_1d("all-reduce", "RI", 4, 4.0, 1.0, 0.0) == pytest.approx(6.0)


def test_rhd_all_reduce_example():
    # p=4, payload 4, bw 1, latency 0 -> 2*M*(p-1)/(p*bw) = 6
    assert collective_time_1d("all-reduce", "RHD", 4, 4.0, 1.0, 0.0) == pytest.approx(6.0)


def test_single_rank_or_empty_payload_is_free():
    for pattern in ("all-reduce", "reduce-scatter", "all-gather", "all-to-all"):
        for algorithm in ("RI", "DI", "RHD", "DBT"):
            assert collective_time_1d(pattern, algorithm, 1, 1e6, 1e9, 1e-6) == 0.0
            assert collective_time_1d(pattern, algorithm, 8, 0.0, 1e9, 1e-6) == 0.0


def test_bandwidth_homogeneity():
    # doubling every link bandwidth at zero latency exactly halves the time
    for algorithm in ("RI", "DI", "RHD", "DBT"):
        for pattern in ("all-reduce", "reduce-scatter", "all-gather"):
            t1 = collective_time_1d(pattern, algorithm, 8, 3e6, 1e9, 0.0, 2)
            t2 = collective_time_1d(pattern, algorithm, 8, 3e6, 2e9, 0.0, 2)
            assert t1 == pytest.approx(2.0 * t2, rel=1e-12)


def test_allreduce_composes_from_phases():
    for algorithm in ("RI", "RHD"):
        for p in (2, 4, 8, 16):
            rs = collective_time_1d("reduce-scatter", algorithm, p, 1e6, 1e9, 1e-6, 2)
            ag = collective_time_1d("all-gather", algorithm, p, 1e6, 1e9, 1e-6, 2)
            ar = collective_time_1d("all-reduce", algorithm, p, 1e6, 1e9, 1e-6, 2)
            assert ar == pytest.approx(rs + ag, rel=1e-12)


def test_monotonic_in_bandwidth_and_payload():
    for algorithm in ("RI", "DI", "RHD", "DBT"):
        slow = collective_time_1d("all-reduce", algorithm, 8, 1e6, 1e9, 1e-6)
        fast = collective_time_1d("all-reduce", algorithm, 8, 1e6, 4e9, 1e-6)
        assert fast <= slow
        small = collective_time_1d("all-reduce", algorithm, 8, 1e5, 1e9, 1e-6)
        large = collective_time_1d("all-reduce", algorithm, 8, 1e6, 1e9, 1e-6)
        assert small <= large


def test_more_chunks_hurt_latency_bound_messages():
    # tiny payload, high latency: extra chunks pay extra latency terms
    few = collective_time_1d("all-reduce", "RI", 8, 1e3, 100e9, 5e-6, 1)
    many = collective_time_1d("all-reduce", "RI", 8, 1e3, 100e9, 5e-6, 16)
    assert many > few


def test_dbt_structure():
    # latency term scales with ceil(log2 p); bandwidth term is 2*M/B
    t4 = collective_time_1d("all-reduce", "DBT", 4, 0.0 + 8e6, 1e9, 0.0)
    assert t4 == pytest.approx(2 * 8e6 / 1e9)
    lat_only_8 = collective_time_1d("all-reduce", "DBT", 8, 1e-9, 1e18, 1e-3)
    lat_only_16 = collective_time_1d("all-reduce", "DBT", 16, 1e-9, 1e18, 1e-3)
    assert lat_only_8 == pytest.approx(2 * 3 * 1e-3, rel=1e-6)
    assert lat_only_16 == pytest.approx(2 * 4 * 1e-3, rel=1e-6)


def test_ring_hop_penalty_values():
    assert ring_hop_penalty(2) == 1.0
    assert ring_hop_penalty(4) == pytest.approx(4 / 3)
    assert ring_hop_penalty(8) == pytest.approx(16 / 7)


# ---------------------------------------------------------------------------
# Axis spans
# ---------------------------------------------------------------------------

def test_axis_spans_packing():
    dims = [4, 4, 4, 16]
    assert axis_spans(dims, stride=1, size=64) == ((0, 4), (1, 4), (2, 4))
    assert axis_spans(dims, stride=64, size=8) == ((3, 8),)
    assert axis_spans(dims, stride=1, size=8) == ((0, 4), (1, 2))
    assert axis_spans(dims, stride=512, size=2) == ((3, 2),)
    assert axis_spans(dims, stride=1, size=1) == ()


def test_axis_spans_misalignment_rejected():
    with pytest.raises(ValueError, match="align"):
        axis_spans([3, 5], stride=1, size=4)


# ---------------------------------------------------------------------------
# Multi-dimensional collectives
# ---------------------------------------------------------------------------

def _topo(blocks, npus, bws, latency=1e-6):
    return TopologySpec.build(blocks, npus, bws, latency=latency)


def test_single_dim_span_equals_1d():
    topo = _topo(["SW", "SW"], [4, 4], [100, 100], latency=1e-6)
    config = CollectiveConfig(algorithms=("RI", "RI"), chunks=2)
    total, per_dim = multidim_collective_time("all-reduce", 1e6, ((0, 4),), topo, config)
    direct = collective_time_1d("all-reduce", "RI", 4, 1e6, 100e9, 1e-6, 2)
    assert total == pytest.approx(direct, rel=1e-12)
    assert set(per_dim) == {0}


def test_two_dim_baseline_matches_two_level_oracle():
    topo = _topo(["SW", "SW"], [4, 4], [50, 50], latency=1e-6)
    config = CollectiveConfig(algorithms=("RI", "RI"), chunks=1)
    total, _ = multidim_collective_time("all-reduce", 8e6, ((0, 4), (1, 4)), topo, config)
    reference = simulate_hierarchical(
        "all-reduce", 8e6, [("RI", 4, 50e9, 1e-6), ("RI", 4, 50e9, 1e-6)]
    )
    assert total == pytest.approx(reference, rel=1e-9)


def test_two_dim_second_stage_payload_shrinks():
    # latency 0: second-dimension stages see payload/4
    topo = _topo(["SW", "SW"], [4, 4], [50, 50], latency=1e-12)
    config = CollectiveConfig(algorithms=("RI", "RI"), chunks=1)
    total, per_dim = multidim_collective_time("all-reduce", 8e6, ((0, 4), (1, 4)), topo, config)
    inner = collective_time_1d("all-reduce", "RI", 4, 8e6, 50e9, 1e-12, 1)
    outer = collective_time_1d("all-reduce", "RI", 4, 8e6 / 4, 50e9, 1e-12, 1)
    assert total == pytest.approx(inner + outer, rel=1e-9)
    assert per_dim[1] == pytest.approx(outer, rel=1e-9)


def test_blueconnect_not_slower_than_baseline():
    topo = _topo(["SW", "SW", "SW"], [4, 4, 4], [100, 100, 100], latency=1e-12)
    span = ((0, 4), (1, 4), (2, 4))
    for chunks in (1, 2, 4, 8):
        base = CollectiveConfig(algorithms=("RI", "RI", "RI"), chunks=chunks, multidim="Baseline")
        blue = CollectiveConfig(algorithms=("RI", "RI", "RI"), chunks=chunks, multidim="BlueConnect")
        t_base, _ = multidim_collective_time("all-reduce", 64e6, span, topo, base)
        t_blue, _ = multidim_collective_time("all-reduce", 64e6, span, topo, blue)
        assert t_blue <= t_base * (1 + 1e-12)
        if chunks > 1:
            assert t_blue < t_base


def test_ring_topology_penalises_nonadjacent_algorithms():
    ring = _topo(["RI"], [8], [100], latency=1e-6)
    switch = _topo(["SW"], [8], [100], latency=1e-6)
    for algorithm in ("DI", "RHD", "DBT"):
        config = CollectiveConfig(algorithms=(algorithm,), chunks=1)
        on_ring, _ = multidim_collective_time("all-reduce", 1e6, ((0, 8),), ring, config)
        on_switch, _ = multidim_collective_time("all-reduce", 1e6, ((0, 8),), switch, config)
        assert on_ring > on_switch
    # the ring algorithm itself is not penalised
    config = CollectiveConfig(algorithms=("RI",), chunks=1)
    on_ring, _ = multidim_collective_time("all-reduce", 1e6, ((0, 8),), ring, config)
    on_switch, _ = multidim_collective_time("all-reduce", 1e6, ((0, 8),), switch, config)
    assert on_ring == pytest.approx(on_switch, rel=1e-12)


# ---------------------------------------------------------------------------
# Network cost
# ---------------------------------------------------------------------------

def test_network_cost_examples():
    ring = _topo(["RI"], [4], [50])
    assert network_cost(ring) == pytest.approx(4 * 50 * 1.0)  # 200
    fc = _topo(["FC"], [4], [50])
    assert network_cost(fc) == pytest.approx(6 * 50 * 1.0)  # 300


def test_fc_costs_more_than_ring():
    for npus in (4, 8, 16):
        ring = network_cost(_topo(["RI"], [npus], [100]))
        fc = network_cost(_topo(["FC"], [npus], [100]))
        assert fc > ring


def test_switch_cost_includes_port_term():
    sw = _topo(["SW"], [8], [100])
    coeffs = CostCoefficients()
    expected = 8 * 100 * coeffs.switch + 8 * 100 * coeffs.switch_port
    assert network_cost(sw, coeffs) == pytest.approx(expected)
