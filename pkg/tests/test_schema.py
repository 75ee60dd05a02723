import itertools
import json
import math
import random

import pytest

from stackdse import (
    TOO_LARGE,
    Constraint,
    DesignPoint,
    Knob,
    SamplingError,
    Schema,
    SchemaError,
    check_constraints,
    constrained_cardinality,
    decode_action,
    encode_point,
    iter_valid_actions,
    load_schema,
    parse_schema,
    raw_cardinality,
    sample_uniform,
)

POW2_1024 = [2 ** i for i in range(11)]


def knob(name, values, stack="workload", kind="scalar-grid", dims=1):
    vals = tuple(tuple(values) for _ in range(dims))
    return Knob(name=name, stack=stack, kind=kind, values=vals)


def parallel_schema(npu_count=1024, values=POW2_1024):
    return Schema(
        npu_count=npu_count,
        knobs=(
            knob("dp", values),
            knob("pp", values),
            knob("sp", values),
        ),
        constraints=(Constraint("product-le", ("dp", "sp", "pp"), "npu_count"),),
    )


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def test_parse_table4_fixture():
    schema = load_schema("table4")
    assert schema.npu_count == 1024
    assert len(schema.knobs) == 11
    assert len(schema.constraints) == 2
    # ordering preserved from the document
    assert [k.name for k in schema.knobs[:4]] == ["dp", "pp", "sp", "weight_sharded"]
    assert schema.knob("dp").values[0] == tuple(2 ** i for i in range(12))
    assert schema.knob("pp").values[0] == (1, 2, 4)
    assert schema.knob("chunks_per_collective").values[0] == (2, 4, 8, 16)
    assert schema.knob("collective_algorithm").dims == 4
    assert schema.knob("bandwidth_per_dim").values[0] == tuple(50 * i for i in range(1, 11))


def test_parse_single_knob_document():
    schema = parse_schema(json.dumps({
        "npu_count": 4,
        "knobs": [{"name": "scheduling_policy", "stack": "collective",
                   "kind": "scalar-categorical", "values": ["LIFO", "FIFO"]}],
    }))
    assert len(schema.knobs) == 1
    assert schema.constraints == ()
    assert raw_cardinality(schema) == 2


def test_parse_reports_syntax_position():
    with pytest.raises(SchemaError, match=r"line \d+ column \d+"):
        parse_schema('{"npu_count": 4,,}')


def test_constraint_missing_knob():
    doc = {
        "npu_count": 4,
        "knobs": [{"name": "dp", "stack": "workload", "kind": "scalar-grid", "values": [1, 2]}],
        "constraints": [{"kind": "product-le", "operands": ["DPX"], "bound": "npu_count"}],
    }
    with pytest.raises(SchemaError, match="missing knob"):
        parse_schema(json.dumps(doc))


def test_parse_error_cases():
    base = {"npu_count": 4, "knobs": [
        {"name": "a", "stack": "workload", "kind": "scalar-grid", "values": [1, 2]}]}
    bad_stack = json.loads(json.dumps(base))
    bad_stack["knobs"][0]["stack"] = "compute"
    with pytest.raises(SchemaError, match="stack"):
        parse_schema(json.dumps(bad_stack))
    empty = json.loads(json.dumps(base))
    empty["knobs"][0]["values"] = []
    with pytest.raises(SchemaError, match="empty value list"):
        parse_schema(json.dumps(empty))
    dup = json.loads(json.dumps(base))
    dup["knobs"].append(dict(dup["knobs"][0]))
    with pytest.raises(SchemaError, match="unique"):
        parse_schema(json.dumps(dup))
    with pytest.raises(SchemaError, match="power of two"):
        parse_schema(json.dumps({"npu_count": 3, "knobs": []}))


# ---------------------------------------------------------------------------
# Cardinality
# ---------------------------------------------------------------------------

def brute_force_triples(npu_count, values=POW2_1024):
    vals = [v for v in values if v <= npu_count]
    return sum(
        1
        for a, b, c in itertools.product(vals, repeat=3)
        if a * b * c <= npu_count
    )


def test_triple_count_286():
    assert brute_force_triples(1024) == 286
    schema = parallel_schema()
    assert raw_cardinality(schema) == 286
    assert constrained_cardinality(schema) == 286


@pytest.mark.parametrize("n", range(13))
def test_triple_count_binomial_property(n):
    npus = 2 ** n
    values = [2 ** i for i in range(n + 1)]
    expected = math.comb(n + 3, 3)
    assert brute_force_triples(npus, values) == expected
    assert raw_cardinality(parallel_schema(npus, values)) == expected


def test_raw_cardinality_table1_exact():
    schema = load_schema("table1")
    expected = 286 * 2 * 2 * 256 * 32 * 2 * 81 * 81 * 625
    value = raw_cardinality(schema)
    assert value == expected
    assert f"{value:.2e}" == "7.69e+13"


def test_raw_cardinality_minimal():
    schema = Schema(npu_count=2, knobs=(knob("x", [0, 1]),))
    assert raw_cardinality(schema) == 2


def test_constrained_npus_per_dim():
    # brute-force oracle: enumerate all 81 assignments, keep product == 1024
    values = (4, 8, 16)
    expected = sum(
        1 for combo in itertools.product(values, repeat=4) if math.prod(combo) == 1024
    )
    assert expected == 10
    schema = Schema(
        npu_count=1024,
        knobs=(knob("npus_per_dim", values, stack="network", kind="multidim-grid", dims=4),),
        constraints=(Constraint("product-eq", ("npus_per_dim",), "npu_count"),),
    )
    assert constrained_cardinality(schema) == 10


def test_constrained_equals_raw_without_constraints():
    schema = Schema(npu_count=8, knobs=(knob("a", [1, 2, 4]), knob("b", ["x", "y"], kind="scalar-categorical")))
    assert constrained_cardinality(schema) == raw_cardinality(schema) == 6


def test_table1_constrained_too_large():
    schema = load_schema("table1")
    assert constrained_cardinality(schema, cap=10 ** 6) is TOO_LARGE


def test_adding_constraints_never_increases_count():
    rng = random.Random(7)
    for _ in range(20):
        npus = 2 ** rng.randrange(2, 7)
        values = [2 ** i for i in range(rng.randrange(2, 6))]
        free = Schema(npu_count=npus, knobs=(knob("dp", values), knob("sp", values)))
        tighter = Schema(
            npu_count=npus,
            knobs=free.knobs,
            constraints=(Constraint("product-le", ("dp", "sp"), "npu_count"),),
        )
        tightest = Schema(
            npu_count=npus,
            knobs=free.knobs,
            constraints=tighter.constraints
            + (Constraint("product-eq", ("dp", "sp"), "npu_count"),),
        )
        a = constrained_cardinality(free)
        b = constrained_cardinality(tighter)
        c = constrained_cardinality(tightest)
        assert a >= b >= c


def test_constrained_counts_match_enumeration():
    schema = load_schema("table4")
    # shrink to an enumerable subspace, then compare DP counting vs backtracking
    small = Schema(
        npu_count=64,
        knobs=tuple(
            Knob(k.name, k.stack, k.kind, tuple(v[:2] for v in k.values))
            for k in schema.knobs
        ),
        constraints=schema.constraints,
    )
    count = constrained_cardinality(small)
    assert count == sum(1 for _ in iter_valid_actions(small))


# ---------------------------------------------------------------------------
# Constraint checking
# ---------------------------------------------------------------------------

def network_schema():
    return Schema(
        npu_count=1024,
        knobs=(
            knob("dp", POW2_1024),
            knob("pp", POW2_1024),
            knob("sp", POW2_1024),
            knob("npus_per_dim", (4, 8, 16), stack="network", kind="multidim-grid", dims=4),
        ),
        constraints=(
            Constraint("product-le", ("dp", "sp", "pp"), "npu_count"),
            Constraint("product-eq", ("npus_per_dim",), "npu_count"),
        ),
    )


def test_check_constraints_examples():
    schema = network_schema()
    good = DesignPoint({"dp": 64, "pp": 1, "sp": 4, "npus_per_dim": (4, 8, 4, 8)})
    report = check_constraints(schema, good)
    assert report.valid and report.violations == ()

    bad = DesignPoint({"dp": 1024, "pp": 1, "sp": 4, "npus_per_dim": (4, 8, 4, 8)})
    report = check_constraints(schema, bad)
    assert not report.valid
    assert any("dp" in v for v in report.violations)


def test_check_constraints_structural_mismatch():
    schema = network_schema()
    with pytest.raises(SchemaError, match="structural mismatch"):
        check_constraints(schema, DesignPoint({"dp": 1}))
    with pytest.raises(SchemaError, match="components"):
        check_constraints(
            schema,
            DesignPoint({"dp": 1, "pp": 1, "sp": 1, "npus_per_dim": (4, 8)}),
        )


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def test_encode_first_values_is_zero_vector():
    schema = load_schema("table4")
    values = {}
    for k in schema.knobs:
        first = [v[0] for v in k.values]
        values[k.name] = first if k.is_multidim else first[0]
    action = encode_point(schema, DesignPoint(values))
    assert action == (0,) * schema.slot_count


def test_table5_point_round_trips():
    schema = load_schema("table4")
    point = DesignPoint({
        "dp": 64, "pp": 1, "sp": 4, "weight_sharded": 1,
        "scheduling_policy": "LIFO",
        "collective_algorithm": ("RI", "RHD", "DBT", "DBT"),
        "chunks_per_collective": 4, "multidim_collective": "Baseline",
        "topology": ("RI", "RI", "RI", "SW"),
        "npus_per_dim": (4, 4, 4, 16),
        "bandwidth_per_dim": (50, 50, 50, 50),
    })
    action = encode_point(schema, point)
    assert decode_action(schema, action) == point
    assert check_constraints(schema, point).valid


def test_decode_out_of_range():
    schema = load_schema("table4")
    action = [0] * schema.slot_count
    action[0] = len(schema.knob("dp").values[0])
    with pytest.raises(SchemaError, match="out of range"):
        decode_action(schema, tuple(action))
    with pytest.raises(SchemaError, match="length"):
        decode_action(schema, (0,))


def test_encode_value_not_in_list():
    schema = load_schema("table4")
    values = decode_action(schema, (0,) * schema.slot_count).as_dict()
    values["dp"] = 3
    with pytest.raises(SchemaError, match="not in knob"):
        encode_point(schema, DesignPoint(values))


def test_round_trip_random_points():
    schema = load_schema("table4")
    rng = random.Random(1234)
    sizes = [len(s.values) for s in schema.slots]
    for _ in range(10_000):
        action = tuple(rng.randrange(n) for n in sizes)
        assert encode_point(schema, decode_action(schema, action)) == action


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def test_sample_uniform_deterministic_and_valid():
    schema = load_schema("table4")
    a = sample_uniform(schema, seed=42)
    b = sample_uniform(schema, seed=42)
    assert a == b
    for seed in range(200):
        point = sample_uniform(schema, seed=seed)
        assert check_constraints(schema, point).valid


def test_sample_single_point_schema():
    schema = Schema(npu_count=2, knobs=(knob("only", [7]),))
    assert sample_uniform(schema, seed=0)["only"] == 7
    assert sample_uniform(schema, seed=99)["only"] == 7


def test_sample_impossible_constraint():
    schema = Schema(
        npu_count=1024,
        knobs=(knob("npus_per_dim", (4,), stack="network", kind="multidim-grid", dims=2),),
        constraints=(Constraint("product-eq", ("npus_per_dim",), "npu_count"),),
    )
    with pytest.raises(SamplingError):
        sample_uniform(schema, seed=0, max_tries=50)


def test_iter_valid_actions_lexicographic_and_valid():
    schema = network_schema()
    actions = list(iter_valid_actions(schema))
    assert actions == sorted(actions)
    assert len(actions) == constrained_cardinality(schema)
    for action in actions[:50]:
        assert check_constraints(schema, decode_action(schema, action)).valid


def test_component_operands():
    schema = Schema(
        npu_count=16,
        knobs=(knob("npus_per_dim", (2, 4, 16), stack="network", kind="multidim-grid", dims=2),),
        constraints=(Constraint("product-eq", ("npus_per_dim[0]", "npus_per_dim[1]"), "npu_count"),),
    )
    ok = DesignPoint({"npus_per_dim": (4, 4)})
    assert check_constraints(schema, ok).valid
    assert not check_constraints(schema, DesignPoint({"npus_per_dim": (2, 4)})).valid
    assert constrained_cardinality(schema) == 1  # only (4, 4) multiplies to 16
