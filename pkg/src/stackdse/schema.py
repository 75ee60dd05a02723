"""Schema-defined design spaces for distributed ML system search.

A :class:`Schema` declares every tunable knob of the co-design space --
workload parallelization, collective configuration, network shape -- as an
explicit finite value list, plus cross-knob product constraints (for example
"the parallelization degrees must multiply to at most the cluster size").
Everything downstream consumes this one object: the simulator reads concrete
:class:`DesignPoint` assignments, search agents see only flat index vectors
obtained through :func:`encode_point` / :func:`decode_action`.

Schemas and points are immutable; all operations here are pure functions and
safe to call from concurrent evaluation workers.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Iterator, Mapping, NamedTuple

STACKS = ("workload", "collective", "network")
SCALAR_KINDS = ("scalar-categorical", "scalar-grid")
MULTIDIM_KINDS = ("multidim-categorical", "multidim-grid")
KNOB_KINDS = SCALAR_KINDS + MULTIDIM_KINDS
CONSTRAINT_KINDS = ("product-le", "product-eq")


class SchemaError(ValueError):
    """Malformed schema document or structurally invalid schema input."""


class SamplingError(RuntimeError):
    """Rejection sampling exhausted its retry budget (over-constrained space)."""


class _TooLarge:
    """Marker returned when a constrained count provably exceeds the cap."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "TOO_LARGE"


TOO_LARGE = _TooLarge()


def is_too_large(count: object) -> bool:
    return count is TOO_LARGE


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


@dataclass(frozen=True)
class Knob:
    """One searchable parameter: a named, stack-tagged finite value list.

    ``values`` holds one tuple per dimension; scalar knobs have exactly one.
    Parsed documents always carry identical lists across dimensions, but
    programmatic construction (schema restriction) may pin dimensions to
    distinct singletons.
    """

    name: str
    stack: str
    kind: str
    values: tuple[tuple[Any, ...], ...]

    def __post_init__(self) -> None:
        if not self.name or not isinstance(self.name, str):
            raise SchemaError("knob name must be a non-empty string")
        if self.stack not in STACKS:
            raise SchemaError(
                f"knob {self.name!r}: unknown stack tag {self.stack!r}; expected one of {STACKS}"
            )
        if self.kind not in KNOB_KINDS:
            raise SchemaError(f"knob {self.name!r}: unknown kind {self.kind!r}")
        if not self.values:
            raise SchemaError(f"knob {self.name!r}: needs at least one dimension")
        if self.kind in SCALAR_KINDS and len(self.values) != 1:
            raise SchemaError(f"knob {self.name!r}: scalar knobs carry exactly one dimension")
        for dim, vals in enumerate(self.values):
            if not vals:
                raise SchemaError(f"knob {self.name!r}: empty value list (dim {dim})")
            if len(set(vals)) != len(vals):
                raise SchemaError(f"knob {self.name!r}: duplicate values (dim {dim})")

    @property
    def dims(self) -> int:
        return len(self.values)

    @property
    def is_multidim(self) -> bool:
        return self.kind in MULTIDIM_KINDS

    def size(self) -> int:
        n = 1
        for vals in self.values:
            n *= len(vals)
        return n


def _split_operand(operand: str) -> tuple[str, int | None]:
    """``"knob"`` addresses every dimension, ``"knob[i]"`` one component."""
    if operand.endswith("]") and "[" in operand:
        name, _, idx = operand[:-1].partition("[")
        try:
            return name, int(idx)
        except ValueError as exc:
            raise SchemaError(f"bad constraint operand {operand!r}") from exc
    return operand, None


@dataclass(frozen=True)
class Constraint:
    """Product constraint over numeric knob values.

    ``bound`` is either an integer literal or the string ``"npu_count"``,
    resolved against the owning schema at evaluation time.
    """

    kind: str
    operands: tuple[str, ...]
    bound: int | str

    def __post_init__(self) -> None:
        if self.kind not in CONSTRAINT_KINDS:
            raise SchemaError(f"unknown constraint kind {self.kind!r}")
        if not self.operands:
            raise SchemaError("constraint needs at least one operand")
        if not (isinstance(self.bound, int) or self.bound == "npu_count"):
            raise SchemaError(f"constraint bound must be an integer or 'npu_count', got {self.bound!r}")

    def resolved_bound(self, npu_count: int) -> int:
        return npu_count if self.bound == "npu_count" else int(self.bound)

    @property
    def label(self) -> str:
        op = "<=" if self.kind == "product-le" else "=="
        return f"product({', '.join(self.operands)}) {op} {self.bound}"


class Slot(NamedTuple):
    """One scalar position of the flat action vector."""

    knob: Knob
    dim: int

    @property
    def values(self) -> tuple[Any, ...]:
        return self.knob.values[self.dim]


class DesignPoint:
    """One concrete assignment of every knob (a tuple per multidim knob)."""

    __slots__ = ("_values",)

    def __init__(self, values: Mapping[str, Any]):
        norm: dict[str, Any] = {}
        for name, value in values.items():
            norm[name] = tuple(value) if isinstance(value, (list, tuple)) else value
        self._values = norm

    def __getitem__(self, name: str) -> Any:
        return self._values[name]

    def get(self, name: str, default: Any = None) -> Any:
        return self._values.get(name, default)

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __eq__(self, other: object) -> bool:
        return isinstance(other, DesignPoint) and self._values == other._values

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v!r}" for k, v in self._values.items())
        return f"DesignPoint({inner})"

    def as_dict(self) -> dict[str, Any]:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self._values.items()}

    def items(self):
        return self._values.items()


@dataclass(frozen=True)
class Schema:
    """The full design space: cluster size, ordered knobs, constraints."""

    npu_count: int
    knobs: tuple[Knob, ...]
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self) -> None:
        if self.npu_count < 1 or (self.npu_count & (self.npu_count - 1)) != 0:
            raise SchemaError(f"npu_count must be a positive power of two, got {self.npu_count}")
        names = [k.name for k in self.knobs]
        if len(set(names)) != len(names):
            raise SchemaError("knob names must be unique")
        for constraint in self.constraints:
            for operand in constraint.operands:
                name, component = _split_operand(operand)
                knob = self._find(name)
                if knob is None:
                    raise SchemaError(f"constraint references missing knob {name!r}")
                if component is not None and not (0 <= component < knob.dims):
                    raise SchemaError(f"constraint operand {operand!r} is out of range")
                dims = (component,) if component is not None else range(knob.dims)
                for dim in dims:
                    for value in knob.values[dim]:
                        if not (isinstance(value, int) and not isinstance(value, bool) and value >= 1):
                            raise SchemaError(
                                f"constraint operand knob {name!r} must carry positive "
                                f"integer values, got {value!r}"
                            )

    def _find(self, name: str) -> Knob | None:
        for knob in self.knobs:
            if knob.name == name:
                return knob
        return None

    def knob(self, name: str) -> Knob:
        knob = self._find(name)
        if knob is None:
            raise SchemaError(f"no knob named {name!r}")
        return knob

    @cached_property
    def slots(self) -> tuple[Slot, ...]:
        return tuple(Slot(knob, dim) for knob in self.knobs for dim in range(knob.dims))

    @property
    def slot_count(self) -> int:
        return len(self.slots)

    @cached_property
    def _slot_position(self) -> dict[tuple[str, int], int]:
        return {(slot.knob.name, slot.dim): i for i, slot in enumerate(self.slots)}

    def _constraint_slots(self, constraint: Constraint) -> list[int]:
        """Slot indices a constraint multiplies over (with repetition)."""
        positions: list[int] = []
        for operand in constraint.operands:
            name, component = _split_operand(operand)
            knob = self.knob(name)
            dims = (component,) if component is not None else range(knob.dims)
            positions.extend(self._slot_position[(name, dim)] for dim in dims)
        return positions

    def to_json(self) -> str:
        doc = {
            "npu_count": self.npu_count,
            "knobs": [
                {
                    "name": k.name,
                    "stack": k.stack,
                    "kind": k.kind,
                    "dims": k.dims,
                    "values_per_dim": [list(vals) for vals in k.values],
                }
                for k in self.knobs
            ],
            "constraints": [
                {"kind": c.kind, "operands": list(c.operands), "bound": c.bound}
                for c in self.constraints
            ],
        }
        return json.dumps(doc, indent=2)


def _knob_from_dict(doc: Mapping[str, Any]) -> Knob:
    try:
        name = doc["name"]
        stack = doc["stack"]
        kind = doc["kind"]
    except KeyError as exc:
        raise SchemaError(f"knob entry missing required key {exc}") from exc
    dims = int(doc.get("dims", 1))
    if dims < 1:
        raise SchemaError(f"knob {name!r}: dims must be >= 1")
    if "values_per_dim" in doc:
        values = tuple(tuple(vals) for vals in doc["values_per_dim"])
        if len(values) != dims:
            raise SchemaError(f"knob {name!r}: values_per_dim length must equal dims")
    else:
        if "values" not in doc:
            raise SchemaError(f"knob {name!r}: missing value list")
        one = tuple(doc["values"])
        values = tuple(one for _ in range(dims))
    return Knob(name=name, stack=stack, kind=kind, values=values)


def schema_from_dict(doc: Mapping[str, Any]) -> Schema:
    if "npu_count" not in doc:
        raise SchemaError("schema document missing 'npu_count'")
    knobs = tuple(_knob_from_dict(k) for k in doc.get("knobs", ()))
    constraints = tuple(
        Constraint(kind=c["kind"], operands=tuple(c["operands"]), bound=c.get("bound", "npu_count"))
        for c in doc.get("constraints", ())
    )
    return Schema(npu_count=int(doc["npu_count"]), knobs=knobs, constraints=constraints)


def parse_schema(text: str) -> Schema:
    """Parse a JSON schema document; syntax errors report line and column."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("schema document must be a JSON object")
    return schema_from_dict(doc)


def load_schema(source: str | Path) -> Schema:
    """Load a schema from a file path or a packaged fixture name."""
    from . import fixtures

    return parse_schema(fixtures.find(source).read_text())


# ---------------------------------------------------------------------------
# Cardinality
# ---------------------------------------------------------------------------

def _components(schema: Schema, constraints: tuple[Constraint, ...]) -> list[tuple[set[str], list[Constraint]]]:
    """Group knobs by shared constraints (connected components)."""
    groups: list[tuple[set[str], list[Constraint]]] = []
    for constraint in constraints:
        names = {_split_operand(op)[0] for op in constraint.operands}
        merged_names, merged_cons = set(names), [constraint]
        rest = []
        for g_names, g_cons in groups:
            if g_names & merged_names:
                merged_names |= g_names
                merged_cons.extend(g_cons)
            else:
                rest.append((g_names, g_cons))
        rest.append((merged_names, merged_cons))
        groups = rest
    return groups


def _count_assignments(schema: Schema, names: set[str], constraints: list[Constraint]) -> int:
    """Count joint assignments of ``names`` satisfying all ``constraints``.

    Dimension-wise dynamic counting: states are tuples of running products,
    one per constraint. Operand values are validated to be positive integers,
    so a product-le state exceeding its bound can never recover and is pruned;
    product-eq states must stay divisors of the bound.
    """
    slots = [
        (i, slot) for i, slot in enumerate(schema.slots) if slot.knob.name in names
    ]
    bounds = [c.resolved_bound(schema.npu_count) for c in constraints]
    kinds = [c.kind for c in constraints]
    slot_exponent = []
    for c in constraints:
        exps: dict[int, int] = {}
        for pos in schema._constraint_slots(c):
            exps[pos] = exps.get(pos, 0) + 1
        slot_exponent.append(exps)

    states: dict[tuple[int, ...], int] = {tuple(1 for _ in constraints): 1}
    for pos, slot in slots:
        exponents = [slot_exponent[j].get(pos, 0) for j in range(len(constraints))]
        new_states: dict[tuple[int, ...], int] = {}
        for state, count in states.items():
            for value in slot.values:
                nxt = list(state)
                dead = False
                for j, exp in enumerate(exponents):
                    if exp == 0:
                        continue
                    nxt[j] = state[j] * (value ** exp)
                    if kinds[j] == "product-le" and nxt[j] > bounds[j]:
                        dead = True
                        break
                    if kinds[j] == "product-eq" and bounds[j] % nxt[j] != 0:
                        dead = True
                        break
                if dead:
                    continue
                key = tuple(nxt)
                new_states[key] = new_states.get(key, 0) + count
        states = new_states
    total = 0
    for state, count in states.items():
        if all(kinds[j] != "product-eq" or state[j] == bounds[j] for j in range(len(constraints))):
            total += count
    return total


def raw_cardinality(schema: Schema) -> int:
    """Headline point count: product-le groups counted jointly, all else raw.

    Knobs tied together by a product-le constraint contribute the number of
    joint assignments satisfying it; every other knob contributes the plain
    product of its per-dimension list sizes (product-eq constraints are
    deliberately not applied here -- see :func:`constrained_cardinality` for
    the fully constrained count).
    """
    le_constraints = tuple(c for c in schema.constraints if c.kind == "product-le")
    total = 1
    grouped: set[str] = set()
    for names, cons in _components(schema, le_constraints):
        grouped |= names
        total *= _count_assignments(schema, names, cons)
    for knob in schema.knobs:
        if knob.name not in grouped:
            total *= knob.size()
    return total


def constrained_cardinality(schema: Schema, cap: int | None = None) -> int | _TooLarge:
    """Exact count of points satisfying every constraint.

    Returns :data:`TOO_LARGE` instead of the count when ``cap`` is given and
    exceeded; the count itself is always computed by dynamic counting, never
    by enumerating points.
    """
    total = 1
    grouped: set[str] = set()
    for names, cons in _components(schema, schema.constraints):
        grouped |= names
        total *= _count_assignments(schema, names, cons)
    for knob in schema.knobs:
        if knob.name not in grouped:
            total *= knob.size()
    if cap is not None and total > cap:
        return TOO_LARGE
    return total


# ---------------------------------------------------------------------------
# Constraint checking, encoding, sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstraintReport:
    valid: bool
    violations: tuple[str, ...]


def _check_structure(schema: Schema, point: DesignPoint) -> None:
    for knob in schema.knobs:
        if knob.name not in point:
            raise SchemaError(f"structural mismatch: point missing knob {knob.name!r}")
        value = point[knob.name]
        if knob.is_multidim:
            if not isinstance(value, tuple) or len(value) != knob.dims:
                raise SchemaError(
                    f"structural mismatch: knob {knob.name!r} expects {knob.dims} components"
                )
        elif isinstance(value, tuple):
            raise SchemaError(f"structural mismatch: knob {knob.name!r} is scalar")


def _operand_product(schema: Schema, point: DesignPoint, constraint: Constraint) -> int:
    product = 1
    for operand in constraint.operands:
        name, component = _split_operand(operand)
        knob = schema.knob(name)
        value = point[name]
        if knob.is_multidim:
            parts = value if component is None else (value[component],)
        else:
            parts = (value,)
        for part in parts:
            product *= int(part)
    return product


def check_constraints(schema: Schema, point: DesignPoint) -> ConstraintReport:
    """Validity of a structurally matching point; names every failed constraint."""
    _check_structure(schema, point)
    violations = []
    for constraint in schema.constraints:
        product = _operand_product(schema, point, constraint)
        bound = constraint.resolved_bound(schema.npu_count)
        ok = product <= bound if constraint.kind == "product-le" else product == bound
        if not ok:
            violations.append(constraint.label)
    return ConstraintReport(valid=not violations, violations=tuple(violations))


def encode_point(schema: Schema, point: DesignPoint) -> tuple[int, ...]:
    """Flatten a point to one value-list index per slot."""
    _check_structure(schema, point)
    action = []
    for slot in schema.slots:
        value = point[slot.knob.name]
        if slot.knob.is_multidim:
            value = value[slot.dim]
        try:
            action.append(slot.values.index(value))
        except ValueError:
            raise SchemaError(
                f"value {value!r} not in knob {slot.knob.name!r} list (dim {slot.dim})"
            ) from None
    return tuple(action)


def decode_action(schema: Schema, action: tuple[int, ...]) -> DesignPoint:
    """Inverse of :func:`encode_point`; rejects wrong length or range."""
    slots = schema.slots
    if len(action) != len(slots):
        raise SchemaError(f"action length {len(action)} != slot count {len(slots)}")
    values: dict[str, Any] = {}
    for slot, index in zip(slots, action):
        if not isinstance(index, int) or isinstance(index, bool) or not (0 <= index < len(slot.values)):
            raise SchemaError(
                f"index {index!r} out of range for knob {slot.knob.name!r} "
                f"(dim {slot.dim}, {len(slot.values)} values)"
            )
        value = slot.values[index]
        if slot.knob.is_multidim:
            values.setdefault(slot.knob.name, []).append(value)
        else:
            values[slot.knob.name] = value
    return DesignPoint(values)


def sample_uniform(schema: Schema, seed: int, max_tries: int = 10_000) -> DesignPoint:
    """Uniform constraint-satisfying point via rejection sampling.

    Deterministic for a given seed. Raises :class:`SamplingError` after
    ``max_tries`` rejected draws, which signals an over-constrained schema.
    """
    rng = random.Random(seed)
    slots = schema.slots
    for _ in range(max_tries):
        action = tuple(rng.randrange(len(slot.values)) for slot in slots)
        point = decode_action(schema, action)
        if check_constraints(schema, point).valid:
            return point
    raise SamplingError(f"no valid point found in {max_tries} draws")


def iter_valid_actions(schema: Schema) -> Iterator[tuple[int, ...]]:
    """All constraint-satisfying action vectors, in lexicographic order.

    Backtracking with running-product pruning, so infeasible prefixes are
    abandoned early; intended for spaces small enough to enumerate.
    """
    slots = schema.slots
    constraints = schema.constraints
    bounds = [c.resolved_bound(schema.npu_count) for c in constraints]
    kinds = [c.kind for c in constraints]
    exps: list[dict[int, int]] = []
    for c in constraints:
        e: dict[int, int] = {}
        for pos in schema._constraint_slots(c):
            e[pos] = e.get(pos, 0) + 1
        exps.append(e)

    prefix = [0] * len(slots)

    def rec(pos: int, products: tuple[int, ...]) -> Iterator[tuple[int, ...]]:
        if pos == len(slots):
            if all(kinds[j] != "product-eq" or products[j] == bounds[j] for j in range(len(constraints))):
                yield tuple(prefix)
            return
        slot = slots[pos]
        exponents = [exps[j].get(pos, 0) for j in range(len(constraints))]
        for index, value in enumerate(slot.values):
            nxt = list(products)
            dead = False
            for j, exp in enumerate(exponents):
                if exp == 0:
                    continue
                nxt[j] = products[j] * (int(value) ** exp)
                if kinds[j] == "product-le" and nxt[j] > bounds[j]:
                    dead = True
                    break
                if kinds[j] == "product-eq" and bounds[j] % nxt[j] != 0:
                    dead = True
                    break
            if dead:
                continue
            prefix[pos] = index
            yield from rec(pos + 1, tuple(nxt))

    yield from rec(0, tuple(1 for _ in constraints))
