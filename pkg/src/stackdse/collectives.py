"""Analytic cost model for collective communication.

Timing model
------------
A link with bandwidth ``B`` (bytes/s) and latency ``alpha`` transmits a
message of ``s`` bytes in ``s/B`` link-occupancy time; the payload lands
``alpha`` after the transmission finishes, and back-to-back transmissions
stream (latency overlaps the next transmission).

Per-algorithm schedules for ``p`` ranks, payload ``M`` bytes, ``c`` chunks
(chunks split a collective into ``c`` sequential sub-collectives; each chunk
pays its own latency terms, the bandwidth terms are conserved):

* Ring (RI): ``p - 1`` neighbor rounds per phase, message ``M/(c*p)``.
  reduce-scatter = all-gather = ``c*(p-1)*alpha + (p-1)*M/(p*B)``;
  all-reduce chains both phases (2x).
* Direct (DI): every rank streams its ``p - 1`` shards out of one injection
  link. reduce-scatter = all-gather = ``c*alpha + (p-1)*M/(p*B)``;
  all-reduce = 2x.
* Recursive halving-doubling (RHD): ``log2(p)`` pairwise exchange stages of
  shrinking size ``M/2^k``; chunk pieces stream within a stage, so time is
  chunk-count independent: reduce-scatter = all-gather =
  ``ceil(log2 p)*alpha + M*(p-1)/(p*B)``; all-reduce = 2x.
* Double binary tree (DBT): two pipelined trees, each moving half the
  payload. all-reduce = ``2*ceil(log2 p)*alpha + 2*M/B`` (already
  chunk-pipelined); reduce-scatter / all-gather = half.
* all-to-all: injection-link volume dominates regardless of algorithm:
  ``c*alpha + (p-1)*M/(p*B)``.

Multi-dimensional collectives decompose hierarchically over the topology
dimensions an axis spans; on Ring-topology dimensions, algorithms that
exchange between non-adjacent ranks (DI, RHD, DBT, all-to-all) pay the
average hop distance as a latency multiplier and a bandwidth divisor.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

ALGORITHMS = ("RI", "DI", "RHD", "DBT")
PATTERNS = ("all-reduce", "reduce-scatter", "all-gather", "all-to-all")

# Algorithms whose exchange partners are non-adjacent on a physical ring.
RING_PENALIZED = frozenset({"DI", "RHD", "DBT"})


def ring_hop_penalty(p: int) -> float:
    """Average pairwise hop distance on a bidirectional ring of ``p`` nodes."""
    if p <= 2:
        return 1.0
    total = sum(min(d, p - d) for d in range(1, p))
    return total / (p - 1)


def collective_time_1d(
    pattern: str,
    algorithm: str,
    p: int,
    payload_bytes: float,
    link_bw: float,
    link_latency: float,
    chunks: int = 1,
) -> float:
    """Seconds for one collective on a single topology dimension.

    ``link_bw`` is in bytes/s. A single participant or an empty payload
    costs nothing.
    """
    if pattern not in PATTERNS:
        raise ValueError(f"unknown collective pattern {pattern!r}")
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown collective algorithm {algorithm!r}")
    if chunks < 1:
        raise ValueError("chunks must be >= 1")
    if p <= 1 or payload_bytes <= 0:
        return 0.0
    if link_bw <= 0:
        raise ValueError("link bandwidth must be positive")

    M = float(payload_bytes)
    B = float(link_bw)
    alpha = float(link_latency)
    c = chunks
    log_p = math.ceil(math.log2(p))

    if pattern == "all-to-all":
        return c * alpha + (p - 1) * M / (p * B)

    if algorithm == "RI":
        phase = c * (p - 1) * alpha + (p - 1) * M / (p * B)
        return 2.0 * phase if pattern == "all-reduce" else phase
    if algorithm == "DI":
        phase = c * alpha + (p - 1) * M / (p * B)
        return 2.0 * phase if pattern == "all-reduce" else phase
    if algorithm == "RHD":
        phase = log_p * alpha + M * (p - 1) / (p * B)
        return 2.0 * phase if pattern == "all-reduce" else phase
    # DBT
    phase = log_p * alpha + M / B
    return 2.0 * phase if pattern == "all-reduce" else phase


def axis_spans(dim_sizes: Sequence[int], stride: int, size: int) -> tuple[tuple[int, int], ...]:
    """Topology dimensions covered by a communicator group.

    The group is ``{base + k*stride, k < size}`` under mixed-radix NPU ids
    with dimension 0 innermost. Returns ``(dim_index, participants)`` pairs
    for every dimension the group spans; participant counts multiply to the
    group size whenever strides and dimension sizes align (guaranteed for
    power-of-two spaces).
    """
    if size <= 1:
        return ()
    spans = []
    below = 1
    top = stride * size
    for index, npus in enumerate(dim_sizes):
        lo = max(stride, below)
        hi = min(top, below * npus)
        if hi > lo:
            spans.append((index, hi // lo))
        below *= npus
    covered = math.prod(p for _, p in spans)
    if covered != size:
        raise ValueError(
            f"group (stride={stride}, size={size}) does not align with dimensions {list(dim_sizes)}"
        )
    return tuple(spans)


def _dim_time(
    pattern: str,
    topo_dim,
    algorithm: str,
    participants: int,
    payload: float,
    chunks: int,
) -> float:
    """1-D time with the Ring-topology multi-hop penalty applied."""
    alpha = topo_dim.latency
    bw = topo_dim.bandwidth_bytes
    if topo_dim.block == "RI" and (algorithm in RING_PENALIZED or pattern == "all-to-all"):
        hop = ring_hop_penalty(participants)
        alpha *= hop
        bw /= hop
    return collective_time_1d(pattern, algorithm, participants, payload, bw, alpha, chunks)


def multidim_collective_time(
    pattern: str,
    payload_bytes: float,
    span: Sequence[tuple[int, int]],
    topo,
    config,
) -> tuple[float, dict[int, float]]:
    """Total seconds and per-dimension busy time for a spanning collective.

    ``span`` lists ``(dim_index, participants)`` innermost-first. Baseline
    mode runs the per-dimension stages hierarchically (reduce-scatter inward
    to outward, then all-gather back), with the payload shrinking by each
    stage's participant count. BlueConnect runs the same stages as a chunk
    pipeline: stage times are per-chunk, and the pipeline adds
    ``(chunks - 1)`` repeats of the slowest stage instead of re-running the
    whole chain.
    """
    if not span:
        raise ValueError("collective span must cover at least one dimension")
    if payload_bytes <= 0:
        return 0.0, {}
    chunks = config.chunks

    # (dim, participants, stage payload), innermost first.
    ladder = []
    payload = float(payload_bytes)
    for dim, participants in span:
        ladder.append((dim, participants, payload))
        payload /= participants

    if pattern == "all-reduce":
        stages = [("reduce-scatter", *step) for step in ladder]
        stages += [("all-gather", *step) for step in reversed(ladder)]
    elif pattern == "reduce-scatter":
        stages = [("reduce-scatter", *step) for step in ladder]
    elif pattern == "all-gather":
        stages = [("all-gather", *step) for step in reversed(ladder)]
    elif pattern == "all-to-all":
        stages = [("all-to-all", *step) for step in ladder]
    else:
        raise ValueError(f"unknown collective pattern {pattern!r}")

    per_dim: dict[int, float] = {}
    if config.multidim == "BlueConnect":
        chunk_times = [
            _dim_time(stage_pattern, topo.dims[dim], config.algorithms[dim], p, m / chunks, 1)
            for stage_pattern, dim, p, m in stages
        ]
        total = sum(chunk_times) + (chunks - 1) * max(chunk_times)
        for (stage_pattern, dim, p, m), t in zip(stages, chunk_times):
            per_dim[dim] = per_dim.get(dim, 0.0) + t * chunks
    else:
        total = 0.0
        for stage_pattern, dim, p, m in stages:
            t = _dim_time(stage_pattern, topo.dims[dim], config.algorithms[dim], p, m, chunks)
            per_dim[dim] = per_dim.get(dim, 0.0) + t
            total += t
    return total, per_dim
