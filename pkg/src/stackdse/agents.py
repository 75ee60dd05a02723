"""Search agents over schema-derived action spaces.

:func:`configure_action_space` turns a schema into an :class:`ActionSpaceSpec`
-- per-slot value counts and kinds plus an opaque validity predicate -- with
no manual agent wiring. Agents see only that spec: no knob names, no stack
tags, just flat index vectors, which is what keeps them interchangeable
across design spaces.

All four agents share one contract: ``propose()`` yields a batch of action
vectors, ``observe(proposals, evaluations)`` feeds results back. Proposals
are resampled up to ``REPAIR_RETRIES`` times to satisfy constraints, then
emitted as-is (invalid points score zero downstream). Every agent is fully
deterministic for a fixed seed.

Operator choices:

* RW -- uniform random batches, history-free.
* GA -- size-2 tournament selection, per-slot uniform crossover, per-slot
  mutation, replacement keeps the best ``population_size`` of parents plus
  children (elitism included).
* ACO -- independent per-slot pheromone tables (uniform 1.0 start), roulette
  over ``pheromone ** greediness``, evaporation then reward-proportional
  deposit per observation plus an elitist deposit of the best-so-far.
* BO -- Gaussian-process surrogate (squared-exponential kernel on min-max
  normalized slot indices) over a sliding archive window, expected
  improvement ranked over a uniform candidate pool.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .schema import Schema, check_constraints, decode_action

AGENT_KINDS = ("RW", "GA", "ACO", "BO")
REPAIR_RETRIES = 64

Action = tuple[int, ...]


@dataclass(frozen=True)
class SlotSpec:
    """One action-vector slot: how many values and what they are."""

    size: int
    kind: str   # integer-grid | categorical | boolean
    step: int = 1


@dataclass(frozen=True)
class ActionSpaceSpec:
    slots: tuple[SlotSpec, ...]
    is_valid: Callable[[Action], bool] = field(compare=False)

    @property
    def slot_count(self) -> int:
        return len(self.slots)


def configure_action_space(schema: Schema) -> ActionSpaceSpec:
    """Derive the agent-facing action space from a schema, deterministically."""
    slots = []
    for slot in schema.slots:
        values = slot.values
        if slot.knob.kind.endswith("-grid"):
            kind = "boolean" if set(values) == {0, 1} else "integer-grid"
        else:
            kind = "categorical"
        slots.append(SlotSpec(size=len(values), kind=kind))

    def is_valid(action: Action) -> bool:
        try:
            return check_constraints(schema, decode_action(schema, action)).valid
        except Exception:
            return False

    return ActionSpaceSpec(slots=tuple(slots), is_valid=is_valid)


@dataclass
class AgentConfig:
    kind: str = "RW"
    seed: int = 0
    population_size: int = 32
    mutation_prob: float = 0.1
    greediness: float = 1.0
    evaporation_rate: float = 0.1
    batch_size: int | None = None
    surrogate_length_scale: float = 0.25
    surrogate_noise: float = 1e-6
    candidate_pool: int = 512
    ei_xi: float = 0.01

    def __post_init__(self) -> None:
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}; expected one of {AGENT_KINDS}")
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must lie in [0, 1]")
        if not 0.0 <= self.evaporation_rate <= 1.0:
            raise ValueError("evaporation_rate must lie in [0, 1]")


class SearchAgent:
    """Shared propose/observe contract; concrete agents fill the strategy."""

    def __init__(self, config: AgentConfig, space: ActionSpaceSpec):
        self.config = config
        self.space = space
        self._rng = random.Random(config.seed)
        self._best: tuple[Action, float] | None = None
        self._steps = 0

    @property
    def batch_size(self) -> int:
        if self.config.batch_size is not None:
            return self.config.batch_size
        return 8 if self.config.kind == "BO" else self.config.population_size

    @property
    def best_so_far(self) -> tuple[Action, float] | None:
        return self._best

    def _random_action(self) -> Action:
        return tuple(self._rng.randrange(slot.size) for slot in self.space.slots)

    def _random_valid(self) -> Action:
        action = self._random_action()
        for _ in range(REPAIR_RETRIES):
            if self.space.is_valid(action):
                return action
            action = self._random_action()
        return action  # emitted as-is; scores zero downstream

    def _repair(self, action: Action, regenerate: Callable[[], Action]) -> Action:
        for _ in range(REPAIR_RETRIES):
            if self.space.is_valid(action):
                return action
            action = regenerate()
        return action

    def propose(self) -> list[Action]:
        raise NotImplementedError

    def observe(self, proposals: Sequence[Action], evaluations: Sequence[Any]) -> None:
        if len(proposals) != len(evaluations):
            raise ValueError("proposals and evaluations must align")
        for action, ev in zip(proposals, evaluations):
            if self._best is None or ev.reward > self._best[1]:
                self._best = (tuple(action), ev.reward)
        self._steps += 1
        self._observe(list(map(tuple, proposals)), list(evaluations))

    def _observe(self, proposals: list[Action], evaluations: list[Any]) -> None:
        pass


class RandomWalker(SearchAgent):
    """Uniform random exploration; the batch is the population size."""

    def propose(self) -> list[Action]:
        return [self._random_valid() for _ in range(self.batch_size)]


class GeneticAlgorithm(SearchAgent):
    def __init__(self, config: AgentConfig, space: ActionSpaceSpec):
        super().__init__(config, space)
        self._population: list[tuple[Action, float]] = []
        self._seeded = False

    def _tournament(self) -> Action:
        a = self._rng.choice(self._population)
        b = self._rng.choice(self._population)
        return a[0] if a[1] >= b[1] else b[0]

    def _child(self) -> Action:
        mother, father = self._tournament(), self._tournament()
        child = [m if self._rng.random() < 0.5 else f for m, f in zip(mother, father)]
        for i, slot in enumerate(self.space.slots):
            if self._rng.random() < self.config.mutation_prob:
                child[i] = self._rng.randrange(slot.size)
        return tuple(child)

    def propose(self) -> list[Action]:
        if not self._seeded:
            return [self._random_valid() for _ in range(self.batch_size)]
        return [self._repair(self._child(), self._child) for _ in range(self.batch_size)]

    def _observe(self, proposals: list[Action], evaluations: list[Any]) -> None:
        scored = [(a, ev.reward) for a, ev in zip(proposals, evaluations)]
        if not self._seeded:
            self._population = scored
            self._seeded = True
        else:
            merged = self._population + scored
            merged.sort(key=lambda item: (-item[1], item[0]))
            self._population = merged[: self.config.population_size]


class AntColony(SearchAgent):
    PHEROMONE_FLOOR = 1e-12

    def __init__(self, config: AgentConfig, space: ActionSpaceSpec):
        super().__init__(config, space)
        self._pheromone = [[1.0] * slot.size for slot in space.slots]

    def _walk(self) -> Action:
        action = []
        g = self.config.greediness
        for trail in self._pheromone:
            weights = [t ** g for t in trail]
            total = sum(weights)
            if total <= 0:
                action.append(self._rng.randrange(len(trail)))
                continue
            pick = self._rng.random() * total
            acc = 0.0
            chosen = len(trail) - 1
            for i, w in enumerate(weights):
                acc += w
                if pick <= acc:
                    chosen = i
                    break
            action.append(chosen)
        return tuple(action)

    def propose(self) -> list[Action]:
        return [self._repair(self._walk(), self._walk) for _ in range(self.batch_size)]

    def _observe(self, proposals: list[Action], evaluations: list[Any]) -> None:
        keep = 1.0 - self.config.evaporation_rate
        for trail in self._pheromone:
            for i in range(len(trail)):
                trail[i] = max(trail[i] * keep, self.PHEROMONE_FLOOR)
        for action, ev in zip(proposals, evaluations):
            if ev.reward <= 0:
                continue
            for i, v in enumerate(action):
                self._pheromone[i][v] += ev.reward
        if self._best is not None and self._best[1] > 0:
            best_action, best_reward = self._best
            for i, v in enumerate(best_action):
                self._pheromone[i][v] += best_reward


class _GaussianProcess:
    """Minimal deterministic GP regressor (RBF kernel, fixed hyperparameters)."""

    def __init__(self, length_scale: float, noise: float):
        self.length_scale = length_scale
        self.noise = noise
        self._x: np.ndarray | None = None
        self._chol: np.ndarray | None = None
        self._alpha: np.ndarray | None = None
        self._y_mean = 0.0
        self._y_std = 1.0

    def _kernel(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-0.5 * sq / (self.length_scale ** 2))

    def fit(self, x: np.ndarray, y: np.ndarray) -> None:
        self._y_mean = float(y.mean())
        self._y_std = float(y.std()) or 1.0
        yn = (y - self._y_mean) / self._y_std
        k = self._kernel(x, x) + self.noise * np.eye(len(x))
        self._chol = np.linalg.cholesky(k)
        self._alpha = np.linalg.solve(
            self._chol.T, np.linalg.solve(self._chol, yn)
        )
        self._x = x

    def predict(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ks = self._kernel(x, self._x)
        mean = ks @ self._alpha * self._y_std + self._y_mean
        v = np.linalg.solve(self._chol, ks.T)
        var = np.clip(1.0 - (v ** 2).sum(axis=0), 0.0, None) * self._y_std ** 2
        return mean, var


def _normal_cdf(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.vectorize(math.erf)(z / math.sqrt(2.0)))


def _normal_pdf(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z ** 2) / math.sqrt(2.0 * math.pi)


class BayesianOptimization(SearchAgent):
    """GP surrogate + expected improvement over a random candidate pool."""

    ARCHIVE_WINDOW = 256  # keeps the O(n^3) refit bounded

    def __init__(self, config: AgentConfig, space: ActionSpaceSpec):
        super().__init__(config, space)
        self._archive: list[tuple[Action, float]] = []
        self._scale = np.array(
            [max(slot.size - 1, 1) for slot in space.slots], dtype=float
        )

    def _normalize(self, actions: Sequence[Action]) -> np.ndarray:
        return np.asarray(actions, dtype=float) / self._scale

    def _window(self) -> list[tuple[Action, float]]:
        if len(self._archive) <= self.ARCHIVE_WINDOW:
            return self._archive
        recent = self._archive[-(self.ARCHIVE_WINDOW - 1):]
        best = max(self._archive, key=lambda item: item[1])
        return recent if best in recent else [best] + recent

    def propose(self) -> list[Action]:
        batch = self.batch_size
        if not self._archive:
            return [self._random_valid() for _ in range(batch)]
        window = self._window()
        x = self._normalize([a for a, _ in window])
        y = np.array([r for _, r in window])
        gp = _GaussianProcess(self.config.surrogate_length_scale, self.config.surrogate_noise)
        gp.fit(x, y)

        pool: list[Action] = []
        seen = set()
        # Attempt bound: small spaces cannot supply a full distinct pool.
        for _ in range(4 * self.config.candidate_pool):
            if len(pool) >= self.config.candidate_pool:
                break
            action = self._random_valid()
            if action not in seen:
                seen.add(action)
                pool.append(action)
        if not pool:
            return [self._random_valid() for _ in range(batch)]
        mean, var = gp.predict(self._normalize(pool))
        std = np.sqrt(var)
        best = y.max()
        improve = mean - best - self.config.ei_xi
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(std > 0, improve / std, 0.0)
        ei = np.where(std > 0, improve * _normal_cdf(z) + std * _normal_pdf(z), 0.0)
        ranked = sorted(range(len(pool)), key=lambda i: (-ei[i], pool[i]))
        return [pool[i] for i in ranked[:batch]]

    def _observe(self, proposals: list[Action], evaluations: list[Any]) -> None:
        self._archive.extend((a, ev.reward) for a, ev in zip(proposals, evaluations))


def make_agent(config: AgentConfig, space: ActionSpaceSpec) -> SearchAgent:
    cls = {
        "RW": RandomWalker,
        "GA": GeneticAlgorithm,
        "ACO": AntColony,
        "BO": BayesianOptimization,
    }[config.kind]
    return cls(config, space)
