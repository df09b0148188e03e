"""Budgeted fitness evaluation.

An evaluation request names a hyperparameter setting, a budget fraction in
``(0, 1]`` (1.0 is a full evaluation, anything less a fast one) and a seed.
Backends turn requests into scalar fitnesses, lower being better. Three
backends ship here:

* :class:`SyntheticObjective` -- cheap benchmark functions with a simulated
  learning curve ``base + gap * (1 - budget) ** exponent`` plus optional
  seeded Gaussian noise.
* :class:`FunctionBackend` -- wraps a plain Python callable.
* :class:`ExternalEvaluator` -- a child process speaking JSON lines.

:class:`Evaluator` sits in front of a backend and adds a result cache and a
thread pool that always delivers results in submission order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import queue
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .errors import (
    EvaluationError,
    EvaluationFailed,
    EvaluatorUnavailable,
    KTooLarge,
    MalformedResponse,
    UnknownObjectiveKind,
)
from .space import SearchSpace

logger = logging.getLogger(__name__)

PROTOCOL = "tsm-hpo/1"
BENCHMARK_KINDS = ("deceptive_multimodal", "separable_quadratic", "plateau_noise")


def derive_seed(*parts: Any) -> int:
    """Stable 63-bit seed from arbitrary JSON-able parts."""
    payload = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=str)
    return int.from_bytes(hashlib.blake2b(payload.encode(), digest_size=8).digest(), "big") >> 1


@dataclass(frozen=True)
class EvaluationRequest:
    id: str
    values: dict[str, float]
    budget_fraction: float
    seed: int

    def __post_init__(self) -> None:
        if not 0.0 < self.budget_fraction <= 1.0:
            raise ValueError(f"budget_fraction must be in (0, 1], got {self.budget_fraction}")

    def cache_key(self) -> tuple:
        return (tuple(sorted(self.values.items())), float(self.budget_fraction), int(self.seed))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "values": dict(self.values),
            "budget_fraction": self.budget_fraction,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class EvaluationResult:
    id: str
    fitness: float
    fidelity: float


class Backend(Protocol):
    def evaluate(self, request: EvaluationRequest) -> EvaluationResult: ...


# --------------------------------------------------------------------------
# Synthetic objectives


@dataclass(frozen=True)
class SyntheticObjective:
    """Benchmark function over grid indices with a simulated learning curve.

    ``fitness(setting, b) = base(setting) + curve_gap(setting) * (1 - b) ** curve_exponent + noise``

    ``base`` and ``curve_gap`` are evaluated on normalised coordinates
    ``index / (grid_count - 1)`` and accept whole arrays of index tuples, so
    exhaustive sweeps stay vectorised. Noise is drawn from a generator seeded
    by the setting, the budget and the request seed only.
    """

    space: SearchSpace
    kind: str
    seed: int
    noise_sd: float = 0.0
    curve_exponent: float = 2.0
    floor: float = 0.5
    # kind-specific parameters as nested tuples so that specs compare by value
    params: tuple = field(default=(), repr=False)

    def __post_init__(self) -> None:
        if self.kind not in BENCHMARK_KINDS:
            raise UnknownObjectiveKind(f"unknown objective kind {self.kind!r}; choose from {BENCHMARK_KINDS}")
        if self.noise_sd < 0 or self.curve_exponent <= 0:
            raise ValueError("noise_sd must be >= 0 and curve_exponent > 0")

    def _unit(self, indices: np.ndarray) -> np.ndarray:
        scale = np.array([d.grid_count - 1 for d in self.space.dims], dtype=float)
        return np.asarray(indices, dtype=float) / scale

    def base(self, indices) -> np.ndarray | float:
        """Full-budget, noise-free fitness for one index tuple or an ``(..., n_h)`` array."""
        x = self._unit(indices)
        if self.kind == "deceptive_multimodal":
            centres, depths, curvatures, ripple, freq = self.params
            c = np.asarray(centres)
            dist = np.mean((x[..., None, :] - c) ** 2, axis=-1)
            basins = np.min(np.asarray(depths) + np.asarray(curvatures) * dist, axis=-1)
            wiggle = ripple * np.mean(np.sin(np.pi * freq * (x - c[0])) ** 2, axis=-1)
            out = self.floor + basins + wiggle
        elif self.kind == "separable_quadratic":
            targets, weights = (np.asarray(a) for a in self.params)
            out = self.floor + np.mean(weights * (x - targets) ** 2, axis=-1)
        else:  # plateau_noise
            targets, levels = self.params
            bowl = np.mean((x - np.asarray(targets)) ** 2, axis=-1)
            out = self.floor + np.floor(bowl * levels) / levels
        return float(out) if np.ndim(out) == 0 else out

    def curve_gap(self, indices) -> np.ndarray | float:
        """Distance between the fast and full learning-curve value; larger settings learn slower."""
        x = self._unit(indices)
        out = 0.2 + 0.2 * np.mean(x, axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def fitness(self, indices: Sequence[int], budget_fraction: float, seed: int) -> float:
        idx = tuple(int(i) for i in indices)
        value = self.base(idx) + self.curve_gap(idx) * (1.0 - budget_fraction) ** self.curve_exponent
        if self.noise_sd > 0:
            rng = np.random.default_rng(derive_seed("noise", idx, repr(float(budget_fraction)), int(seed)))
            value += self.noise_sd * rng.standard_normal()
        return float(value)

    def evaluate(self, request: EvaluationRequest) -> EvaluationResult:
        g = self.space.from_values(request.values)
        return EvaluationResult(
            request.id, self.fitness(g.indices, request.budget_fraction, request.seed), request.budget_fraction
        )

    def grid_optimum(self, chunk: int = 1 << 20) -> tuple[float, tuple[int, ...]]:
        """Exhaustive minimum of :meth:`base` over the whole grid."""
        counts = [d.grid_count for d in self.space.dims]
        total = math.prod(counts)
        best, best_flat = math.inf, -1
        for start in range(0, total, chunk):
            flat = np.arange(start, min(total, start + chunk))
            idx = np.stack(np.unravel_index(flat, counts), axis=-1)
            vals = self.base(idx)
            j = int(np.argmin(vals))
            if vals[j] < best:
                best, best_flat = float(vals[j]), int(flat[j])
        return best, tuple(int(i) for i in np.unravel_index(best_flat, counts))

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "noise_sd": self.noise_sd,
            "curve_exponent": self.curve_exponent,
        }


def make_benchmark_objective(
    space: SearchSpace,
    kind: str,
    seed: int = 0,
    noise_sd: float | None = None,
    curve_exponent: float = 2.0,
) -> SyntheticObjective:
    """Build one of the named benchmark objectives for ``space``.

    ``deceptive_multimodal`` places up to five quadratic basins, each centred
    at a grid point inside a different leaf subspace. Basin 0 is the global
    one (depth 0); basin 1 is a broad decoy only slightly worse; the rest
    are narrower and shallower. A small ripple vanishing at the global
    centre adds local structure.

    ``separable_quadratic`` is a weighted bowl around a random target.
    ``plateau_noise`` quantises a bowl into flat terraces and defaults to
    noisy evaluations.
    """
    if kind not in BENCHMARK_KINDS:
        raise UnknownObjectiveKind(f"unknown objective kind {kind!r}; choose from {BENCHMARK_KINDS}")
    rng = np.random.default_rng(derive_seed("benchmark", kind, int(seed)))
    n_h = space.n_h
    if kind == "deceptive_multimodal":
        n_basins = min(5, space.n_s)
        leaves = rng.choice(space.n_s, size=n_basins, replace=False)
        centres = []
        for leaf in leaves:
            path = [int(b) for b in format(int(leaf), f"0{n_h}b")]
            point = []
            for d, bit in zip(space.dims, path):
                lo, hi = d.index_range(bit)
                point.append(int(rng.integers(lo, hi + 1)) / (d.grid_count - 1))
            centres.append(tuple(point))
        depths = [0.0, 0.06] + [float(v) for v in rng.uniform(0.1, 0.3, n_basins - 2)]
        curvatures = [1.0, 0.4] + [float(v) for v in rng.uniform(1.0, 3.0, n_basins - 2)]
        params = (tuple(centres), tuple(depths[:n_basins]), tuple(curvatures[:n_basins]), 0.02, 3.0)
        default_noise = 0.0
    elif kind == "separable_quadratic":
        targets = tuple(float(v) for v in rng.uniform(0, 1, n_h))
        weights = tuple(float(v) for v in rng.uniform(0.5, 1.5, n_h))
        params = (targets, weights)
        default_noise = 0.0
    else:
        targets = tuple(float(v) for v in rng.uniform(0, 1, n_h))
        params = (targets, 20)
        default_noise = 0.02
    return SyntheticObjective(
        space=space,
        kind=kind,
        seed=int(seed),
        noise_sd=default_noise if noise_sd is None else float(noise_sd),
        curve_exponent=curve_exponent,
        params=params,
    )


class FunctionBackend:
    """Adapts ``fn(values, budget_fraction, seed) -> float`` to the backend interface."""

    def __init__(self, fn: Callable[[dict, float, int], float]):
        self.fn = fn

    def evaluate(self, request: EvaluationRequest) -> EvaluationResult:
        try:
            fitness = float(self.fn(dict(request.values), request.budget_fraction, request.seed))
        except EvaluationError:
            raise
        except Exception as exc:
            raise EvaluationFailed(f"objective raised {exc!r}", request.id) from exc
        return EvaluationResult(request.id, fitness, request.budget_fraction)


# --------------------------------------------------------------------------
# External evaluator


class _Child:
    def __init__(self, command: Sequence[str], env: dict | None):
        try:
            self.proc = subprocess.Popen(
                list(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
                env=env,
            )
        except OSError as exc:
            raise EvaluatorUnavailable(f"cannot launch {command!r}: {exc}") from exc
        line = self.proc.stdout.readline()
        if not line:
            self.close()
            raise EvaluatorUnavailable(f"{command!r} exited before the handshake")
        try:
            hello = json.loads(line)
        except json.JSONDecodeError as exc:
            self.close()
            raise MalformedResponse(f"bad handshake line {line.strip()!r}") from exc
        if not isinstance(hello, dict) or hello.get("protocol") != PROTOCOL:
            self.close()
            raise MalformedResponse(f"expected handshake {{'protocol': {PROTOCOL!r}}}, got {line.strip()!r}")

    def roundtrip(self, request: EvaluationRequest) -> str:
        try:
            self.proc.stdin.write(json.dumps(request.to_dict()) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise EvaluatorUnavailable("evaluator process is gone", request.id) from exc
        line = self.proc.stdout.readline()
        if not line:
            raise EvaluatorUnavailable(
                f"evaluator process died (exit status {self.proc.poll()})", request.id
            )
        return line

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
                self.proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self.proc.kill()
                self.proc.wait()
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                stream.close()
            except OSError:
                pass


class ExternalEvaluator:
    """Evaluates requests in child processes over line-delimited JSON.

    Each child first prints ``{"protocol": "tsm-hpo/1"}``, then answers one
    response line per request line. Up to ``max_processes`` children are
    started lazily; a child that violates the protocol or dies is discarded.
    """

    def __init__(self, command: Sequence[str], max_processes: int = 1, env: dict | None = None):
        if not command:
            raise ValueError("external evaluator needs a command line")
        self.command = list(command)
        self.env = env
        self.max_processes = max(1, int(max_processes))
        self._idle: queue.LifoQueue[_Child] = queue.LifoQueue()
        self._started = 0
        self._lock = threading.Lock()
        self._children: list[_Child] = []

    def _checkout(self) -> _Child:
        try:
            return self._idle.get_nowait()
        except queue.Empty:
            pass
        with self._lock:
            spawn = self._started < self.max_processes
            if spawn:
                self._started += 1
        if not spawn:
            return self._idle.get()
        try:
            child = _Child(self.command, self.env)
        except EvaluationError:
            with self._lock:
                self._started -= 1
            raise
        with self._lock:
            self._children.append(child)
        return child

    def _discard(self, child: _Child) -> None:
        child.close()
        with self._lock:
            self._started -= 1
            self._children.remove(child)

    def evaluate(self, request: EvaluationRequest) -> EvaluationResult:
        child = self._checkout()
        try:
            line = child.roundtrip(request)
            result = _parse_response(line, request)
        except (EvaluatorUnavailable, MalformedResponse):
            self._discard(child)
            raise
        self._idle.put(child)
        return result

    def close(self) -> None:
        with self._lock:
            children, self._children = self._children, []
            self._started = 0
        for child in children:
            child.close()
        self._idle = queue.LifoQueue()

    def __enter__(self) -> "ExternalEvaluator":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _parse_response(line: str, request: EvaluationRequest) -> EvaluationResult:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedResponse(f"response is not JSON: {line.strip()!r}", request.id) from exc
    if not isinstance(msg, dict) or "id" not in msg:
        raise MalformedResponse(f"response lacks an id: {line.strip()!r}", request.id)
    if msg["id"] != request.id:
        raise MalformedResponse(f"response id {msg['id']!r} does not match", request.id)
    if "error" in msg:
        raise EvaluationFailed(str(msg["error"]), request.id)
    fitness = msg.get("fitness")
    if isinstance(fitness, bool) or not isinstance(fitness, (int, float)) or not math.isfinite(fitness):
        raise MalformedResponse(f"fitness must be a finite number, got {fitness!r}", request.id)
    return EvaluationResult(request.id, float(fitness), request.budget_fraction)


# --------------------------------------------------------------------------
# Caching, pooled front end


def default_workers() -> int:
    env = os.environ.get("TSM_HPO_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


class Evaluator:
    """Cache plus worker pool in front of a backend.

    ``evaluate_many`` resolves cache hits first, evaluates each distinct
    missing request once, and returns results in submission order, so the
    pool size never changes what the caller sees.
    """

    def __init__(self, backend: Backend, workers: int | None = None, cache: bool = True):
        self.backend = backend
        self.workers = default_workers() if workers is None else max(1, int(workers))
        self.use_cache = cache
        self._cache: dict[tuple, float] = {}
        self._lock = threading.Lock()
        self._pool: ThreadPoolExecutor | None = None
        self.backend_calls = 0
        self.cache_hits = 0

    def _call(self, request: EvaluationRequest) -> float:
        result = self.backend.evaluate(request)
        if result.id != request.id:
            raise MalformedResponse(f"result id {result.id!r} does not match", request.id)
        if not math.isfinite(result.fitness):
            raise MalformedResponse(f"non-finite fitness {result.fitness}", request.id)
        with self._lock:
            self.backend_calls += 1
        return result.fitness

    def _lookup(self, key: tuple) -> float | None:
        if not self.use_cache:
            return None
        with self._lock:
            value = self._cache.get(key)
            if value is not None:
                self.cache_hits += 1
            return value

    def _store(self, key: tuple, fitness: float) -> None:
        if self.use_cache:
            with self._lock:
                self._cache.setdefault(key, fitness)

    def evaluate(self, request: EvaluationRequest) -> EvaluationResult:
        return self.evaluate_many([request])[0]

    def evaluate_many(self, requests: Sequence[EvaluationRequest]) -> list[EvaluationResult]:
        fitness: list[float | None] = [None] * len(requests)
        pending: dict[tuple, list[int]] = {}
        for i, req in enumerate(requests):
            key = req.cache_key()
            hit = self._lookup(key)
            if hit is not None:
                fitness[i] = hit
            elif self.use_cache:
                pending.setdefault(key, []).append(i)
            else:
                pending[(key, i)] = [i]
        jobs = [(key, slots) for key, slots in pending.items()]
        todo = [requests[slots[0]] for _, slots in jobs]
        for (key, slots), value in zip(jobs, self._map(todo)):
            self._store(key, value)
            for i in slots:
                fitness[i] = value
        return [EvaluationResult(r.id, f, r.budget_fraction) for r, f in zip(requests, fitness)]

    def _map(self, todo: list[EvaluationRequest]) -> list[float]:
        if self.workers == 1 or len(todo) <= 1:
            return [self._call(r) for r in todo]
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="tsm-eval")
        return list(self._pool.map(self._call, todo))

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None
        closer = getattr(self.backend, "close", None)
        if closer is not None:
            closer()

    def __enter__(self) -> "Evaluator":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def evaluate(evaluator: Evaluator | Backend, request: EvaluationRequest) -> EvaluationResult:
    return evaluator.evaluate(request)


def select_candidates(offspring: Sequence, k: int) -> list:
    """The ``k`` offspring with the lowest fast fitness, ties kept in list order."""
    if k < 1:
        raise ValueError("k must be positive")
    if k > len(offspring):
        raise KTooLarge(f"cannot pick {k} candidates from {len(offspring)} offspring")
    for ind in offspring:
        if ind.fast_fitness is None:
            raise ValueError("every offspring needs a fast fitness")
    order = sorted(range(len(offspring)), key=lambda i: (offspring[i].fast_fitness, i))
    return [offspring[i] for i in order[:k]]
