"""Batched simulation of N environments on a dynamically scheduled worker pool."""

from __future__ import annotations

import os
import queue
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractViolation, InvalidInputError, WorkerError
from ..scene.store import AssetStore
from .agent import EnvState, StepResult, Task, reset_episode, task_step

WORKERS_ENV = "BATCHSIM_WORKERS"


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV)
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


class WorkerPool:
    """Fixed pool of threads pulling item indices off a shared queue.

    Batches are expected to hold many more items than workers, so the queue
    balances uneven per-item cost. Every call to :meth:`run` ends with a
    barrier; no work of one call overlaps the next.
    """

    def __init__(self, num_workers: Optional[int] = None):
        self.num_workers = num_workers or default_workers()
        self._tasks: "queue.Queue[Optional[tuple]]" = queue.Queue()
        self._threads = [
            threading.Thread(target=self._loop, name=f"sim-worker-{k}", daemon=True)
            for k in range(self.num_workers)
        ]
        for t in self._threads:
            t.start()
        self.items_by_worker = [0] * self.num_workers

    def _loop(self) -> None:
        me = int(threading.current_thread().name.rsplit("-", 1)[1])
        while True:
            job = self._tasks.get()
            if job is None:
                return
            fn, index, state = job
            try:
                fn(index)
            except BaseException as exc:  # reported to the caller with its index
                with state["lock"]:
                    state["errors"].append((index, exc))
            finally:
                self.items_by_worker[me] += 1
                with state["lock"]:
                    state["remaining"] -= 1
                    if state["remaining"] == 0:
                        state["done"].set()

    def run(self, fn: Callable[[int], None], n: int) -> None:
        if n == 0:
            return
        state = {"lock": threading.Lock(), "remaining": n, "errors": [], "done": threading.Event()}
        for i in range(n):
            self._tasks.put((fn, i, state))
        state["done"].wait()
        if state["errors"]:
            index, exc = min(state["errors"], key=lambda e: e[0])
            raise WorkerError(index, exc) from exc

    def close(self) -> None:
        for _ in self._threads:
            self._tasks.put(None)
        for t in self._threads:
            t.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass(eq=False)
class SimBatch:
    envs: list[EnvState]
    task: Task = Task.POINTGOAL
    store: Optional[AssetStore] = None
    results: list[Optional[StepResult]] = field(default_factory=list)
    on_complete: Optional[Callable[["SimBatch"], None]] = None
    writes: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        self.results = [None] * len(self.envs)
        self.writes = np.zeros(len(self.envs), dtype=np.int64)

    @property
    def size(self) -> int:
        return len(self.envs)


def _observe(env: EnvState, result: StepResult) -> None:
    result.position = env.position.copy()
    result.heading = env.heading
    result.compass_goal = env.compass()


def simulate_batch(batch: SimBatch, actions: Sequence[int], pool: Optional[WorkerPool] = None) -> SimBatch:
    """Advance every environment one step and fill its result slot.

    Environments whose episode ends are reset in the same call: asset
    reassignment happens in index order on the calling thread (so it never
    depends on worker timing), then episode sampling runs on the pool. For a
    done slot, reward/success/episode describe the finished episode while the
    pose and compass fields describe the first observation of the new one.
    """
    n = batch.size
    actions = np.asarray(actions)
    if actions.shape != (n,):
        raise InvalidInputError(f"expected {n} actions, got shape {actions.shape}")
    if any(env.done for env in batch.envs):
        raise ContractViolation("simulate_batch called with an environment mid-reset")
    results = batch.results = [None] * n
    batch.writes[:] = 0
    acts = [int(a) for a in actions]

    def step_one(i: int) -> None:
        results[i] = task_step(batch.envs[i], acts[i])
        batch.writes[i] += 1

    runner = pool.run if pool is not None else _serial
    runner(step_one, n)

    finished = [i for i in range(n) if results[i].done]
    if batch.store is not None:
        for i in finished:
            batch.envs[i].attach(batch.store.reassign(batch.envs[i].handle))

    def reset_one(k: int) -> None:
        i = finished[k]
        reset_episode(batch.envs[i])
        _observe(batch.envs[i], results[i])

    runner(reset_one, len(finished))
    if batch.on_complete is not None:
        batch.on_complete(batch)
    return batch


def _serial(fn: Callable[[int], None], n: int) -> None:
    for i in range(n):
        try:
            fn(i)
        except Exception as exc:
            raise WorkerError(i, exc) from exc


def make_envs(navmeshes_or_handles, seeds: Sequence[int], task: Task = Task.POINTGOAL, params=None) -> list[EnvState]:
    """Build and reset one env per seed; items are AssetHandles or NavMeshes."""
    from .agent import EpisodeParams

    params = params or EpisodeParams()
    envs = []
    for item, seed in zip(navmeshes_or_handles, seeds):
        rng = np.random.default_rng(seed)
        if hasattr(item, "asset"):
            env = EnvState(navmesh=item.asset.navmesh, rng=rng, task=task, params=params)
            env.attach(item)
        else:
            env = EnvState(navmesh=item, rng=rng, task=task, params=params)
        reset_episode(env)
        envs.append(env)
    return envs
