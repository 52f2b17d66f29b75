"""K-resident scene asset store with share-ratio cap and background rotation."""

from __future__ import annotations

import logging
import queue
import threading
from collections import OrderedDict, deque
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from ..errors import ContractViolation, SaturationError
from .asset import SceneAsset

logger = logging.getLogger(__name__)

DEFAULT_SHARE_CAP = 32


@dataclass(frozen=True, eq=False)
class AssetHandle:
    scene_id: str
    asset: SceneAsset
    serial: int


@dataclass
class _Resident:
    asset: SceneAsset
    refcount: int
    admitted: int
    unreferenced_at: int


class AssetStore:
    """Holds at most ``capacity`` scene assets, each shared by at most ``share_cap`` environments.

    ``loader`` maps a scene id to a :class:`SceneAsset`; rotation runs it on a
    background thread and hands finished assets back through a completion queue.
    Completed loads only become residents inside :meth:`poll` / :meth:`settle`,
    which the rollout loop calls at well-defined points, so residency changes are
    reproducible regardless of how fast the loader thread runs.
    """

    def __init__(self, capacity: int, loader: Callable[[str], SceneAsset], share_cap: int = DEFAULT_SHARE_CAP,
                 background: bool = True):
        if capacity < 1 or share_cap < 1:
            raise ValueError("capacity and share_cap must be positive")
        self.capacity = capacity
        self.share_cap = share_cap
        self._loader = loader
        self._lock = threading.RLock()
        self._residents: OrderedDict[str, _Resident] = OrderedDict()
        self._ready: deque[tuple[str, SceneAsset]] = deque()
        self._inflight: list[str] = []
        self._tick = 0
        self._serial = 0
        self._live: dict[int, str] = {}
        self._background = background
        self._requests: "queue.Queue[Optional[str]]" = queue.Queue()
        self._done: "queue.Queue[tuple[str, object]]" = queue.Queue()
        self._thread: Optional[threading.Thread] = None
        self.evictions = 0
        self.loads = 0

    # -- inspection -----------------------------------------------------
    @property
    def resident_ids(self) -> list[str]:
        with self._lock:
            return list(self._residents)

    def refcount(self, scene_id: str) -> int:
        with self._lock:
            r = self._residents.get(scene_id)
            return 0 if r is None else r.refcount

    def refcounts(self) -> dict[str, int]:
        with self._lock:
            return {k: r.refcount for k, r in self._residents.items()}

    def is_resident(self, scene_id: str) -> bool:
        with self._lock:
            return scene_id in self._residents

    def asset(self, scene_id: str) -> SceneAsset:
        with self._lock:
            return self._residents[scene_id].asset

    @property
    def pending(self) -> list[str]:
        with self._lock:
            return list(self._inflight) + [sid for sid, _ in self._ready]

    def check_invariants(self) -> None:
        with self._lock:
            if len(self._residents) > self.capacity:
                raise AssertionError(f"{len(self._residents)} residents exceed capacity {self.capacity}")
            for sid, r in self._residents.items():
                if not 0 <= r.refcount <= self.share_cap:
                    raise AssertionError(f"refcount {r.refcount} of {sid[:12]} outside [0, {self.share_cap}]")
            live = {}
            for sid in self._live.values():
                live[sid] = live.get(sid, 0) + 1
            if live != {k: v for k, v in self.refcounts().items() if v}:
                raise AssertionError("live handle count disagrees with refcounts")

    # -- acquire / release ----------------------------------------------
    def acquire(self, scene_id: str) -> AssetHandle:
        with self._lock:
            r = self._residents.get(scene_id)
            if r is None:
                if len(self._residents) >= self.capacity:
                    self._evict_unreferenced(1)
                if len(self._residents) >= self.capacity:
                    raise SaturationError(
                        f"store full ({self.capacity} residents); cannot load {scene_id[:12]}"
                    )
                asset = self._take_ready(scene_id)
                if asset is None:
                    asset = self._loader(scene_id)
                    self.loads += 1
                r = self._admit(scene_id, asset)
            if r.refcount >= self.share_cap:
                raise SaturationError(f"{scene_id[:12]} already shared by {r.refcount} environments")
            r.refcount += 1
            handle = AssetHandle(scene_id, r.asset, self._next_serial())
            self._live[handle.serial] = scene_id
            return handle

    def release(self, handle: AssetHandle) -> None:
        with self._lock:
            if self._live.pop(handle.serial, None) is None:
                raise ContractViolation(f"handle {handle.serial} released twice or never acquired")
            r = self._residents[handle.scene_id]
            r.refcount -= 1
            if r.refcount == 0:
                r.unreferenced_at = self._next_tick()

    # -- rotation -------------------------------------------------------
    def rotate(self, next_scene_ids: Iterable[str]) -> None:
        """Evict idle residents not wanted next and schedule loads for the wanted ones."""
        wanted = list(dict.fromkeys(next_scene_ids))
        with self._lock:
            for sid in [s for s, r in self._residents.items() if r.refcount == 0 and s not in wanted]:
                self._evict(sid)
            known = set(self._residents) | set(self._inflight) | {s for s, _ in self._ready}
            for sid in wanted:
                if sid not in known:
                    self._schedule(sid)
            self._admit_ready()

    def poll(self) -> None:
        """Admit whatever the loader has finished, without blocking."""
        with self._lock:
            self._drain_completions(block=False)
            self._admit_ready()

    def settle(self) -> None:
        """Block until every scheduled load has finished, then admit what fits."""
        with self._lock:
            self._drain_completions(block=True)
            self._admit_ready()

    def draining_id(self) -> Optional[str]:
        """Resident being emptied to make room for a waiting replacement, if any."""
        with self._lock:
            if not self._ready and not self._inflight:
                return None
            if len(self._residents) < self.capacity:
                return None
            return min(self._residents.items(), key=lambda kv: kv[1].admitted)[0]

    def reassign(self, current: Optional[AssetHandle]) -> AssetHandle:
        """Swap an environment's asset at an episode boundary.

        Prefers the most recently admitted resident with spare capacity and
        avoids the resident being drained for a replacement.
        """
        with self._lock:
            if current is not None:
                self.release(current)
            self._admit_ready()
            draining = self.draining_id()
            order = sorted(self._residents.items(), key=lambda kv: -kv[1].admitted)
            for sid, r in order:
                if sid != draining and r.refcount < self.share_cap:
                    return self.acquire(sid)
            if current is not None and self.is_resident(current.scene_id):
                return self.acquire(current.scene_id)
            for sid, r in order:
                if r.refcount < self.share_cap:
                    return self.acquire(sid)
            raise SaturationError("every resident asset is at the share cap")

    def close(self) -> None:
        if self._thread is not None:
            self._requests.put(None)
            self._thread.join(timeout=5)
            self._thread = None

    # -- snapshot -------------------------------------------------------
    def snapshot(self) -> dict:
        """Residency bookkeeping at a settle point (nothing in flight), as plain data."""
        with self._lock:
            if self._inflight:
                raise ContractViolation("snapshot with loads still in flight; call settle() first")
            return {
                "capacity": self.capacity,
                "share_cap": self.share_cap,
                "tick": self._tick,
                "serial": self._serial,
                "residents": [[sid, r.admitted, r.unreferenced_at] for sid, r in self._residents.items()],
                "ready": [sid for sid, _ in self._ready],
                "evictions": self.evictions,
                "loads": self.loads,
            }

    @classmethod
    def restore(cls, snap: dict, loader: Callable[[str], SceneAsset], holders: Iterable[str],
                background: bool = True) -> tuple["AssetStore", list[AssetHandle]]:
        """Rebuild a store from :meth:`snapshot` and re-issue one handle per entry of ``holders``."""
        store = cls(snap["capacity"], loader, snap["share_cap"], background)
        for sid, admitted, unref in snap["residents"]:
            store._residents[sid] = _Resident(loader(sid), 0, admitted, unref)
        for sid in snap["ready"]:
            store._ready.append((sid, loader(sid)))
        handles = []
        for sid in holders:
            r = store._residents[sid]
            r.refcount += 1
            handle = AssetHandle(sid, r.asset, store._next_serial())
            store._live[handle.serial] = sid
            handles.append(handle)
        store._tick = snap["tick"]
        store._serial = snap["serial"]
        store.evictions = snap["evictions"]
        store.loads = snap["loads"]
        return store, handles

    # -- internals ------------------------------------------------------
    def _next_tick(self) -> int:
        self._tick += 1
        return self._tick

    def _next_serial(self) -> int:
        self._serial += 1
        return self._serial

    def _admit(self, scene_id: str, asset: SceneAsset) -> _Resident:
        r = _Resident(asset, 0, self._next_tick(), self._next_tick())
        self._residents[scene_id] = r
        return r

    def _evict(self, scene_id: str) -> None:
        r = self._residents.pop(scene_id)
        assert r.refcount == 0
        self.evictions += 1
        logger.debug("evicted %s", scene_id[:12])

    def _evict_unreferenced(self, count: int) -> int:
        idle = sorted((r.unreferenced_at, sid) for sid, r in self._residents.items() if r.refcount == 0)
        for _, sid in idle[:count]:
            self._evict(sid)
        return min(count, len(idle))

    def _admit_ready(self) -> None:
        while self._ready:
            if len(self._residents) >= self.capacity and not self._evict_unreferenced(1):
                break
            sid, asset = self._ready.popleft()
            if sid not in self._residents:
                self._admit(sid, asset)

    def _take_ready(self, scene_id: str) -> Optional[SceneAsset]:
        for k, (sid, asset) in enumerate(self._ready):
            if sid == scene_id:
                del self._ready[k]
                return asset
        return None

    def _schedule(self, scene_id: str) -> None:
        self._inflight.append(scene_id)
        if not self._background:
            self._done.put((scene_id, self._safe_load(scene_id)))
            return
        if self._thread is None:
            self._thread = threading.Thread(target=self._loader_loop, name="asset-loader", daemon=True)
            self._thread.start()
        self._requests.put(scene_id)

    def _safe_load(self, scene_id: str) -> object:
        try:
            return self._loader(scene_id)
        except Exception as exc:  # surfaced on the consuming side
            return exc

    def _loader_loop(self) -> None:
        while True:
            sid = self._requests.get()
            if sid is None:
                return
            self._done.put((sid, self._safe_load(sid)))

    def _drain_completions(self, block: bool) -> None:
        while self._inflight:
            try:
                sid, result = self._done.get(block=block)
            except queue.Empty:
                return
            self._inflight.remove(sid)
            if isinstance(result, Exception):
                raise result
            self.loads += 1
            self._ready.append((sid, result))
