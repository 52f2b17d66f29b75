"""Scene sets: on-disk manifests, in-memory libraries and the rotation schedule."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import InvalidInputError
from ..scene.asset import SceneAsset
from ..scene.fileio import file_digest, load_scene, save_scene
from ..scene.generate import GeneratorSpec, generate_scene

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


class SceneLibrary:
    """Scene ids plus a loader for each; the loader is what the asset store calls."""

    def __init__(self, loaders: dict[str, Callable[[], SceneAsset]]):
        if not loaders:
            raise InvalidInputError("scene library is empty")
        self._loaders = dict(loaders)

    @property
    def ids(self) -> list[str]:
        return list(self._loaders)

    def __len__(self) -> int:
        return len(self._loaders)

    def __contains__(self, scene_id: str) -> bool:
        return scene_id in self._loaders

    def load(self, scene_id: str) -> SceneAsset:
        try:
            loader = self._loaders[scene_id]
        except KeyError:
            raise InvalidInputError(f"unknown scene {scene_id[:12]}") from None
        return loader()

    def subset(self, ids: Iterable[str]) -> "SceneLibrary":
        return SceneLibrary({sid: self._loaders[sid] for sid in ids})

    @classmethod
    def from_assets(cls, assets: Sequence[SceneAsset]) -> "SceneLibrary":
        return cls({a.id: (lambda a=a: a) for a in assets})

    @classmethod
    def generated(cls, seeds: Sequence[int], spec: GeneratorSpec = GeneratorSpec()) -> "SceneLibrary":
        """Generate every scene once up front (ids are content hashes, so they must be known)."""
        return cls.from_assets([generate_scene(int(s), spec) for s in seeds])

    @classmethod
    def from_manifest(cls, path, split: Optional[str] = None) -> "SceneLibrary":
        """Scenes listed in a manifest file (or directory holding ``manifest.json``)."""
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST
        doc = json.loads(path.read_text())
        base = path.parent
        entries = doc["scenes"]
        if split is not None:
            wanted = set(doc["splits"][split])
            entries = [e for e in entries if e["id"] in wanted]

        def loader(file: Path, expected: str) -> Callable[[], SceneAsset]:
            def load() -> SceneAsset:
                asset = load_scene(file)
                if asset.id != expected:
                    raise InvalidInputError(f"{file}: content hash {asset.id[:12]} != manifest {expected[:12]}")
                return asset
            return load

        return cls({e["id"]: loader(base / e["file"], e["id"]) for e in entries})


def scene_seeds(count: int, seed: int) -> list[int]:
    """Generator seeds for a scene set of ``count`` scenes."""
    return [int(s) for s in np.random.default_rng(seed).integers(0, 2**31 - 1, size=count)]


def split_ids(ids: Sequence[str], val_fraction: float) -> tuple[list[str], list[str]]:
    """(train, val): the last ``round(val_fraction * count)`` scenes are held out."""
    n_val = int(round(val_fraction * len(ids))) if len(ids) > 1 else 0
    return list(ids[:len(ids) - n_val]), list(ids[len(ids) - n_val:])


def generated_split(count: int, seed: int, spec: GeneratorSpec = GeneratorSpec(), val_fraction: float = 0.2,
                    split: Optional[str] = None) -> SceneLibrary:
    """In-memory library with the same scenes and split that :func:`write_scene_set` would write."""
    lib = SceneLibrary.generated(scene_seeds(count, seed), spec)
    if split is None:
        return lib
    train, val = split_ids(lib.ids, val_fraction)
    ids = {"train": train, "val": val}.get(split)
    if ids is None:
        raise InvalidInputError(f"unknown split {split!r}")
    if not ids:
        raise InvalidInputError(f"split {split!r} is empty")
    return lib.subset(ids)


def write_scene_set(out_dir, count: int, seed: int, spec: GeneratorSpec = GeneratorSpec(),
                    val_fraction: float = 0.2) -> dict:
    """Generate ``count`` scenes into ``out_dir`` with a manifest and train/val split files."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise InvalidInputError(f"{out}: {e.strerror}") from None
    scenes = []
    for k, s in enumerate(scene_seeds(count, seed)):
        asset = generate_scene(s, spec)
        name = f"scene_{k:04d}.bsc"
        save_scene(asset, out / name)
        scenes.append({"file": name, "id": asset.id, "seed": s, "sha256": file_digest(out / name)})
    train, val = split_ids([e["id"] for e in scenes], val_fraction)
    doc = {
        "count": count,
        "seed": seed,
        "generator": spec.to_dict(),
        "scenes": scenes,
        "splits": {"train": train, "val": val},
    }
    (out / MANIFEST).write_text(json.dumps(doc, indent=2) + "\n")
    for split, ids in doc["splits"].items():
        (out / f"{split}.json").write_text(json.dumps({"split": split, "scenes": ids}, indent=2) + "\n")
    log.info("wrote %d scenes to %s (%d train, %d val)", count, out, len(train), len(val))
    return doc


@dataclass
class Rotation:
    """Endless, seeded cycle over scene ids; each pass is a fresh permutation."""

    ids: list[str]
    seed: int = 0
    passes: int = 0
    cursor: int = 0
    order: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.order:
            self._reshuffle()

    def _reshuffle(self) -> None:
        rng = np.random.default_rng([self.seed, self.passes])
        self.order = [self.ids[i] for i in rng.permutation(len(self.ids))]
        self.cursor = 0

    def next(self) -> str:
        if self.cursor >= len(self.order):
            self.passes += 1
            self._reshuffle()
        sid = self.order[self.cursor]
        self.cursor += 1
        return sid

    def state(self) -> dict:
        return {"ids": list(self.ids), "seed": self.seed, "passes": self.passes, "cursor": self.cursor,
                "order": list(self.order)}
