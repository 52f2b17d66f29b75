"""Scene assets: data model, procedural generation, file format and the resident store."""

from .asset import NavMesh, SceneAsset, build_adjacency, content_hash
from .fileio import decode_scene, encode_scene, load_scene, save_scene
from .generate import GeneratorSpec, generate_scene
from .store import AssetHandle, AssetStore

__all__ = [
    "AssetHandle",
    "AssetStore",
    "GeneratorSpec",
    "NavMesh",
    "SceneAsset",
    "build_adjacency",
    "content_hash",
    "decode_scene",
    "encode_scene",
    "generate_scene",
    "load_scene",
    "save_scene",
]
