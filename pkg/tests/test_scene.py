from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batchsim.errors import ContractViolation, InvalidSpecError, SaturationError, SceneCorruptError, SceneParseError
from batchsim.scene import (
    AssetStore,
    GeneratorSpec,
    build_adjacency,
    decode_scene,
    encode_scene,
    generate_scene,
    load_scene,
    save_scene,
)
from batchsim.scene.asset import triangle_areas_xz

from oracles import inside_any_triangle


def test_generation_is_deterministic():
    spec = GeneratorSpec(grid=(3, 4))
    a, b = generate_scene(7, spec), generate_scene(7, spec)
    assert a.id == b.id
    assert generate_scene(8, spec).id != a.id


def test_single_room_navmesh_area():
    room = generate_scene(0, GeneratorSpec(grid=(1, 1), cell_size=4.0, wall_thickness=0.1))
    tris = room.navmesh.triangle_corners_xz()
    lo, hi = tris.reshape(-1, 2).min(axis=0) - 0.05, tris.reshape(-1, 2).max(axis=0) + 0.05
    h = 0.01
    xs = np.arange(lo[0] + h / 2, hi[0], h)
    zs = np.arange(lo[1] + h / 2, hi[1], h)
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    inside = inside_any_triangle(tris, np.stack([X.ravel(), Z.ravel()], axis=1))
    area = inside.sum() * h * h
    assert area == pytest.approx((4 - 2 * 0.1) ** 2, rel=0.05)


@pytest.mark.parametrize("seed", range(5))
def test_navmesh_invariants(seed):
    a = generate_scene(seed, GeneratorSpec(grid=(4, 3), wall_removal_prob=0.3))
    a.validate()
    nm = a.navmesh
    assert np.all(triangle_areas_xz(nm.vertices, nm.triangles) > 1e-9)
    for t, row in enumerate(nm.adjacency):
        for e, n in enumerate(row):
            if n >= 0:
                assert t in nm.adjacency[n]
    np.testing.assert_array_equal(build_adjacency(nm.triangles), nm.adjacency)
    assert a.triangles.max() < len(a.vertices)
    lo, hi = a.bounds
    assert np.all(nm.vertices >= lo - 1e-9) and np.all(nm.vertices <= hi + 1e-9)


def test_navmesh_is_connected(maze):
    nm = maze.navmesh
    seen = {0}
    stack = [0]
    while stack:
        t = stack.pop()
        for n in nm.adjacency[t]:
            if n >= 0 and n not in seen:
                seen.add(n)
                stack.append(n)
    # T-junctions between floor pieces are bridged by geodesic queries, not adjacency,
    # so connectivity is checked through geodesic distance instead when adjacency splits
    if len(seen) < nm.num_triangles:
        from batchsim.navsim import NavQuery

        q = NavQuery.of(nm)
        c = nm.vertices[nm.triangles].mean(axis=1)
        assert all(np.isfinite(q.geodesic(c[0], p)) for p in c)


@pytest.mark.parametrize("spec", [
    {"grid": (0, 3)},
    {"cell_size": 0.0},
    {"wall_thickness": 1.5},
    {"wall_removal_prob": 2.0},
])
def test_degenerate_specs_rejected(spec):
    with pytest.raises(InvalidSpecError):
        generate_scene(0, GeneratorSpec.from_dict(spec))


# -- file format --------------------------------------------------------------
def test_round_trip_is_bit_exact(tmp_path, maze):
    path = save_scene(maze, tmp_path / "m.bsc")
    back = load_scene(path)
    assert back.id == maze.id
    np.testing.assert_array_equal(back.vertices, maze.vertices)
    np.testing.assert_array_equal(back.triangles, maze.triangles)
    np.testing.assert_array_equal(back.vertex_colors, maze.vertex_colors)
    np.testing.assert_array_equal(back.navmesh.adjacency, maze.navmesh.adjacency)
    assert encode_scene(back) == encode_scene(maze)


def test_truncated_file_reports_offset(maze):
    data = encode_scene(maze)
    for cut in (3, 20, len(data) // 2, len(data) - 5):
        with pytest.raises(SceneParseError) as info:
            decode_scene(data[:cut])
        assert 0 <= info.value.offset <= len(data)


def test_empty_file_is_a_parse_error(tmp_path):
    (tmp_path / "e.bsc").write_bytes(b"")
    with pytest.raises(SceneParseError):
        load_scene(tmp_path / "e.bsc")


def test_flipped_payload_byte_is_corruption(maze):
    data = bytearray(encode_scene(maze))
    data[len(data) // 2] ^= 0x01
    with pytest.raises((SceneCorruptError, SceneParseError)):
        decode_scene(bytes(data))


# -- asset store ---------------------------------------------------------------
class Loader:
    def __init__(self):
        self.calls = []
        self.assets = {f"s{k}": generate_scene(100 + k, GeneratorSpec(grid=(2, 2))) for k in range(8)}

    def __call__(self, sid):
        self.calls.append(sid)
        return self.assets[sid]


@pytest.fixture(scope="module")
def loader():
    return Loader()


def test_saturation_at_share_cap(loader):
    store = AssetStore(4, loader, share_cap=32, background=False)
    for k in range(4):
        for _ in range(32):
            store.acquire(f"s{k}")
    with pytest.raises(SaturationError):
        store.acquire("s4")
    with pytest.raises(SaturationError):
        store.acquire("s0")
    store.check_invariants()


def test_release_then_rotate_evicts(loader):
    store = AssetStore(2, loader, background=False)
    h0 = store.acquire("s0")
    store.acquire("s1")
    store.release(h0)
    store.rotate(["s2"])
    store.settle()
    assert "s0" not in store.resident_ids
    assert len(store.resident_ids) <= 2
    store.check_invariants()


def test_double_release_is_an_error(loader):
    store = AssetStore(2, loader, background=False)
    h = store.acquire("s0")
    store.release(h)
    with pytest.raises(ContractViolation):
        store.release(h)


def test_steady_state_two_residents(loader):
    store = AssetStore(2, loader, share_cap=32, background=False)
    store.rotate(["s0", "s1"])
    store.settle()
    handles = [store.reassign(None) for _ in range(64)]
    rng = np.random.default_rng(0)
    for step in range(2000):
        i = int(rng.integers(64))
        handles[i] = store.reassign(handles[i])
        if step % 200 == 0:
            store.rotate([f"s{(step // 200 + k) % 8}" for k in range(2)])
            store.settle()
        store.check_invariants()
        assert len(store.resident_ids) == 2
        assert {h.scene_id for h in handles} <= set(store.resident_ids)
    assert max(store.refcounts().values()) <= 32


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 8), st.lists(st.tuples(st.sampled_from("arx"), st.integers(0, 7)),
                                                      max_size=150))
def test_random_schedules_keep_invariants(loader, capacity, cap, ops):
    store = AssetStore(capacity, loader, share_cap=cap, background=False)
    held = []
    for op, k in ops:
        try:
            if op == "a":
                held.append(store.acquire(f"s{k}"))
            elif op == "r" and held:
                store.release(held.pop(k % len(held)))
            elif op == "x":
                store.rotate([f"s{(k + j) % 8}" for j in range(capacity)])
                store.poll()
        except SaturationError:
            pass
        store.check_invariants()


def test_background_loader_completes(loader):
    store = AssetStore(2, loader, background=True)
    try:
        store.rotate(["s5", "s6"])
        store.settle()
        assert set(store.resident_ids) == {"s5", "s6"}
    finally:
        store.close()


def test_snapshot_restore(loader):
    store = AssetStore(2, loader, background=False)
    store.rotate(["s0", "s1"])
    store.settle()
    hs = [store.reassign(None) for _ in range(5)]
    snap = store.snapshot()
    again, handles = AssetStore.restore(snap, loader, [h.scene_id for h in hs], background=False)
    assert again.resident_ids == store.resident_ids
    assert again.refcounts() == store.refcounts()
    again.check_invariants()
