from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batchsim.errors import ContractViolation, EpisodeSamplingError, InvalidInputError, WorkerError
from batchsim.navsim import (
    FORWARD_STEP,
    TURN_ANGLE,
    Action,
    EnvState,
    EpisodeParams,
    NavQuery,
    SimBatch,
    Task,
    WorkerPool,
    begin_episode,
    geodesic_distance,
    make_envs,
    reset_episode,
    simulate_batch,
    snap_to_navmesh,
    spl,
    step_agent,
    task_step,
)
from batchsim.scene import NavMesh

from conftest import scene
from oracles import GridGeodesic, snap_bruteforce

EAST = -math.pi / 2  # heading whose forward vector is +x


def mesh_from_xz(points, triangles) -> NavMesh:
    verts = np.array([[x, 0.0, z] for x, z in points])
    return NavMesh(verts, np.array(triangles))


def corridor(length=10.0, width=1.0) -> NavMesh:
    return mesh_from_xz([(0, 0), (length, 0), (length, width), (0, width)], [[0, 2, 1], [0, 3, 2]])


def l_shape() -> NavMesh:
    pts = [(0, 0), (3, 0), (4, 0), (0, 1), (3, 1), (4, 1), (3, 4), (4, 4)]
    tris = [[0, 4, 1], [0, 3, 4], [1, 5, 2], [1, 4, 5], [4, 7, 5], [4, 6, 7]]
    return mesh_from_xz(pts, tris)


def env_at(navmesh, start, heading, goal=None, task=Task.POINTGOAL, seed=0):
    env = EnvState(navmesh=navmesh, rng=np.random.default_rng(seed), task=task)
    return begin_episode(env, start, heading, goal if goal is not None else start)


# -- snapping -----------------------------------------------------------------
def test_snap_identity_and_vertical_projection():
    nm = corridor()
    p = np.array([2.0, 0.0, 0.5])
    np.testing.assert_allclose(snap_to_navmesh(nm, p), p, atol=1e-12)
    np.testing.assert_allclose(snap_to_navmesh(nm, [5.0, 1.0, 0.5]), [5.0, 0.0, 0.5], atol=1e-12)


def test_snap_matches_bruteforce(maze):
    rng = np.random.default_rng(1)
    lo, hi = maze.bounds
    nm = maze.navmesh
    pts = rng.uniform(lo - 0.5, hi + 0.5, size=(60, 3))
    got = NavQuery.of(nm).snap(pts)
    for p, g in zip(pts, got):
        ref = snap_bruteforce(nm.vertices, nm.triangles, p)
        assert np.linalg.norm(g - p) == pytest.approx(np.linalg.norm(ref - p), abs=1e-9)


def test_snap_empty_navmesh():
    with pytest.raises(InvalidInputError):
        snap_to_navmesh(NavMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int32)), [0, 0, 0])


# -- kinematics -------------------------------------------------------------------
def test_turn_left_is_ten_degrees():
    env = env_at(corridor(), [5, 0, 0.5], 0.0)
    env, hit = step_agent(env, Action.TURN_LEFT)
    assert env.heading == pytest.approx(math.radians(10))
    assert not hit
    np.testing.assert_array_equal(env.position, [5, 0, 0.5])
    env, _ = step_agent(env, Action.TURN_RIGHT)
    assert env.heading == pytest.approx(0.0, abs=1e-15)


def test_forward_on_open_floor():
    env = env_at(corridor(), [5, 0, 0.5], EAST)
    env, hit = step_agent(env, Action.FORWARD)
    assert not hit
    np.testing.assert_allclose(env.position, [5.25, 0, 0.5], atol=1e-12)
    assert env.path_length == pytest.approx(FORWARD_STEP)


def test_forward_into_wall_stops_at_boundary():
    env = env_at(corridor(), [9.9, 0, 0.5], EAST)
    env, hit = step_agent(env, Action.FORWARD)
    assert hit
    assert env.position[0] == pytest.approx(10.0, abs=1e-6)
    assert env.path_length == pytest.approx(0.10, abs=1e-6)


def test_stepping_a_done_env_is_an_error():
    env = env_at(corridor(), [5, 0, 0.5], 0.0, goal=[6, 0, 0.5])
    task_step(env, Action.STOP)
    with pytest.raises(ContractViolation):
        step_agent(env, Action.FORWARD)


# -- geodesic ---------------------------------------------------------------------
def test_geodesic_identity_and_corridor():
    nm = corridor()
    a, b = np.array([0.5, 0, 0.5]), np.array([9.2, 0, 0.5])
    assert geodesic_distance(nm, a, a) == 0.0
    assert geodesic_distance(nm, a, b) == pytest.approx(8.7, abs=1e-6)


def test_geodesic_l_shape_matches_grid_oracle():
    nm = l_shape()
    a, b = np.array([0.5, 0, 0.5]), np.array([3.5, 0, 3.5])
    oracle = GridGeodesic(nm.triangle_corners_xz())
    ref = oracle.distances(a[[0, 2]][None], b[[0, 2]][None])[0, 0]
    got = geodesic_distance(nm, a, b)
    # exact answer bends around the reflex corner (3, 1)
    exact = math.hypot(2.5, 0.5) + math.hypot(0.5, 2.5)
    assert got == pytest.approx(exact, abs=1e-9)
    assert abs(got - ref) / ref < 0.03


def test_geodesic_on_generated_scene_matches_grid_oracle(small_maze):
    q = NavQuery.of(small_maze.navmesh)
    rng = np.random.default_rng(5)
    pts = np.array([q.sample_point(rng) for _ in range(12)])
    oracle = GridGeodesic(small_maze.navmesh.triangle_corners_xz())
    ref = oracle.distances(pts[:6, [0, 2]], pts[6:, [0, 2]])
    for i in range(6):
        for j in range(6):
            got = q.geodesic(pts[i], pts[6 + j])
            assert abs(got - ref[i, j]) <= 0.03 * ref[i, j] + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_geodesic_metric_properties(seed):
    q = NavQuery.of(scene(3).navmesh)
    rng = np.random.default_rng(seed)
    a, b, c = (q.sample_point(rng) for _ in range(3))
    assert q.geodesic(a, a) == 0.0
    dab = q.geodesic(a, b)
    assert dab == pytest.approx(q.geodesic(b, a), abs=1e-9)
    assert dab >= np.linalg.norm((a - b)[[0, 2]]) - 1e-12
    assert dab <= q.geodesic(a, c) + q.geodesic(c, b) + 1e-6


def test_distance_field_agrees_with_geodesic(maze):
    q = NavQuery.of(maze.navmesh)
    rng = np.random.default_rng(2)
    goal = q.sample_point(rng)
    field = q.field(goal)
    for _ in range(20):
        p = q.sample_point(rng)
        assert field(p) == pytest.approx(q.geodesic(p, goal), abs=1e-9)


# -- episodes ---------------------------------------------------------------------
def test_reset_is_deterministic(maze):
    a = make_envs([maze.navmesh], [42])[0]
    b = make_envs([maze.navmesh], [42])[0]
    np.testing.assert_array_equal(a.start, b.start)
    np.testing.assert_array_equal(a.goal, b.goal)
    assert a.heading == b.heading


def test_reset_sets_geodesics(maze):
    env = make_envs([maze.navmesh], [3])[0]
    geo = geodesic_distance(maze.navmesh, env.start, env.goal)
    assert env.prev_geodesic == env.start_geodesic == pytest.approx(geo, abs=1e-12)


def test_reset_separations_in_range(maze):
    env = make_envs([maze.navmesh], [9])[0]
    q = NavQuery.of(maze.navmesh)
    for _ in range(1000):
        reset_episode(env)
        geo = q.geodesic(env.start, env.goal)
        assert 1.0 <= geo <= 30.0


def test_reset_failure_on_tiny_scene():
    tiny = corridor(0.5, 0.5)
    env = EnvState(navmesh=tiny, rng=np.random.default_rng(0), params=EpisodeParams())
    with pytest.raises(EpisodeSamplingError):
        reset_episode(env)


@pytest.mark.parametrize("offset,success", [(0.15, True), (0.25, False)])
def test_stop_near_goal(offset, success):
    env = env_at(corridor(), [5 - offset, 0, 0.5], 0.0, goal=[5, 0, 0.5])
    r = task_step(env, Action.STOP)
    assert r.done and r.success is success
    assert r.episode["success"] is success


def test_progress_reward():
    env = env_at(corridor(), [2, 0, 0.5], EAST, goal=[5, 0, 0.5])
    r = task_step(env, Action.FORWARD)
    assert r.reward == pytest.approx(0.24, abs=1e-12)
    assert not r.done


def test_episode_times_out():
    env = EnvState(navmesh=corridor(), rng=np.random.default_rng(0), params=EpisodeParams(max_steps=3))
    begin_episode(env, [1, 0, 0.5], 0.0, [8, 0, 0.5])
    results = [task_step(env, Action.TURN_LEFT) for _ in range(3)]
    assert [r.done for r in results] == [False, False, True]
    assert not results[-1].success


def test_flee_and_explore_rewards():
    env = env_at(corridor(), [2, 0, 0.5], EAST, task=Task.FLEE)
    r = task_step(env, Action.FORWARD)
    assert r.reward == pytest.approx(0.25)
    env = env_at(corridor(), [2.1, 0, 0.5], EAST, task=Task.EXPLORE)
    rewards = [task_step(env, Action.FORWARD).reward for _ in range(4)]
    # cells are 0.5m wide: 2.1 -> 2.35 -> 2.6 (new) -> 2.85 -> 3.1 (new)
    assert rewards == pytest.approx([0.0, 0.1, 0.0, 0.1])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.sampled_from([0, 0, 0, 1, 2]), min_size=1, max_size=60))
def test_position_stays_on_mesh_and_rewards_telescope(seed, actions):
    nm = scene(3).navmesh
    q = NavQuery.of(nm)
    env = make_envs([nm], [seed])[0]
    start_geo = env.start_geodesic
    total = 0.0
    last_len = 0.0
    for a in actions + [Action.STOP]:
        r = task_step(env, a)
        total += r.reward
        assert np.linalg.norm(q.snap(env.position[None])[0] - env.position) <= 1e-6
        assert env.path_length >= last_len
        last_len = env.path_length
        if r.done:
            break
    ep = r.episode
    expected = start_geo - ep["final_geodesic"] - 0.01 * ep["steps"] + 2.5 * ep["success"]
    assert total == pytest.approx(expected, abs=1e-9)


# -- batches ----------------------------------------------------------------------
def _batch(n, seed=0):
    nms = [scene(3).navmesh, scene(11, (3, 3)).navmesh]
    envs = make_envs([nms[i % 2] for i in range(n)], [seed * 1000 + i for i in range(n)])
    return SimBatch(envs)


def _trace(batch, steps, pool, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(steps):
        acts = rng.choice(4, size=batch.size, p=[0.55, 0.2, 0.2, 0.05])
        simulate_batch(batch, acts, pool)
        out.append([(r.reward, r.done, r.success, tuple(r.position), r.heading, r.compass_goal) for r in batch.results])
    return out


def test_workers_match_sequential():
    with WorkerPool(4) as pool:
        b = _batch(64)
        par = _trace(b, 20, pool, 1)
        assert np.all(b.writes == 1)
    seq = _trace(_batch(64), 20, None, 1)
    assert par == seq


def test_all_turn_left():
    b = _batch(8)
    before = [(e.position.copy(), e.heading) for e in b.envs]
    simulate_batch(b, [Action.TURN_LEFT] * 8)
    for (p, h), e in zip(before, b.envs):
        np.testing.assert_array_equal(e.position, p)
        assert math.remainder(e.heading - h - TURN_ANGLE, 2 * math.pi) == pytest.approx(0.0, abs=1e-12)


def test_worker_failure_carries_index():
    b = _batch(8)
    acts = [0] * 8
    acts[5] = 9  # not an action
    with WorkerPool(2) as pool:
        with pytest.raises(WorkerError) as info:
            simulate_batch(b, acts, pool)
    assert info.value.env_index == 5


def test_wrong_action_count():
    with pytest.raises(InvalidInputError):
        simulate_batch(_batch(4), [0, 0])


# -- metrics ----------------------------------------------------------------------
def test_spl_examples():
    assert spl([{"success": True, "shortest_path": 3.0, "path_length": 3.0}]) == 1.0
    assert spl([{"success": False, "shortest_path": 3.0, "path_length": 3.0}]) == 0.0
    assert spl([{"success": True, "shortest_path": 3.0, "path_length": 6.0}]) == 0.5
    with pytest.raises(InvalidInputError):
        spl([])
