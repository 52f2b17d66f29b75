"""Acceptance criteria, one test each.

Every test records a PASS / FAIL / NOT RUN line that is printed in the
terminal summary. The desk-scale learning run takes many hours and only runs
when ``BATCHSIM_RUN_LEARNING=1``.
"""

from __future__ import annotations

import functools
import math
import os
import statistics
import time

import numpy as np
import pytest

from batchsim.navsim import NavQuery, SimBatch, WorkerPool, make_envs, simulate_batch
from batchsim.nn import Policy, PolicyConfig, no_grad
from batchsim.render import RenderConfig, camera_trace, render_batch, render_bench
from batchsim.rollout import BatchConfig, SceneLibrary, fps_benchmark
from batchsim.scene import AssetStore, GeneratorSpec, generate_scene
from batchsim.train import LambHyper, LambStats, OptimizerState, TrainConfig, gae, lamb_step, lr_schedule, scale_lr

from conftest import record, scene
from oracles import GridGeodesic, adamw_reference, gae_bruteforce, lamb_reference
from test_nn import _inputs, policy_gradient_errors
from test_render import random_views

LEARNING_ENV = "BATCHSIM_RUN_LEARNING"


def criterion(number: int, title: str):
    """Record the outcome of the wrapped test under ``number``."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except pytest.skip.Exception as e:
                record(number, title, "NOT RUN", str(e))
                raise
            except BaseException as e:
                record(number, title, "FAIL", str(e).splitlines()[0][:160] if str(e) else type(e).__name__)
                raise
            record(number, title, "PASS", detail or "")

        return run

    return wrap


@criterion(1, "Lamb step matches the scalar reference")
def test_01_lamb_oracle():
    rng = np.random.default_rng(101)
    hyper = LambHyper()
    capped = clipped = 0
    t0 = time.perf_counter()
    for _ in range(1000):
        size = int(rng.integers(1, 9))
        theta = rng.normal(size=size) * 10 ** rng.uniform(-4, 2.5)
        g = rng.normal(size=size) * 10 ** rng.uniform(-3, 1)
        m = rng.normal(size=size) * 0.1
        v = np.abs(rng.normal(size=size)) * 0.1
        step = int(rng.integers(0, 50))
        lr = 10 ** rng.uniform(-4, -1)
        ref, mref, vref, _ = lamb_reference(theta.tolist(), g.tolist(), m.tolist(), v.tolist(), step + 1, lr)
        state = OptimizerState([m.copy()], [v.copy()], step)
        stats = LambStats()
        out = lamb_step([theta], [g], state, lr, hyper, stats=stats)
        np.testing.assert_allclose(out[0], ref, rtol=0, atol=1e-12)
        np.testing.assert_allclose(state.m[0], mref, rtol=0, atol=1e-12)
        np.testing.assert_allclose(state.v[0], vref, rtol=0, atol=1e-12)
        capped += stats.phi_capped
        clipped += stats.rho_clipped
    elapsed = time.perf_counter() - t0
    assert capped >= 50 and clipped >= 50, f"branch coverage: phi cap {capped}, rho clip {clipped}"
    assert elapsed < 10.0, f"{elapsed:.1f}s"
    return f"phi cap {capped}x, rho clip {clipped}x, {elapsed:.2f}s"


@criterion(2, "rho = 1 reduces Lamb to AdamW over 1000 steps")
def test_02_rho_one_is_adamw():
    rng = np.random.default_rng(102)
    theta = rng.normal(size=16)
    ref, m, v = theta.tolist(), [0.0] * 16, [0.0] * 16
    state = OptimizerState.zeros_like([theta])
    worst = 0.0
    for t in range(1, 1001):
        g = rng.normal(size=16)
        theta = lamb_step([theta], [g], state, 1e-3, LambHyper(rho=1.0))[0]
        ref, m, v = adamw_reference(ref, g.tolist(), m, v, t, 1e-3)
        worst = max(worst, float(np.max(np.abs(theta - ref))))
    assert worst <= 1e-12, worst
    return f"max deviation {worst:.1e}"


@criterion(3, "GAE matches the brute-force sum")
def test_03_gae_oracle():
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(1000):
        length = int(rng.integers(1, 33))
        r = rng.normal(size=(1, length))
        v = rng.normal(size=(1, length + 1))
        d = rng.random((1, length)) < rng.uniform(0, 0.3)
        gamma, lam = rng.uniform(0.8, 1.0), rng.uniform(0.0, 1.0)
        adv, ret = gae(r, v, d, gamma, lam)
        ref_adv, ref_ret = gae_bruteforce(r, v, d, gamma, lam)
        worst = max(worst, float(np.max(np.abs(adv - ref_adv))), float(np.max(np.abs(ret - ref_ret))))
    assert worst <= 1e-10, worst
    return f"max deviation {worst:.1e}"


@criterion(4, "Policy loss gradients match central differences")
def test_04_gradient_check():
    worst = max(max(policy_gradient_errors(seed, per_type=10)) for seed in range(10))
    assert worst < 1e-4, f"max relative error {worst:.2e}"
    return f"max relative error {worst:.1e}"


@criterion(5, "Fresh network equals its residual-ablated version")
def test_05_fixup_identity():
    for seed in range(3):
        policy = Policy(PolicyConfig(), seed=seed)
        rng = np.random.default_rng(seed)
        obs, compass = _inputs(rng, 2, 4, policy.config)
        with no_grad():
            full = policy(obs, compass, policy.initial_state(4))
            ablated = policy(obs, compass, policy.initial_state(4), ablate=True)
        np.testing.assert_array_equal(full.logits.data, ablated.logits.data)
        np.testing.assert_array_equal(full.value.data, ablated.value.data)


@criterion(6, "Culling does not change the megaframe")
def test_06_culling_invariance():
    rng = np.random.default_rng(106)
    culled = 0
    for _ in range(100):
        view = random_views(rng, 1)
        on = render_batch(view, RenderConfig(culling=True, color=True))
        off = render_batch(view, RenderConfig(culling=False, color=True))
        np.testing.assert_array_equal(on.depth, off.depth)
        np.testing.assert_array_equal(on.color, off.color)
        culled += on.cull_stats.triangles_culled
    return f"{culled} triangles culled across 100 views"


@criterion(7, "simulate_batch is identical for 1 and many workers")
def test_07_worker_equivalence():
    rng = np.random.default_rng(107)
    meshes = [scene(s, (3, 3)).navmesh for s in range(4)]
    workers = max(4, os.cpu_count() or 1)
    with WorkerPool(1) as one, WorkerPool(workers) as many:
        for b in range(100):
            n = int(rng.integers(1, 257))
            seeds = [int(s) for s in rng.integers(0, 2**31, n)]
            which = rng.integers(0, len(meshes), n)
            steps = rng.integers(0, 4, size=(3, n))
            traces = []
            for pool in (one, many):
                batch = SimBatch(make_envs([meshes[k] for k in which], seeds))
                trace = []
                for acts in steps:
                    simulate_batch(batch, acts, pool)
                    trace.append([(r.reward, r.done, r.success, r.position.tobytes(), r.heading, r.compass_goal,
                                   r.collision) for r in batch.results])
                    assert np.all(batch.writes == 1)
                traces.append(trace)
            assert traces[0] == traces[1], f"batch {b} differs"
    return f"1 vs {workers} workers"


@criterion(8, "Geodesic distance within 3% of the grid oracle")
def test_08_geodesic_accuracy():
    worst = 0.0
    for s in range(10):
        asset = scene(200 + s, (4, 4))
        q = NavQuery.of(asset.navmesh)
        rng = np.random.default_rng(s)
        a = np.array([q.sample_point(rng) for _ in range(200)])
        b = np.array([q.sample_point(rng) for _ in range(200)])
        tris = asset.navmesh.triangle_corners_xz()
        ref = GridGeodesic(tris).pair_distances(a[:, [0, 2]], b[:, [0, 2]], tris)
        got = np.array([q.geodesic(x, y) for x, y in zip(a, b)])
        err = np.abs(got - ref) / ref
        worst = max(worst, float(err.max()))
        bad = int(np.argmax(err))
        assert err[bad] <= 0.03, f"scene {s} pair {bad}: {got[bad]:.4f} vs oracle {ref[bad]:.4f}"
        # metric properties on the sampled points
        for i in range(0, 200, 4):
            x, y, z = a[i], b[i], a[i + 1]
            dxy = q.geodesic(x, y)
            assert abs(dxy - q.geodesic(y, x)) <= 1e-6
            assert dxy <= q.geodesic(x, z) + q.geodesic(z, y) + 1e-6
    return f"worst relative error {100 * worst:.2f}%"


@criterion(9, "Renderer: N=256 throughput at least 2x N=1 at 64x64")
def test_09_render_batching_speedup():
    t0 = time.perf_counter()
    asset = scene(3)
    trace = camera_trace(asset, 1000, seed=9)
    ratios = []
    for _ in range(3):
        rows = render_bench(asset, trace, batch_sizes=(1, 256), resolutions=(64,), min_frames=1000)
        ratios.append(rows[1].fps / rows[0].fps)
    ratio = statistics.median(ratios)
    elapsed = time.perf_counter() - t0
    assert elapsed < 300, f"{elapsed:.0f}s"
    assert ratio >= 2.0, f"median speedup {ratio:.2f}x"
    return f"median speedup {ratio:.2f}x on {os.cpu_count()} core(s)"


@criterion(10, "Desk-scale learning reaches Success 0.9 / SPL 0.6")
def test_10_desk_scale_learning(tmp_path):
    if os.environ.get(LEARNING_ENV) != "1":
        pytest.skip(f"set {LEARNING_ENV}=1 to run (hours per seed)")
    from batchsim.rollout import PolicyAgent, TrainRun, episode_set, evaluate, generated_split, train_run

    spec = GeneratorSpec()
    train_lib = generated_split(20, 10, spec, val_fraction=0.2, split="train")
    held_out = generated_split(20, 10, spec, val_fraction=0.2, split="val")
    assert len(train_lib) == 16 and len(held_out) == 4
    batch = BatchConfig(num_envs=64, num_scenes=4, rollout_length=32, max_goal_distance=8.0)
    passed, lines = 0, []
    for seed in range(3):
        run = TrainRun(batch=batch, total_frames=2_000_000, seed=seed, out_dir=str(tmp_path / f"seed{seed}"))
        policy = train_run(run, train_lib)["policy"]
        eps = episode_set(held_out, 25, seed=100 + seed, params=batch.episode_params())
        result = evaluate(PolicyAgent(policy), held_out, eps, params=batch.episode_params())
        ok = result["success"] >= 0.9 and result["spl"] >= 0.6
        passed += ok
        lines.append(f"seed {seed}: success {result['success']:.2f} spl {result['spl']:.2f}")
    assert passed >= 2, "; ".join(lines)
    return "; ".join(lines)


@criterion(11, "Learning-rate scaling arithmetic")
def test_11_lr_arithmetic():
    b = 1024 * 32 // 2
    assert b == 16384
    factor = scale_lr(1.0, b)
    assert factor == 8.0
    lr = scale_lr(5e-4, b)
    assert lr == pytest.approx(4e-3, rel=1e-15, abs=0)
    assert lr_schedule(lr, 5e-4, 0.0) == lr
    assert lr_schedule(lr, 5e-4, 0.5) == 5e-4
    assert lr_schedule(lr, 5e-4, 1.0) == 5e-4


@criterion(12, "Store residency and share-cap invariants under stress")
def test_12_store_stress():
    assets = {f"s{k}": generate_scene(300 + k, GeneratorSpec(grid=(2, 2))) for k in range(12)}
    store = AssetStore(4, assets.__getitem__, share_cap=32, background=True)
    rng = np.random.default_rng(112)
    try:
        store.rotate(["s0", "s1", "s2", "s3"])
        store.settle()
        handles = [store.reassign(None) for _ in range(128)]
        peak_res = peak_ref = 0
        for episode in range(10_000):
            i = int(rng.integers(len(handles)))
            handles[i] = store.reassign(handles[i])
            if episode % 97 == 0 and not store.pending:
                keep = store.resident_ids
                keep.pop(int(rng.integers(len(keep))))
                fresh = [s for s in assets if s not in keep]
                store.rotate(keep + [fresh[int(rng.integers(len(fresh)))]])
            store.poll()
            store.check_invariants()
            peak_res = max(peak_res, len(store.resident_ids))
            peak_ref = max(peak_ref, max(store.refcounts().values()))
            assert peak_res <= 4 and peak_ref <= 32
    finally:
        store.close()
    return f"peak residents {peak_res}, peak refcount {peak_ref}"


@criterion(13, "fps_benchmark breakdown covers the wall clock")
def test_13_breakdown_accounting():
    lib = SceneLibrary.generated(range(6), GeneratorSpec())
    report = fps_benchmark(BatchConfig(num_envs=16, num_scenes=4, rollout_length=8), lib, PolicyConfig(),
                           TrainConfig(), inference_batches=16)
    assert set(report["breakdown_us"]) == {"sim+render", "inference", "learning"}
    per_frame = sum(report["breakdown_us"].values())
    assert per_frame >= 0.9 * report["wall_us_per_frame"]
    return f"{100 * per_frame / report['wall_us_per_frame']:.1f}% of wall time accounted"
