"""Acceptance suite: one test and one PASS/FAIL line per headline criterion.

Run with ``pytest tests/test_acceptance.py`` (the summary lines appear at the
end of the run) or ``python tests/test_acceptance.py``.
"""
import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from proposal_scorer.bench import bench_attention, fit_r2
from proposal_scorer.cli import main as cli_main
from proposal_scorer.config import ComfortThresholds, SimConfig
from proposal_scorer.geometry import OrientedBox, boxes_intersect, points_in_polygon
from proposal_scorer.losses import LossWeights, bce, map_loss, mon_proposal_loss, pred_loss, total_loss
from proposal_scorer.metrics import SubMetrics, comfort_metric, comfort_violations, pdm_score, score_proposals
from proposal_scorer.proformer import (bilinear_sample_many, deform_attn, score_head, self_attn_step,
                                       spatial_cross_attn)
from proposal_scorer.labels import PredictionTargets
from proposal_scorer.scene import VehicleDims, load_scene, wrap_angle
from proposal_scorer.simulator import EgoKinState, bicycle_step, kinematic_profile, lqr_track

from acceptance_log import record
from comfort_fixtures import CONSTRUCTIONS, channel_peaks, threshold_cases
from kernel_fixtures import SMALL_DIMS, small_instance
from oracles import (bicycle_rk4, bilinear_oracle, box_separation, boxes_overlap_by_sampling, cross_attn_oracle,
                     deform_oracle, distance_to_boundary, pdms_fraction, score_head_oracle, self_attn_oracle,
                     winding_number)
from sim_fixtures import feasible_reference, open_scene, rigid

N_SCENES = 50


# ---------------------------------------------------------------- shared 50-scene fixture

def off_road_variants(expert, reach=40.0):
    """Expert plan pushed sideways, growing linearly to ``reach`` metres at the last step."""
    out = []
    frac = np.arange(1, len(expert) + 1) / len(expert)
    normal = np.stack([-np.sin(expert[:, 2]), np.cos(expert[:, 2])], 1)
    for side in (1.0, -1.0):
        p = expert.copy()
        p[:, :2] += side * reach * frac[:, None] * normal
        out.append(p)
    return out


@pytest.fixture(scope="module")
def scene_fixture(tmp_path_factory):
    """50 generated scenes and per-scene proposal files ``[expert, off-road left, off-road right]``."""
    t0 = time.perf_counter()
    root = tmp_path_factory.mktemp("acceptance")
    scenes, props = root / "scenes", root / "proposals"
    assert cli_main(["gen", "--seed", "0", "--count", str(N_SCENES), "--out", str(scenes)]) == 0
    props.mkdir()
    for path in sorted(scenes.glob("*.json")):
        expert = np.asarray(load_scene(path).expert, dtype=float)
        (props / path.name).write_text(json.dumps([expert.tolist()] + [p.tolist() for p in off_road_variants(expert)]))
    return scenes, props, time.perf_counter() - t0


# ---------------------------------------------------------------- 1. aggregate score formula

def test_pdm_score_exactness():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = Fraction(0)
    for _ in range(200):
        nc = float(rng.choice([0.0, 0.5, 1.0]))
        dac, ttc, comf = (float(rng.integers(0, 2)) for _ in range(3))
        ep = float(rng.uniform(0, 1))
        got = pdm_score(SubMetrics(nc, dac, ttc, comf, ep))
        worst = max(worst, abs(Fraction(got) - pdms_fraction(nc, dac, ep, ttc, comf)))
    elapsed = time.perf_counter() - t0
    ok = record("aggregate score exactness", [("200 cases vs rational arithmetic", worst < Fraction(1, 10 ** 15),
                                                f"max abs err {float(worst):.2e} < 1e-15")], elapsed, 1.0)
    assert ok


# ---------------------------------------------------------------- 2. comfort thresholds

def test_comfort_threshold_fidelity():
    th = ComfortThresholds()
    t0 = time.perf_counter()
    cases = threshold_cases(rel=0.02, th=th)
    build = time.perf_counter() - t0
    checks, notes = [], []
    for ch, (over, under, analytic) in cases.items():
        thr = getattr(th, ch)
        flags = comfort_violations(over, th)
        only_one = [k for k, v in flags.items() if v] == [ch]
        c_over, c_under = comfort_metric(over, th), comfort_metric(under, th)
        measured = channel_peaks(kinematic_profile(over))[ch]
        checks.append((f"{ch} thr {thr}", c_over == 0.0 and c_under == 1.0 and only_one,
                       f"+2% comfort={c_over:g} only-this-channel={only_one}, -2% comfort={c_under:g}"))
        notes.append(f"{ch}: measured {measured:.4f} analytic {analytic:.4f}")
    elapsed = time.perf_counter() - t0
    print("comfort peaks at +2% (finite-difference profile vs continuous signal): " + "; ".join(notes))
    print(f"comfort rollout construction {build:.2f}s")
    assert record("comfort threshold fidelity", checks, elapsed, 5.0)


# ---------------------------------------------------------------- 3. geometry oracles

def random_box(rng):
    return (float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3)), float(rng.uniform(-math.pi, math.pi)),
            float(rng.uniform(0.5, 5.0)), float(rng.uniform(0.5, 3.0)))


def star_polygon(rng, n):
    ang = np.sort(rng.uniform(0, 2 * math.pi, n))
    r = rng.uniform(0.3, 2.0, n)
    return np.stack([r * np.cos(ang), r * np.sin(ang)], 1)


def test_geometry_oracles():
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    box_bad = box_checked = 0
    for _ in range(1000):
        a, b = random_box(rng), random_box(rng)
        if abs(box_separation(a, b)) <= 1e-6:
            continue
        box_checked += 1
        box_bad += boxes_intersect(OrientedBox(*a), OrientedBox(*b)) != boxes_overlap_by_sampling(a, b, n=500)

    pip_bad = pip_checked = 0
    for _ in range(100):
        poly = star_polygon(rng, int(rng.integers(3, 14)))
        pts = rng.uniform(-2.2, 2.2, (100, 2))
        got = points_in_polygon(pts, poly)
        for p, g in zip(pts, got):
            if distance_to_boundary(p, poly) <= 1e-9:
                continue
            pip_checked += 1
            pip_bad += bool(g) != (winding_number(p, poly) != 0)

    view = rng.standard_normal((3, 9, 13))
    pts = rng.uniform(-1.0, 14.0, (1000, 2))
    got = bilinear_sample_many(view, pts)
    bil_err = max(float(np.max(np.abs(got[:, i] - bilinear_oracle(view, u, v)))) for i, (u, v) in enumerate(pts))
    elapsed = time.perf_counter() - t0
    assert record("geometry oracles", [
        ("box intersection vs 500x500 sampling", box_bad == 0, f"{box_bad} disagreements in {box_checked} pairs"),
        ("point in polygon vs winding number", pip_bad == 0, f"{pip_bad} disagreements in {pip_checked} points"),
        ("bilinear sample vs 4-neighbour oracle", bil_err < 1e-12, f"max err {bil_err:.1e} on 1000 points"),
    ], elapsed, 30.0)


# ---------------------------------------------------------------- 4. simulator fidelity

def test_simulator_fidelity():
    cfg = SimConfig()
    rng = np.random.default_rng(100)
    t0 = time.perf_counter()
    worst_pos = worst_head = 0.0
    for _ in range(100):
        scene, ref = feasible_reference(rng)
        r = lqr_track(ref, scene, cfg)
        worst_pos = max(worst_pos, math.hypot(*(r.poses[-1, :2] - ref[-1, :2])))
        worst_head = max(worst_head, abs(wrap_angle(r.poses[-1, 2] - ref[-1, 2])))

    dims = VehicleDims(4.6, 1.9, 3.0)
    s = EgoKinState(0.0, 0.0, 0.0, 5.0)
    for _ in range(100):
        s = bicycle_step(s, 0.0, 0.1, 0.01, dims)
    z = bicycle_rk4(0.0, 0.0, 0.0, 5.0, 0.0, 0.1, 3.0, 0.01, 100)
    euler_err = math.hypot(s.x - z[0], s.y - z[1])

    equi = 0.0
    for _ in range(10):
        scene, ref = feasible_reference(rng)
        phi, tx, ty = rng.uniform(-math.pi, math.pi), *rng.uniform(-100, 100, 2)
        base = lqr_track(ref, scene, cfg)
        moved_scene = open_scene(scene.ego_velocity, pose=tuple(rigid(scene.ego_pose.as_array(), phi, tx, ty)))
        moved = lqr_track(rigid(ref, phi, tx, ty), moved_scene, cfg)
        expect = rigid(base.poses, phi, tx, ty)
        equi = max(equi, float(np.max(np.abs(moved.poses[:, :2] - expect[:, :2]))),
                   float(np.max(np.abs(wrap_angle(moved.poses[:, 2] - expect[:, 2])))))
    elapsed = time.perf_counter() - t0
    assert record("simulator fidelity", [
        ("tracking 100 feasible references", worst_pos < 0.2 and worst_head < 0.05,
         f"worst terminal error {worst_pos:.4f} m < 0.2, {worst_head:.4f} rad < 0.05"),
        ("forward Euler vs RK4, 1 s at dt=0.01", euler_err < 1e-3, f"position gap {euler_err:.3e} m, limit 1e-3"),
        ("rigid equivariance", equi < 1e-9, f"max deviation {equi:.1e}"),
    ], elapsed, 60.0)


# ---------------------------------------------------------------- 5. kernel oracles

def test_kernel_oracles():
    t0 = time.perf_counter()
    errs = {"deform_attn": 0.0, "self_attn_step": 0.0, "spatial_cross_attn": 0.0, "score_head": 0.0}
    norm = 0.0
    for seed in range(50):
        cfg, w, Q, P, feats = small_instance(1000 + seed)
        rng = np.random.default_rng(seed)
        q = Q[rng.integers(cfg.N), rng.integers(cfg.T)]
        p = rng.uniform(-1.0, 12.0, 2)
        view = feats.views[int(rng.integers(2))]
        errs["deform_attn"] = max(errs["deform_attn"], float(np.max(np.abs(
            deform_attn(q, p, view, w.block("sca")) - deform_oracle(q, [p], view, w.tensors, "sca")))))
        errs["self_attn_step"] = max(errs["self_attn_step"], float(np.max(np.abs(
            self_attn_step(Q, P, w) - self_attn_oracle(Q, P, w)))))
        errs["spatial_cross_attn"] = max(errs["spatial_cross_attn"], float(np.max(np.abs(
            spatial_cross_attn(Q, P, feats, SMALL_DIMS, w) - cross_attn_oracle(Q, P, feats, SMALL_DIMS, w)))))
        errs["score_head"] = max(errs["score_head"], float(np.max(np.abs(
            score_head(Q, w) - score_head_oracle(Q, w.tensors)))))
        for blk in ("sa", "sca"):
            _, A = w.block(blk).sampling(Q)
            norm = max(norm, float(np.max(np.abs(A.sum(-1) - 1.0))))
    elapsed = time.perf_counter() - t0
    checks = [(f"{k} vs brute force", v < 1e-9, f"max err {v:.1e} on 50 instances") for k, v in errs.items()]
    checks.append(("attention weights sum to one", norm < 1e-6, f"max |sum - 1| {norm:.1e}"))
    assert record("kernel oracle equivalence", checks, elapsed, 30.0)


# ---------------------------------------------------------------- 6. complexity

@pytest.mark.slow
def test_complexity_scaling():
    n_sweep, grid_sweep = (16, 32, 64, 128, 256), (32, 64, 128)
    t0 = time.perf_counter()
    rows = bench_attention(n_sweep, grid_sweep, reps=20)
    elapsed = time.perf_counter() - t0
    it = [r["median_ms"] for r in rows if r["kind"] == "proformer_iter"]
    dense = [r["median_ms"] for r in rows if r["kind"] == "dense_grid_sca"]
    r2_lin = fit_r2(n_sweep, it)
    r2_quad = fit_r2(np.square(grid_sweep), dense)
    print("iteration ms vs N: " + ", ".join(f"{n}:{m:.2f}" for n, m in zip(n_sweep, it)))
    print("dense grid ms vs side: " + ", ".join(f"{s}:{m:.2f}" for s, m in zip(grid_sweep, dense)))
    assert record("complexity scaling", [
        ("iteration time linear in N", r2_lin > 0.98, f"R^2 {r2_lin:.4f} > 0.98"),
        ("dense grid time quadratic in side", r2_quad > 0.98, f"R^2 vs side^2 {r2_quad:.4f} > 0.98"),
    ], elapsed, 300.0)


# ---------------------------------------------------------------- 7. end to end

def test_end_to_end_pipeline(scene_fixture):
    scenes, props, gen_time = scene_fixture
    t0 = time.perf_counter()
    expert_bad, off_bad, n_off, min_ep = [], [], 0, 1.0
    for path in sorted(scenes.glob("*.json")):
        scene = load_scene(path)
        proposals = np.asarray(json.loads((props / path.name).read_text()))
        cards = score_proposals(proposals, scene)
        s = cards[0].sub
        min_ep = min(min_ep, s.ep)
        if not (s.nc == s.dac == s.comfort == 1.0 and s.ep >= 0.95):
            expert_bad.append(path.name)
        for c in cards[1:]:
            n_off += 1
            if not (c.sub.dac == 0.0 and c.pdms == 0.0):
                off_bad.append(path.name)
    elapsed = time.perf_counter() - t0 + gen_time
    assert record("end-to-end pipeline", [
        ("expert as proposal", not expert_bad,
         f"{N_SCENES - len(expert_bad)}/{N_SCENES} rows NC=DAC=Comfort=1 and EP>=0.95, min EP {min_ep:.4f}"),
        ("off-road perturbations", not off_bad, f"{n_off - len(off_bad)}/{n_off} cases DAC=0 and PDMS=0"),
    ], elapsed, 120.0)


# ---------------------------------------------------------------- 8. losses

def test_loss_reference():
    t0 = time.perf_counter()
    expert = np.stack([np.arange(1, 9) * 2.0, np.zeros(8), np.zeros(8)], 1)
    P = np.repeat(expert[None, None], 2, 0).repeat(2, 1)
    P[0, 0, 0, 0] += 2.0
    P[0, 1, 0, 0] += 5.0
    P[1, 0, 0, 0] += 4.0
    P[1, 1, 0, 0] -= 3.0
    discount = mon_proposal_loss(P, expert, LossWeights().lambda_discount)
    total = total_loss(1.0, 1.0, 1.0, 1.0, LossWeights())

    rng = np.random.default_rng(0)
    labels = rng.random((4, 8, 2)) < 0.5
    valid = rng.random((4, 8, 2)) < 0.3
    corners = rng.normal(size=(4, 8, 2, 4, 2)) * valid[..., None, None]
    tg = PredictionTargets(corners, valid)
    perfect = max(map_loss(labels.astype(float), labels), pred_loss(corners, valid.astype(float), tg),
                  bce(np.array([1.0, 0.0]), np.array([1.0, 0.0])))
    elapsed = time.perf_counter() - t0
    assert record("loss reference", [
        ("discounted proposal loss example", abs(discount - 3.2) < 1e-12, f"{discount!r} vs 3.2"),
        ("weighted total on unit parts", total == 5.0, f"{total!r} vs 5"),
        ("perfect-prediction losses", perfect < 1e-6, f"max {perfect:.1e} < 1e-6"),
    ], elapsed, 1.0)


# ---------------------------------------------------------------- 9. determinism

def test_score_determinism_across_jobs(scene_fixture, tmp_path):
    scenes, props, _ = scene_fixture
    t0 = time.perf_counter()
    outputs = {}
    for jobs in (1, 4, 8):
        out = tmp_path / f"jobs{jobs}"
        assert cli_main(["score", "--scenes", str(scenes), "--proposals", str(props), "--jobs", str(jobs),
                         "--out", str(out)]) == 0
        outputs[jobs] = ((out / "scores.csv").read_bytes(), (out / "summary.json").read_bytes())
    elapsed = time.perf_counter() - t0
    rows = outputs[1][0].count(b"\n") - 1
    same = outputs[1] == outputs[4] == outputs[8]
    assert record("score determinism", [("--jobs 1, 4, 8", same, f"byte-identical CSV and summary, {rows} rows")],
                  elapsed, None)


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
