"""Wall-clock scaling of proposal-anchored attention vs a dense BEV grid baseline."""
from __future__ import annotations

import csv
import gc
import io
import time
from dataclasses import replace

import numpy as np

from .proformer import (DEFAULT_DIMS, FeatureGrid, KernelConfig, _sca_core, init_queries, init_weights,
                        pillar_heights, refine_step)
from .synthetic import default_cameras

CSV_COLUMNS = ("kind", "size_param", "median_ms", "p10_ms", "p90_ms", "reps")


def bench_config(**overrides) -> KernelConfig:
    base = dict(N=64, T=8, K=1, C=32, heads=4, keys=4, n_ref=4, status_dim=8, hidden=64)
    base.update(overrides)
    return KernelConfig(**base)


def synthetic_features(cfg: KernelConfig, seed: int = 0, views: int = 4, size=(100, 56)) -> FeatureGrid:
    rng = np.random.default_rng(seed)
    cams = default_cameras(views)
    W, H = size
    return FeatureGrid(rng.standard_normal((views, cfg.C, H, W)), cams, stride=8.0)


def _time(fn, reps):
    fn()  # warm-up
    samples = []
    gc_was_on = gc.isenabled()
    gc.disable()  # as timeit does; collections would land on random reps
    try:
        for _ in range(reps):
            t0 = time.perf_counter()
            fn()
            samples.append((time.perf_counter() - t0) * 1e3)
    finally:
        if gc_was_on:
            gc.enable()
    return samples


def dense_grid_sca(side: int, features: FeatureGrid, w, extent: float = 64.0):
    """One cross-attention pass with a query per cell of a ``side x side`` BEV grid."""
    cfg = w.config
    cell = extent / side
    c = (np.arange(side) + 0.5) * cell - 0.5 * extent
    gx, gy = np.meshgrid(c, c)
    z = pillar_heights(cfg.z_range, cfg.n_ref)
    pts = np.stack([np.repeat(gx.ravel()[:, None], len(z), 1),
                    np.repeat(gy.ravel()[:, None], len(z), 1),
                    np.broadcast_to(z, (side * side, len(z)))], -1)
    Q = np.zeros((side * side, cfg.C)) + w["ego_encoder.bias"]
    block = w.block("sca")
    out = np.empty_like(Q)
    chunk = 4096
    for i in range(0, len(Q), chunk):
        out[i:i + chunk] = Q[i:i + chunk] + _sca_core(Q[i:i + chunk], pts[i:i + chunk], features, block)
    return out


def bench_attention(n_sweep=(16, 32, 64, 128, 256), grid_sweep=(32, 64, 128), reps: int = 20,
                    seed: int = 0, cfg: KernelConfig | None = None) -> list[dict]:
    """Median/p10/p90 timings of one refinement iteration vs N and of the dense baseline vs side."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if not n_sweep and not grid_sweep:
        raise ValueError("at least one sweep must be non-empty")
    cfg = cfg or bench_config()
    features = synthetic_features(cfg, seed)
    status = np.zeros(cfg.status_dim)
    rows = []
    for n in n_sweep:
        w = init_weights(replace(cfg, N=int(n)), seed)
        Q0 = init_queries(status, w)
        samples = _time(lambda: refine_step(Q0, w, features, DEFAULT_DIMS), reps)
        rows.append(_row("proformer_iter", n, samples))
    w = init_weights(cfg, seed)
    for side in grid_sweep:
        samples = _time(lambda: dense_grid_sca(int(side), features, w), reps)
        rows.append(_row("dense_grid_sca", side, samples))
    return rows


def _row(kind, size, samples):
    p10, med, p90 = np.percentile(samples, [10, 50, 90])
    return {"kind": kind, "size_param": int(size), "median_ms": float(med), "p10_ms": float(p10),
            "p90_ms": float(p90), "reps": len(samples)}


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({**r, "median_ms": f"{r['median_ms']:.6f}", "p10_ms": f"{r['p10_ms']:.6f}",
                         "p90_ms": f"{r['p90_ms']:.6f}"})
    return buf.getvalue()


def fit_r2(x, y) -> float:
    """R^2 of an ordinary least-squares line ``y = a + b x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.stack([np.ones_like(x), x], 1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = np.sum((y - y.mean()) ** 2)
    return float(1.0 - resid @ resid / ss_tot) if ss_tot > 0 else 1.0
