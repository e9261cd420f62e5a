"""Attention complexity benchmark.

Runs keypoint-wise (channel-token) attention against full patch attention
and local-window attention on identical volumes, recording the attention
matrix allocation, peak live tensor bytes, and wall time per forward call.
Keypoint-wise attention keeps a D x D matrix regardless of L; patch
attention allocates L x L; window attention scales with L * window^2.
"""

from __future__ import annotations

import time

import numpy as np

from ..encoder import (
    EncoderConfig, LayerParams, PatchAttentionParams, keypoint_attention,
    local_window_attention, patch_full_attention,
)
from ..tensorlab import Tensor, track_allocations

BENCH_SIZES = ((16, 12), (32, 24), (64, 48))
BENCH_WINDOWS = (19, 36)


def _time_call(fn, min_total_s: float = 0.15, max_reps: int = 200) -> int:
    fn()  # warm up
    t0 = time.perf_counter_ns()
    fn()
    est = max(time.perf_counter_ns() - t0, 1_000)
    reps = int(min(max_reps, max(5, min_total_s * 1e9 / est)))
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return int(np.median(samples))


def run_bench(n_joints: int = 15, n_feats: int = 8, heads: int = 1,
              sizes=BENCH_SIZES, windows=BENCH_WINDOWS,
              seed: int = 0) -> list[dict]:
    rows = []
    d = n_joints * n_feats
    rng = np.random.default_rng(seed)
    patch_params = PatchAttentionParams.create(d, rng)
    for hh, ww in sizes:
        L = hh * ww
        cfg = EncoderConfig(n_joints=n_joints, n_feats=n_feats, H=hh, W=ww,
                            n_layers=1, n_heads=heads)
        lp = LayerParams(cfg, rng, "bench", np.float64)
        z_np = rng.random((d, L))
        z = Tensor(z_np)

        def kp():
            keypoint_attention(z, lp, cfg)

        with track_allocations() as tr:
            kp()
        rows.append({"kind": "keypoint", "D": d, "L": L, "window": None,
                     "attn_entries": tr.max_tagged_entries("attn"),
                     "peak_bytes": tr.peak_live_bytes,
                     "wall_ns": _time_call(kp)})

        def full():
            patch_full_attention(z_np, patch_params)

        with track_allocations() as tr:
            full()
        rows.append({"kind": "patch_full", "D": d, "L": L, "window": None,
                     "attn_entries": tr.max_tagged_entries("attn"),
                     "peak_bytes": tr.peak_live_bytes,
                     "wall_ns": _time_call(full)})

        for win in windows:
            def local():
                local_window_attention(z_np, win, (hh, ww), patch_params)

            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                with track_allocations() as tr:
                    local()
                rows.append({"kind": f"patch_local", "D": d, "L": L,
                             "window": win,
                             "attn_entries": sum(tr.tagged_entries["attn"]),
                             "peak_bytes": tr.peak_live_bytes,
                             "wall_ns": _time_call(local)})
    return rows


def fit_scaling_exponent(rows: list[dict], kind: str = "keypoint") -> float:
    """Log-log slope of wall time versus L for one attention kind."""
    pts = sorted((r["L"], r["wall_ns"]) for r in rows if r["kind"] == kind)
    if len(pts) < 2:
        raise ValueError("need at least two sizes to fit a slope")
    ls = np.log([p[0] for p in pts])
    ts = np.log([p[1] for p in pts])
    return float(np.polyfit(ls, ts, 1)[0])


def format_table(rows: list[dict]) -> str:
    header = f"{'kind':<12} {'D':>4} {'L':>6} {'window':>6} " \
             f"{'attn_entries':>13} {'peak_bytes':>12} {'wall_ns':>12}"
    lines = [header, "-" * len(header)]
    for r in rows:
        win = "-" if r["window"] is None else str(r["window"])
        lines.append(f"{r['kind']:<12} {r['D']:>4} {r['L']:>6} {win:>6} "
                     f"{r['attn_entries']:>13} {r['peak_bytes']:>12} "
                     f"{r['wall_ns']:>12}")
    return "\n".join(lines)
