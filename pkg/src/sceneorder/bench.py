"""Inference-cost benchmark: holistic head vs pairwise baseline.

For each instance count the harness measures forward-pass counts, wall
time, and peak live tensor bytes on a fresh synthetic scene. The holistic
model runs exactly one head forward per image; the pairwise baseline runs
one forward per unordered pair, n(n-1)/2 (ordered-pair inference would
double that; we count unordered and say so in the report).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .baselines import PairwiseNet, pairwise_infer_matrices
from .head import HeadConfig
from .synth import SceneConfig, generate_scene, render
from .training import HolisticModel, ModelConfig


@dataclass
class BenchRow:
    n: int
    holistic_forwards: int
    pairwise_forwards: int
    holistic_seconds: float
    pairwise_seconds: float
    holistic_peak_bytes: int
    pairwise_peak_bytes: int


def _best_time(fn, repeats: int) -> float:
    """Minimum wall time over repeats: OS scheduling noise only adds time."""
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(min(times))


def run_bench(n_list=(2, 5, 10, 15, 20), repeats: int = 3, size: int = 64, seed: int = 0) -> list[BenchRow]:
    max_n = max(n_list)
    rng = np.random.default_rng(seed)
    model = HolisticModel(
        rng,
        ModelConfig(num_queries=max(16, max_n + 2), head=HeadConfig(aux_loss=False)),
    )
    pairwise = PairwiseNet(rng, image_size=size)
    rows = []
    for n in n_list:
        cfg = SceneConfig(n_min=n, n_max=n, size=size, bidirectional_rate=0.0, allow_large=True)
        sample = render(generate_scene(seed, cfg))

        def holistic():
            model.predict(sample, decoupled=False)

        def pairwise_run():
            pairwise_infer_matrices(pairwise, sample.image, sample.masks)

        holistic()  # warm caches before timing
        pairwise_run()
        before = model.head.forward_count
        ag.enable_alloc_tracking(True)
        h_time = _best_time(holistic, repeats)
        h_peak = ag.peak_bytes()
        ag.enable_alloc_tracking(False)
        h_forwards = (model.head.forward_count - before) // repeats

        pairwise.forward_count = 0
        ag.enable_alloc_tracking(True)
        p_time = _best_time(pairwise_run, repeats)
        p_peak = ag.peak_bytes()
        ag.enable_alloc_tracking(False)
        p_forwards = pairwise.forward_count // repeats

        rows.append(BenchRow(n, h_forwards, p_forwards, h_time, p_time, h_peak, p_peak))
    return rows


def claims(rows: list[BenchRow]) -> dict:
    """Summary statistics quoted by the acceptance suite."""
    h_times = [r.holistic_seconds for r in rows]
    by_n = {r.n: r for r in rows}
    out = {
        "holistic_forwards_always_one": all(r.holistic_forwards == 1 for r in rows),
        "pairwise_forwards_quadratic": all(r.pairwise_forwards == r.n * (r.n - 1) // 2 for r in rows),
        "holistic_time_ratio": max(h_times) / min(h_times),
    }
    if 5 in by_n and 20 in by_n:
        out["pairwise_growth_5_to_20"] = by_n[20].pairwise_seconds / by_n[5].pairwise_seconds
    return out


def report_text(rows: list[BenchRow]) -> str:
    header = f"{'n':>3} {'holistic fwd':>13} {'pairwise fwd':>13} {'holistic s':>11} {'pairwise s':>11} {'holistic MiB':>13} {'pairwise MiB':>13}"
    lines = [header]
    for r in rows:
        lines.append(
            f"{r.n:>3} {r.holistic_forwards:>13} {r.pairwise_forwards:>13} "
            f"{r.holistic_seconds:>11.4f} {r.pairwise_seconds:>11.4f} "
            f"{r.holistic_peak_bytes / 2**20:>13.2f} {r.pairwise_peak_bytes / 2**20:>13.2f}"
        )
    lines.append("(pairwise counts unordered pairs, n(n-1)/2; times are best-of-repeats)")
    return "\n".join(lines) + "\n"


def report_payload(rows: list[BenchRow]) -> dict:
    return {"rows": [asdict(r) for r in rows], "claims": claims(rows), "pairwise_pairs": "unordered"}


def save_report(path, rows: list[BenchRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_payload(rows), fh, sort_keys=True, indent=1)
        fh.write("\n")
