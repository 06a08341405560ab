from __future__ import annotations

import json

from sceneorder.bench import claims, report_payload, report_text, run_bench, save_report


def test_bench_counts_and_report(tmp_path):
    rows = run_bench(n_list=(2, 5), repeats=1, seed=0)
    assert [r.n for r in rows] == [2, 5]
    for r in rows:
        assert r.holistic_forwards == 1
        assert r.pairwise_forwards == r.n * (r.n - 1) // 2
        assert r.holistic_seconds > 0 and r.pairwise_seconds > 0
        assert r.holistic_peak_bytes > 0 and r.pairwise_peak_bytes > 0
    summary = claims(rows)
    assert summary["holistic_forwards_always_one"]
    assert summary["pairwise_forwards_quadratic"]
    text = report_text(rows)
    assert "unordered" in text
    save_report(tmp_path / "bench.json", rows)
    payload = json.loads((tmp_path / "bench.json").read_text())
    assert payload["claims"]["pairwise_forwards_quadratic"]
    assert payload == report_payload(rows)
