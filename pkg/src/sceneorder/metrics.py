"""Order-prediction metrics: pairwise precision/recall/F1 and WHDR.

Occlusion metrics compare every off-diagonal entry of the binary order
matrices. WHDR (weighted human disagreement rate) compares unordered-pair
depth relations, weighted by the annotation weights w = 2/count, split
into the {distinct, overlap, all} ground-truth strata.

Per-sample values are macro-averaged over the samples where they are
defined; micro pooling is available as an option.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .orders import OVERLAP, DepthMatrix, OcclusionMatrix, StructuralError

PAIR_NONE = 3  # pair-level code for "no relation annotated/predicted"


@dataclass(frozen=True)
class PrfResult:
    recall: float | None
    precision: float | None
    f1: float | None


def occlusion_prf(pred: OcclusionMatrix, gt: OcclusionMatrix) -> PrfResult:
    if pred.entries.shape != gt.entries.shape:
        raise StructuralError(f"size mismatch: {pred.entries.shape} vs {gt.entries.shape}")
    off = ~np.eye(gt.n, dtype=bool)
    p = pred.entries[off] == 1
    g = gt.entries[off] == 1
    tp = int((p & g).sum())
    recall = tp / g.sum() if g.sum() else None
    precision = tp / p.sum() if p.sum() else None
    if recall is None or precision is None or (precision + recall) == 0:
        f1 = None
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return PrfResult(recall, precision, f1)


def pair_relation(entries: np.ndarray, i: int, j: int) -> int:
    """Unordered-pair depth code: 1 = i front, 0 = j front, 2 = overlap, 3 = none."""
    if entries[i, j] == OVERLAP and entries[j, i] == OVERLAP:
        return OVERLAP
    if entries[i, j] == 1:
        return 1
    if entries[j, i] == 1:
        return 0
    return PAIR_NONE


def whdr_sums(pred: DepthMatrix, gt: DepthMatrix) -> dict[str, tuple[float, float]]:
    """Weighted (disagreement, total) sums per category, keyed on the GT relation."""
    if pred.entries.shape != gt.entries.shape:
        raise StructuralError(f"size mismatch: {pred.entries.shape} vs {gt.entries.shape}")
    sums = {"distinct": [0.0, 0.0], "overlap": [0.0, 0.0], "all": [0.0, 0.0]}
    n = gt.n
    for i in range(n):
        for j in range(i + 1, n):
            g = pair_relation(gt.entries, i, j)
            if g == PAIR_NONE:
                continue
            category = "overlap" if g == OVERLAP else "distinct"
            w = gt.weight(i, j)
            wrong = float(pair_relation(pred.entries, i, j) != g)
            for key in (category, "all"):
                sums[key][0] += w * wrong
                sums[key][1] += w
    return {k: (num, den) for k, (num, den) in sums.items()}


def whdr(pred: DepthMatrix, gt: DepthMatrix) -> dict[str, float | None]:
    """WHDR per {distinct, overlap, all} category, keyed on the GT relation.

    Pairs without a ground-truth relation belong to no category. A missing
    predicted relation disagrees with every annotated one.
    """
    return {k: (num / den if den > 0 else None) for k, (num, den) in whdr_sums(pred, gt).items()}


# ---- aggregation -------------------------------------------------------------


class MetricAccumulator:
    """Collects per-sample metric values; macro by default, micro optional."""

    def __init__(self, aggregate: str = "macro"):
        if aggregate not in ("macro", "micro"):
            raise StructuralError(f"unknown aggregation {aggregate!r}")
        self.aggregate = aggregate
        self._values: dict[str, list[float]] = {}
        self._micro: dict[str, list[float]] = {}
        self.skipped = 0

    def add(self, name: str, value: float | None, weight: float = 1.0) -> None:
        if value is None:
            return
        self._values.setdefault(name, []).append(float(value))
        self._micro.setdefault(name, [0.0, 0.0])
        self._micro[name][0] += float(value) * weight
        self._micro[name][1] += weight

    def result(self) -> dict[str, dict[str, float]]:
        out = {}
        for name, values in sorted(self._values.items()):
            if self.aggregate == "macro":
                agg = float(np.mean(values))
            else:
                num, den = self._micro[name]
                agg = num / den if den else float("nan")
            out[name] = {"value": agg, "samples": len(values)}
        return out


def report_json(result: dict, extra: dict | None = None) -> str:
    payload = {"metrics": result}
    if extra:
        payload.update(extra)
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def report_table(result: dict) -> str:
    if not result:
        return "(no metrics)\n"
    name_w = max(len(k) for k in result) + 2
    lines = [f"{'metric'.ljust(name_w)}{'value':>10}  {'samples':>8}"]
    for name, entry in result.items():
        lines.append(f"{name.ljust(name_w)}{entry['value']:>10.4f}  {entry['samples']:>8d}")
    return "\n".join(lines) + "\n"
