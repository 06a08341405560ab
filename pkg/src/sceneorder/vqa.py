"""Annotation-to-VQA conversion: one yes/no question per ordered pair.

Question template, verbatim (note the space before the question mark):

    Is the {A} {REL} the {B} ? Answer the question in a single word.

REL is "obstructing" for occlusion and "closer to us than" for depth.
When an operand's category occurs more than once in the scene, its
normalized bounding-box 4-tuple [a_w, a_h, b_w, b_h] is appended to
disambiguate; unambiguous operands stay bare. Answers map matrix entry 1
to "yes" and everything else to "no".
"""

from __future__ import annotations

import json
from collections import Counter

from .orders import DataError, SceneAnnotation

TEMPLATE = "Is the {a} {rel} the {b} ? Answer the question in a single word."
REL_OCCLUSION = "obstructing"
REL_DEPTH = "closer to us than"


def _bbox_str(bbox) -> str:
    return "[" + ", ".join(f"{c:.3f}" for c in bbox) + "]"


def _operand(instance, ambiguous: bool) -> str:
    if not instance.category:
        raise DataError(f"instance {instance.id} has no category")
    if ambiguous:
        return f"{instance.category} {_bbox_str(instance.bbox)}"
    return instance.category


def vqa_export(annotation: SceneAnnotation, image_ref: str | None = None) -> list[dict]:
    """One record per ordered pair and task: 2 * n * (n-1) records total."""
    instances = sorted(annotation.instances, key=lambda m: m.id)
    counts = Counter(inst.category for inst in instances)
    records = []
    image = annotation.image_path if image_ref is None else image_ref
    for task, rel, matrix in (
        ("occlusion", REL_OCCLUSION, annotation.occlusion),
        ("depth", REL_DEPTH, annotation.depth),
    ):
        for a in instances:
            for b in instances:
                if a.id == b.id:
                    continue
                question = TEMPLATE.format(
                    a=_operand(a, counts[a.category] > 1),
                    rel=rel,
                    b=_operand(b, counts[b.category] > 1),
                )
                answer = "yes" if matrix.entries[a.id, b.id] == 1 else "no"
                records.append(
                    {"image": image, "question": question, "answer": answer, "pair": [a.id, b.id], "task": task}
                )
    return records


def write_jsonl(path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
