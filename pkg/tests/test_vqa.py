from __future__ import annotations

import json

import numpy as np
import pytest

from sceneorder.orders import DataError, InstanceMask, SceneAnnotation, pairs_to_matrix
from sceneorder.vqa import TEMPLATE, vqa_export, write_jsonl


def annotation_with_categories(categories):
    n = len(categories)
    h = w = 8
    instances = []
    for i, cat in enumerate(categories):
        bitmap = np.zeros((h, w), dtype=np.uint8)
        bitmap[i : i + 2, 0:2] = 1
        instances.append(InstanceMask.from_bitmap(i, cat, bitmap))
    occ = pairs_to_matrix([(0, 1, "occludes", None)], n, "occlusion")
    depth_pairs = [(i, j, "front", 2) for i in range(n) for j in range(i + 1, n)]
    depth = pairs_to_matrix(depth_pairs, n, "depth")
    return SceneAnnotation(w, h, "img.ppm", instances, occ, depth)


def test_unique_classes_no_bboxes():
    records = vqa_export(annotation_with_categories(["box", "disk"]))
    for rec in records:
        assert "[" not in rec["question"]


def test_duplicate_class_carries_bboxes_in_both_prompts():
    records = vqa_export(annotation_with_categories(["person", "person", "box"]))
    for rec in records:
        i, j = rec["pair"]
        # any operand whose class repeats in the scene gets its box appended
        expects_box = i in (0, 1) or j in (0, 1)
        assert ("[" in rec["question"]) == expects_box, rec


def test_prompt_count_is_two_n_n_minus_one():
    n = 3
    records = vqa_export(annotation_with_categories(["person", "person", "box"]))
    assert len(records) == 2 * n * (n - 1)
    assert sum(1 for r in records if r["task"] == "occlusion") == n * (n - 1)
    assert sum(1 for r in records if r["task"] == "depth") == n * (n - 1)


def test_template_verbatim():
    records = vqa_export(annotation_with_categories(["box", "disk"]))
    occ = [r for r in records if r["task"] == "occlusion" and r["pair"] == [0, 1]][0]
    assert occ["question"] == "Is the box obstructing the disk ? Answer the question in a single word."
    dep = [r for r in records if r["task"] == "depth" and r["pair"] == [0, 1]][0]
    assert dep["question"] == "Is the box closer to us than the disk ? Answer the question in a single word."
    for rec in records:
        assert rec["question"].endswith("Answer the question in a single word.")


def test_answers_follow_matrix_entries():
    records = vqa_export(annotation_with_categories(["box", "disk"]))
    by_key = {(r["task"], tuple(r["pair"])): r["answer"] for r in records}
    assert by_key[("occlusion", (0, 1))] == "yes"
    assert by_key[("occlusion", (1, 0))] == "no"
    assert by_key[("depth", (0, 1))] == "yes"  # 0 in front of 1
    assert by_key[("depth", (1, 0))] == "no"


def test_missing_category_is_data_error():
    ann = annotation_with_categories(["box", ""])
    with pytest.raises(DataError):
        vqa_export(ann)


def test_jsonl_roundtrip(tmp_path):
    records = vqa_export(annotation_with_categories(["box", "disk"]))
    path = tmp_path / "vqa.jsonl"
    write_jsonl(path, records)
    lines = path.read_text().splitlines()
    assert len(lines) == len(records)
    assert json.loads(lines[0])["image"] == "img.ppm"
