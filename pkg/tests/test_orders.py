from __future__ import annotations

import numpy as np
import pytest

from sceneorder.annotations import (
    annotation_from_obj,
    annotation_to_obj,
    dumps_canonical,
    load_annotation,
    rle_decode,
    rle_encode,
    save_annotation,
)
from sceneorder.orders import (
    DataError,
    DepthMatrix,
    InstanceMask,
    OcclusionMatrix,
    SceneAnnotation,
    StructuralError,
    matrix_to_pairs,
    pairs_to_matrix,
    to_dot,
    validate_depth,
    validate_occlusion,
)


def test_valid_empty_occlusion():
    assert validate_occlusion(OcclusionMatrix.empty(2)) == []


def test_occlusion_diagonal_rule():
    m = OcclusionMatrix.empty(2)
    m.entries[0, 0] = 0
    violations = validate_occlusion(m)
    assert any("diagonal" in v.rule for v in violations)


def test_bidirectional_occlusion_is_valid():
    m = OcclusionMatrix.empty(2)
    m.entries[0, 1] = 1
    m.entries[1, 0] = 1
    assert validate_occlusion(m) == []


def test_occlusion_bad_value():
    m = OcclusionMatrix.empty(2)
    m.entries[0, 1] = 5
    assert len(validate_occlusion(m)) == 1


def test_non_square_is_structural_error():
    with pytest.raises(StructuralError):
        validate_occlusion(OcclusionMatrix(2, np.zeros((2, 3))))


def test_depth_front_behind_valid():
    m = DepthMatrix.empty(2)
    m.entries[0, 1] = 1
    assert validate_depth(m) == []


def test_depth_antisymmetry_violation():
    m = DepthMatrix.empty(2)
    m.entries[0, 1] = 1
    m.entries[1, 0] = 1
    violations = validate_depth(m)
    assert any("antisymmetry" in v.rule for v in violations)


def test_depth_overlap_must_be_mutual():
    m = DepthMatrix.empty(2)
    m.entries[0, 1] = 2
    violations = validate_depth(m)
    assert any("mutual" in v.rule for v in violations)


def test_every_single_entry_corruption_detected():
    rng = np.random.default_rng(0)
    for trial in range(20):
        n = int(rng.integers(2, 6))
        m = DepthMatrix.empty(n)
        for i in range(n):
            for j in range(i + 1, n):
                rel = rng.choice(["front", "behind", "overlap"])
                if rel == "front":
                    m.entries[i, j] = 1
                elif rel == "behind":
                    m.entries[j, i] = 1
                else:
                    m.entries[i, j] = m.entries[j, i] = 2
        assert validate_depth(m) == []
        for i in range(n):
            for j in range(n):
                for new in (-1, 0, 1, 2, 3):
                    if new == m.entries[i, j]:
                        continue
                    corrupted = m.copy()
                    corrupted.entries[i, j] = new
                    assert validate_depth(corrupted) != [], (i, j, new)


# ---- pairs <-> matrix -------------------------------------------------------


def test_empty_pairs_gives_zero_offdiagonal():
    m = pairs_to_matrix([], 2, "occlusion")
    assert m.entries[0, 1] == 0 and m.entries[1, 0] == 0
    assert m.entries[0, 0] == -1


def test_front_pair_with_weight():
    # w = 2/count per the disagreement-rate weight definition
    m = pairs_to_matrix([(0, 1, "front", 2)], 2, "depth")
    assert m.entries[0, 1] == 1 and m.entries[1, 0] == 0
    assert m.weight(0, 1) == 1.0


def test_overlap_pair_with_weight():
    m = pairs_to_matrix([(0, 1, "overlap", 4)], 2, "depth")
    assert m.entries[0, 1] == 2 and m.entries[1, 0] == 2
    assert m.weight(0, 1) == 0.5


def test_conflicting_duplicate_raises():
    with pytest.raises(DataError):
        pairs_to_matrix([(0, 1, "front", 2), (0, 1, "overlap", 2)], 2, "depth")


def test_identical_duplicate_tolerated():
    m = pairs_to_matrix([(0, 1, "front", 2), (0, 1, "front", 2)], 2, "depth")
    assert m.entries[0, 1] == 1


def test_pairs_roundtrip_random_matrices():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(2, 7))
        pairs = []
        for i in range(n):
            for j in range(i + 1, n):
                rel = rng.choice(["front", "rfront", "overlap", "none"])
                count = int(rng.integers(1, 6))
                if rel == "front":
                    pairs.append((i, j, "front", count))
                elif rel == "rfront":
                    pairs.append((j, i, "front", count))
                elif rel == "overlap":
                    pairs.append((i, j, "overlap", count))
        m = pairs_to_matrix(pairs, n, "depth")
        assert sorted(matrix_to_pairs(m)) == sorted(pairs)


# ---- DOT --------------------------------------------------------------------


def test_dot_single_node_no_edges():
    dot = to_dot(OcclusionMatrix.empty(1), None)
    assert "0 [" in dot and "->" not in dot


def test_dot_directed_edge():
    m = OcclusionMatrix.empty(2)
    m.entries[0, 1] = 1
    assert "0 -> 1" in to_dot(m, None)


def test_dot_overlap_renders_single_undirected_edge():
    d = DepthMatrix.empty(2)
    d.entries[0, 1] = d.entries[1, 0] = 2
    dot = to_dot(None, d)
    assert dot.count("->") == 1 and 'dir="none"' in dot


def test_dot_deterministic():
    m = OcclusionMatrix.empty(3)
    m.entries[0, 1] = m.entries[2, 0] = 1
    assert to_dot(m, None) == to_dot(m, None)


# ---- RLE and JSON round trips -------------------------------------------------


def test_rle_roundtrip():
    rng = np.random.default_rng(2)
    for _ in range(20):
        bitmap = (rng.random((9, 7)) < 0.4).astype(np.uint8)
        assert np.array_equal(rle_decode(rle_encode(bitmap), 9, 7), bitmap)


def test_rle_leading_ones():
    bitmap = np.ones((2, 2), dtype=np.uint8)
    assert rle_encode(bitmap) == [0, 4]


def test_rle_length_mismatch():
    with pytest.raises(DataError):
        rle_decode([3, 2], 2, 2)


def _tiny_annotation() -> SceneAnnotation:
    bitmap0 = np.zeros((4, 4), dtype=np.uint8)
    bitmap0[0:2, 0:2] = 1
    bitmap1 = np.zeros((4, 4), dtype=np.uint8)
    bitmap1[2:4, 1:3] = 1
    instances = [
        InstanceMask.from_bitmap(0, "box", bitmap0),
        InstanceMask.from_bitmap(1, "disk", bitmap1),
    ]
    occ = pairs_to_matrix([(0, 1, "occludes", None)], 2, "occlusion")
    depth = pairs_to_matrix([(0, 1, "front", 4)], 2, "depth")
    return SceneAnnotation(4, 4, "img.ppm", instances, occ, depth)


def test_annotation_json_roundtrip(tmp_path):
    ann = _tiny_annotation()
    path = tmp_path / "ann.json"
    save_annotation(path, ann)
    back = load_annotation(path)
    assert back.width == 4 and back.image_path == "img.ppm"
    assert np.array_equal(back.occlusion.entries, ann.occlusion.entries)
    assert np.array_equal(back.depth.entries, ann.depth.entries)
    np.testing.assert_allclose(back.depth.pair_weights, ann.depth.pair_weights)
    for a, b in zip(back.instances, ann.instances):
        assert np.array_equal(a.bitmap, b.bitmap)
        assert a.category == b.category


def test_annotation_byte_stable(tmp_path):
    ann = _tiny_annotation()
    first = dumps_canonical(annotation_to_obj(ann))
    reparsed = annotation_from_obj(annotation_to_obj(ann))
    second = dumps_canonical(annotation_to_obj(reparsed))
    assert first == second


def test_annotation_dense_ids_enforced():
    ann = _tiny_annotation()
    bad = [InstanceMask.from_bitmap(0, "box", ann.instances[0].bitmap), InstanceMask.from_bitmap(5, "disk", ann.instances[1].bitmap)]
    with pytest.raises(DataError):
        SceneAnnotation(4, 4, "x", bad, ann.occlusion, ann.depth)


def test_tight_bbox_normalized():
    bitmap = np.zeros((8, 8), dtype=np.uint8)
    bitmap[2:4, 4:8] = 1
    inst = InstanceMask.from_bitmap(0, "x", bitmap)
    assert inst.bbox == (0.5, 0.25, 1.0, 0.5)
