import itertools

import numpy as np
import pytest

from hybridfss.aggregation import (
    Prediction,
    aggregate,
    decode,
    decode_fused,
    multishot_fuse,
    save_prediction,
    standardize_map,
)
from hybridfss.ckmm import build_bank, probability_map
from hybridfss.episode import SyntheticConfig, generate_episode, generate_instance
from hybridfss.errors import DimensionError
from hybridfss.metrics import iou
from hybridfss.p2p import Projection, p2p_align
from hybridfss.tensor import load_jcat


def test_concat_layout():
    p_aw = np.random.default_rng(0).standard_normal((4, 3, 3)).astype(np.float32)
    p_ag = np.arange(9, dtype=np.float32).reshape(1, 3, 3)
    out = aggregate(p_aw, p_ag, "concat")
    assert out.shape == (5, 3, 3)
    assert np.array_equal(out[:4], p_aw) and np.array_equal(out[4], p_ag[0])


def test_add_zero_and_multiply_one():
    p_aw = np.random.default_rng(1).standard_normal((2, 3, 3)).astype(np.float32)
    assert np.array_equal(aggregate(p_aw, np.zeros((1, 3, 3), np.float32), "add"), p_aw)
    assert np.array_equal(aggregate(p_aw, np.ones((3, 3), np.float32), "multiply"), p_aw)


def test_aggregate_errors():
    with pytest.raises(DimensionError):
        aggregate(np.zeros((2, 3, 3)), np.zeros((1, 3, 4)))
    with pytest.raises(ValueError):
        aggregate(np.zeros((2, 3, 3)), np.zeros((1, 3, 3)), "max")


def test_aligned_query_is_all_foreground():
    q = np.random.default_rng(2).standard_normal((4, 5, 5)).astype(np.float32)
    q[0] += 10  # no zero vectors
    guidance = aggregate(q, np.random.default_rng(3).random((1, 5, 5)))
    pred = decode(guidance, q, tau=0.0, w_ag=0.0)
    assert pred.mask.all()


def test_zero_prototype_ties_resolve_to_foreground():
    q = np.ones((3, 4, 4), np.float32)
    guidance = aggregate(np.zeros((3, 4, 4), np.float32), np.zeros((1, 4, 4), np.float32))
    pred = decode(guidance, q, tau=0.0, w_ag=0.0)
    assert not pred.logits.any()
    assert pred.mask.all()


def test_logits_scale_invariant():
    rng = np.random.default_rng(4)
    q = rng.standard_normal((4, 4, 4)).astype(np.float32)
    p = rng.standard_normal((4, 4, 4)).astype(np.float32)
    m = rng.standard_normal((1, 4, 4)).astype(np.float32)
    a = decode(aggregate(p, m), q, tau=0.1)
    b = decode(aggregate(3 * p, 5 * m), 2 * q, tau=0.1)
    np.testing.assert_allclose(a.logits, b.logits, atol=1e-6)


def test_standardize_map():
    z = standardize_map(np.array([1.0, 2.0, 3.0, 4.0]))
    assert abs(z.mean()) < 1e-12 and abs(z.std() - 1) < 1e-12
    assert not standardize_map(np.full((3, 3), 7.0)).any()


def test_decode_needs_extra_channel():
    with pytest.raises(DimensionError):
        decode(np.zeros((3, 2, 2)), np.zeros((3, 2, 2)))


def test_decode_fused():
    q = np.random.default_rng(5).standard_normal((3, 4, 4)).astype(np.float32)
    pred = decode_fused(q, q, tau=0.99)
    assert pred.mask.all()


def test_separable_episode_decodes_well():
    cfg = SyntheticConfig(channels=64, height=16, width=16, noise_sigma=0.05, seed=11)
    ep = generate_episode(cfg, class_id=1, episode_index=0)
    s = ep.supports[0]
    p_aw = p2p_align(ep.query_features, s.features, s.mask, Projection.identity(64))
    bank = build_bank((p.features, p.mask, c) for c in cfg.base_classes
                      for p in (generate_instance(cfg, c, i) for i in range(3)))
    p_ag = probability_map(bank, ep.query_features)
    pred = decode(aggregate(p_aw, p_ag), ep.query_features, tau=0.5, w_ag=0.0)
    assert iou(pred.mask, ep.query_gt) >= 0.9


# multi-shot fusion

def pred_from(mask, tau=0.5):
    mask = np.asarray(mask, np.float32)
    return Prediction(mask[None].copy(), mask, tau)


def test_identical_shots_are_unchanged():
    m = (np.random.default_rng(6).random((4, 4)) < 0.5).astype(np.float32)
    out = multishot_fuse([pred_from(m)] * 3)
    assert np.array_equal(out.mask, m)


def test_two_way_tie_is_foreground():
    out = multishot_fuse([pred_from([[1, 0]]), pred_from([[0, 0]])])
    assert out.mask.tolist() == [[1, 0]]


def test_majority_of_three():
    out = multishot_fuse([pred_from([[1, 0]]), pred_from([[1, 0]]), pred_from([[0, 1]])])
    assert out.mask.tolist() == [[1, 0]]


def test_fusion_ignores_shot_order():
    rng = np.random.default_rng(7)
    preds = [Prediction(rng.standard_normal((1, 5, 5)).astype(np.float32),
                        (rng.random((5, 5)) < 0.5).astype(np.float32), 0.0) for _ in range(4)]
    ref = multishot_fuse(preds)
    for perm in itertools.permutations(preds):
        out = multishot_fuse(list(perm))
        assert np.array_equal(out.mask, ref.mask)
        assert out.logits.tobytes() == ref.logits.tobytes()


def test_fusion_errors():
    with pytest.raises(ValueError):
        multishot_fuse([])
    with pytest.raises(DimensionError):
        multishot_fuse([pred_from([[1, 0]]), pred_from([[1]])])


def test_save_prediction(tmp_path):
    p = pred_from([[1, 0], [0, 1]])
    save_prediction(tmp_path / "ep0", p, class_id=3)
    assert np.array_equal(load_jcat(tmp_path / "ep0.jcat"), p.mask)
    assert '"class_id": 3' in (tmp_path / "ep0.json").read_text()
