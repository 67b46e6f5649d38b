import numpy as np
import pytest
from oracles import full_sort_topk, naive_p2b

from hybridfss.errors import ConfigError, DimensionError
from hybridfss.p2b import (
    PositionEmbedding,
    add_position,
    block_importance,
    extract_blocks,
    p2b_align,
    pad_to_multiple,
    reassemble_blocks,
    select_topk,
)
from hybridfss.p2p import Projection, p2p_align
from hybridfss.tensor import max_relative_error


def case(seed, c, h, w):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((c, h, w)).astype(np.float32)
    s = rng.standard_normal((c, h, w)).astype(np.float32)
    m = (rng.random((h, w)) < 0.5).astype(np.float32)
    return q, s, m


# position embedding

def test_zero_position_leaves_features():
    f = np.random.default_rng(0).standard_normal((3, 4, 4)).astype(np.float32)
    assert np.array_equal(add_position(f, np.zeros((4, 4), np.float32)), f)


def test_zero_features_take_the_embedding():
    p = np.arange(6, dtype=np.float32).reshape(2, 3)
    out = add_position(np.zeros((4, 2, 3), np.float32), p)
    for ch in range(4):
        assert np.array_equal(out[ch], p)


def test_add_then_subtract_recovers_features():
    f = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    p = np.array([[0.5, -1.0], [2.0, 0.25]], np.float32)
    assert np.array_equal(add_position(f, p) - p[None], f)


def test_embedding_shape_mismatch():
    with pytest.raises(DimensionError):
        add_position(np.zeros((2, 4, 4)), np.zeros((4, 3)))
    with pytest.raises(DimensionError):
        PositionEmbedding(np.zeros((2, 2)), np.zeros((3, 3)))


def test_random_embedding_is_seeded():
    a = PositionEmbedding.random(4, 4, seed=3)
    b = PositionEmbedding.random(4, 4, seed=3)
    assert np.array_equal(a.p_q, b.p_q) and np.array_equal(a.p_s, b.p_s)
    assert not np.array_equal(a.p_q, a.p_s)


# blocks

def test_whole_map_is_one_block():
    f = np.arange(2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3)
    blocks = extract_blocks(f, 3)
    assert blocks.shape == (2, 1, 9)
    assert np.array_equal(blocks[:, 0, :], f.reshape(2, 9))


def test_unit_blocks_are_pixels():
    f = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4)
    blocks = extract_blocks(f, 1)
    assert blocks.shape == (2, 12, 1)
    assert np.array_equal(blocks[:, :, 0], f.reshape(2, 12))


def test_index_ramp_tiling():
    f = np.stack([np.arange(16, dtype=np.float32).reshape(4, 4)] * 2)
    blocks = extract_blocks(f, 2)
    expected = [{0, 1, 4, 5}, {2, 3, 6, 7}, {8, 9, 12, 13}, {10, 11, 14, 15}]
    for i, want in enumerate(expected):
        for ch in range(2):
            assert set(blocks[ch, i].astype(int).tolist()) == want
    # pixels inside a block are row-major too
    assert blocks[0, 1].tolist() == [2, 3, 6, 7]


@pytest.mark.parametrize("h,w,m", [(4, 4, 2), (6, 9, 3), (8, 4, 4), (5, 5, 5), (12, 8, 1)])
def test_reassemble_is_bit_exact(h, w, m):
    f = np.random.default_rng(h * w + m).standard_normal((3, h, w)).astype(np.float32)
    assert np.array_equal(reassemble_blocks(extract_blocks(f, m), h, w), f)


def test_block_size_must_divide():
    with pytest.raises(ConfigError):
        extract_blocks(np.zeros((1, 5, 4)), 2)
    with pytest.raises(ConfigError):
        extract_blocks(np.zeros((1, 4, 4)), 0)


def test_pad_to_multiple():
    f = np.ones((2, 5, 3), np.float32)
    padded = pad_to_multiple(f, 2)
    assert padded.shape == (2, 6, 4)
    assert padded[:, :5, :3].all() and not padded[:, 5, :].any() and not padded[:, :, 3].any()
    assert pad_to_multiple(f, 1) is f


# importance and top-k

def test_full_and_empty_masks():
    assert np.all(block_importance(np.ones((4, 6)), 2) == 1.0)
    assert np.all(block_importance(np.zeros((4, 6)), 2) == 0.0)


def test_three_quarter_tile():
    assert block_importance(np.array([[1, 0], [1, 1]]), 2).tolist() == [0.75]


def test_topk_direct_ranking():
    assert select_topk([0.75, 0.0, 1.0, 0.5], 2) == [2, 0]


def test_topk_ties_go_to_lower_index():
    assert select_topk([0.5, 0.5, 0.5, 0.5], 2) == [0, 1]


def test_topk_matches_full_sort():
    v = np.random.default_rng(64).random(64)
    assert select_topk(v, 10) == full_sort_topk(v, 10)


def test_topk_clamps():
    assert select_topk([0.1, 0.2], 5) == [1, 0]
    assert select_topk([0.1, 0.2], 0) == []
    assert select_topk([0.1, 0.2], -3) == []


# p2b_align

def test_zero_mask_zero_embedding_gives_zero():
    q, s, _ = case(1, 4, 8, 8)
    out = p2b_align(q, s, np.zeros((8, 8)), Projection.random(4, 1), PositionEmbedding.zeros(8, 8), 2, 3)
    assert not out.any()


def test_single_full_block_collapses_to_p2p():
    q, s, m = case(2, 4, 6, 6)
    proj = Projection.random(4, 2)
    a = p2b_align(q, s, m, proj, PositionEmbedding.zeros(6, 6), m=6, k=1)
    b = p2p_align(q, s, m, proj)
    assert max_relative_error(a, b) <= 1e-5


def test_matches_naive_block_oracle():
    q, s, m = case(21, 4, 8, 8)
    proj = Projection.random(4, 21)
    pe = PositionEmbedding.random(8, 8, seed=21)
    got = p2b_align(q, s, m, proj, pe, m=2, k=3)
    want = naive_p2b(q, s, m, proj.w_q, proj.w_k, proj.w_v, pe.p_q, pe.p_s, 2, 3)
    assert max_relative_error(got, want) <= 1e-4


def test_k_zero_gives_zero():
    q, s, m = case(3, 2, 4, 4)
    out = p2b_align(q, s, m, Projection.identity(2), None, 2, 0)
    assert out.shape == (2, 4, 4) and not out.any()


def test_position_embedding_changes_the_output():
    q, s, m = case(4, 3, 4, 4)
    proj = Projection.identity(3)
    plain = p2b_align(q, s, m, proj, PositionEmbedding.zeros(4, 4), 2, 2)
    shifted = p2b_align(q, s, m, proj, PositionEmbedding.random(4, 4, seed=1, scale=1.0), 2, 2)
    assert not np.allclose(plain, shifted)


def test_order_of_selected_blocks_does_not_matter():
    # swapping two equally covered blocks in the support leaves the mean unchanged
    q, s, _ = case(5, 3, 4, 4)
    m = np.ones((4, 4), np.float32)
    proj = Projection.random(3, 5)
    base = p2b_align(q, s, m, proj, None, 2, 4)
    blocks = extract_blocks(s, 2)[:, [3, 2, 1, 0], :]
    swapped = reassemble_blocks(blocks, 4, 4)
    assert max_relative_error(p2b_align(q, swapped, m, proj, None, 2, 4), base) <= 1e-6


def test_padding_mode():
    q, s, m = case(6, 2, 5, 5)
    proj = Projection.identity(2)
    with pytest.raises(ConfigError):
        p2b_align(q, s, m, proj, None, 2, 2)
    out = p2b_align(q, s, m, proj, None, 2, 2, pad=True)
    assert out.shape == (2, 5, 5) and np.all(np.isfinite(out))


def test_shape_errors():
    q, s, m = case(7, 2, 4, 4)
    with pytest.raises(DimensionError):
        p2b_align(q, s[:, :2], m, Projection.identity(2), None, 2, 1)
    with pytest.raises(DimensionError):
        p2b_align(q, s, m, Projection.identity(2), PositionEmbedding.zeros(2, 2), 2, 1)
