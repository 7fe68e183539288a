import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semstitch import ShortBoundaryError
from semstitch.matching import (
    CandidateMatch,
    build_stacks,
    match_candidates,
    matches_to_csv,
    pair_fragment,
    reverse_stacks,
)


def unit_rows(rng, n, k):
    v = rng.normal(size=(n, k)).astype(np.float32)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class TestBuildStacks:
    def test_n0_identity(self):
        feats = unit_rows(np.random.default_rng(0), 5, 8)
        stacks = build_stacks(feats, 0)
        assert np.allclose(stacks, feats, atol=1e-6)

    def test_cyclic_wrap_order(self):
        # 7 one-hot vectors; stack at k=0 with n=3 must be [f4 f5 f6 f0 f1 f2 f3]
        feats = np.eye(7, dtype=np.float32)
        stacks = build_stacks(feats, 3)
        got = stacks[0].reshape(7, 7)
        order = [int(np.argmax(row)) for row in got]
        assert order == [4, 5, 6, 0, 1, 2, 3]

    def test_too_few_raises(self):
        feats = unit_rows(np.random.default_rng(1), 6, 4)
        with pytest.raises(ShortBoundaryError):
            build_stacks(feats, 3)

    def test_unit_rows(self):
        feats = unit_rows(np.random.default_rng(2), 9, 16)
        stacks = build_stacks(feats, 2)
        assert stacks.shape == (9, 5 * 16)
        assert np.allclose(np.linalg.norm(stacks, axis=1), 1.0, atol=1e-5)

    def test_reverse_stacks_blocks(self):
        feats = np.eye(7, dtype=np.float32)
        stacks = build_stacks(feats, 1)
        rev = reverse_stacks(stacks, 1)
        fwd0 = stacks[0].reshape(3, 7)
        rev0 = rev[0].reshape(3, 7)
        assert np.array_equal(rev0, fwd0[::-1])


class TestMatchCandidates:
    def test_self_match_forward(self):
        stacks = build_stacks(unit_rows(np.random.default_rng(3), 12, 24), 3)
        matches = match_candidates(stacks, stacks, 3)
        assert len(matches) == 12
        for k, m in enumerate(matches):
            assert (m.moving_index, m.fixed_index, m.reversed) == (k, k, False)
            assert m.similarity == pytest.approx(1.0, abs=1e-5)

    def test_planted_pair(self):
        rng = np.random.default_rng(4)
        k = 16
        basis = np.eye(k, dtype=np.float32)
        moving = basis[:4]
        fixed = basis[8:13].copy()
        fixed[2] = 0.9 * basis[1] + np.sqrt(1 - 0.81) * basis[15]  # cos 0.9 with moving[1]
        matches = match_candidates(moving, fixed, 0)
        assert matches[1].fixed_index == 2
        assert matches[1].similarity == pytest.approx(0.9, abs=1e-5)

    def test_output_size_always_matches_moving(self):
        rng = np.random.default_rng(5)
        moving = unit_rows(rng, 7, 8)
        fixed = unit_rows(rng, 19, 8)
        assert len(match_candidates(moving, fixed, 0)) == 7

    def test_k_mismatch(self):
        rng = np.random.default_rng(6)
        with pytest.raises(ValueError):
            match_candidates(unit_rows(rng, 3, 8), unit_rows(rng, 3, 12), 0)

    def test_opposite_traversal_reversed_flag(self):
        # fixed sequence is the moving sequence walked backwards: stacks only
        # line up when the fixed stack is reversed, and indices anti-correlate
        rng = np.random.default_rng(7)
        feats = unit_rows(rng, 20, 16)
        moving = build_stacks(feats, 2)
        fixed_feats = feats[::-1].copy()
        fixed = build_stacks(fixed_feats, 2)
        matches = match_candidates(moving, fixed, 2)
        for m in matches:
            assert m.reversed
            assert m.similarity == pytest.approx(1.0, abs=1e-5)
            assert m.fixed_index == (len(feats) - 1 - m.moving_index)

    def test_mirroring_fixed_flips_reversed_preserves_position(self):
        rng = np.random.default_rng(8)
        feats_m = unit_rows(rng, 15, 12)
        feats_f = unit_rows(rng, 15, 12)
        n = 2
        fwd = match_candidates(build_stacks(feats_m, n), build_stacks(feats_f, n), n)
        mir = match_candidates(build_stacks(feats_m, n), build_stacks(feats_f[::-1].copy(), n), n)
        for a, b in zip(fwd, mir):
            assert a.reversed != b.reversed
            assert b.fixed_index == len(feats_f) - 1 - a.fixed_index
            assert a.similarity == pytest.approx(b.similarity, abs=1e-5)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.1, 100.0))
    def test_scale_invariance(self, scale):
        rng = np.random.default_rng(9)
        feats_m = rng.normal(size=(8, 8)).astype(np.float32)
        feats_f = rng.normal(size=(11, 8)).astype(np.float32)
        a = match_candidates(build_stacks(feats_m, 1), build_stacks(feats_f, 1), 1)
        b = match_candidates(build_stacks(feats_m * scale, 1), build_stacks(feats_f * scale, 1), 1)
        for x, y in zip(a, b):
            assert (x.fixed_index, x.reversed) == (y.fixed_index, y.reversed)
            assert x.similarity == pytest.approx(y.similarity, abs=1e-5)


class TestPairFragment:
    def test_single_fixed_returned(self):
        rng = np.random.default_rng(10)
        pool = {"m": unit_rows(rng, 5, 8), "only": unit_rows(rng, 6, 8)}
        fid, score, matches = pair_fragment("m", pool, 0)
        assert fid == "only" and len(matches) == 5

    def test_copy_wins(self):
        rng = np.random.default_rng(11)
        moving = unit_rows(rng, 9, 8)
        pool = {
            "m": moving,
            "copy": moving.copy(),
            "noise": unit_rows(rng, 9, 8),
        }
        fid, score, matches = pair_fragment("m", pool, 0)
        assert fid == "copy"
        assert score == pytest.approx(9.0, abs=1e-3)

    def test_empty_pool_raises(self):
        with pytest.raises(ValueError):
            pair_fragment("m", {"m": np.eye(3, dtype=np.float32)}, 0)

    def test_tie_breaks_smallest_id(self):
        moving = np.eye(4, dtype=np.float32)
        pool = {"m": moving, "b": moving.copy(), "a": moving.copy()}
        fid, _, _ = pair_fragment("m", pool, 0)
        assert fid == "a"


def test_matches_csv_dump(tmp_path):
    matches = [CandidateMatch(0, 3, 0.75, False), CandidateMatch(1, 2, -0.5, True)]
    out = tmp_path / "m.csv"
    matches_to_csv(matches, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "moving_index,fixed_index,similarity,reversed"
    assert lines[1] == "0,3,0.75,0"
    assert lines[2] == "1,2,-0.5,1"
