import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duel import OrderedPartition, ProbMatrix, Vocabulary, masked_positions, reveal
from duel.errors import InvalidPartition, InvalidToken, RevealUnmasked
from duel.oracle import enumerate_ordered_partitions
from duel.seq import from_one_based, to_one_based, validate_partition

M = 2  # mask id for V=2


class TestVocabulary:
    def test_mask_id_is_one_past_the_symbols(self):
        vocab = Vocabulary(("a", "b", "c"))
        assert vocab.size == 3
        assert vocab.mask_id == 3

    def test_rejects_duplicates_and_empty(self):
        with pytest.raises(ValueError):
            Vocabulary(("a", "a"))
        with pytest.raises(ValueError):
            Vocabulary(())

    def test_encode_decode_roundtrip(self):
        vocab = Vocabulary(("a", "b"))
        ids = vocab.encode("abba")
        assert ids.tolist() == [0, 1, 1, 0]
        assert vocab.decode(ids) == "abba"
        assert vocab.decode([0, vocab.mask_id]) == "a<mask>"

    def test_whitespace_mode(self):
        vocab = Vocabulary(("cat", "dog"), mode="whitespace")
        assert vocab.encode("dog cat").tolist() == [1, 0]
        assert vocab.decode([1, 2]) == "dog <mask>"

    def test_unknown_symbol(self):
        with pytest.raises(InvalidToken):
            Vocabulary(("a",)).encode("ab")

    def test_json_roundtrip(self, tmp_path):
        vocab = Vocabulary(("x", "y"), mode="whitespace")
        path = tmp_path / "v.json"
        vocab.save(path)
        assert json.loads(path.read_text())["symbols"] == ["x", "y"]
        assert Vocabulary.load(path) == vocab


class TestMaskedPositions:
    def test_all_masked(self):
        assert masked_positions(np.array([M, M, M]), M) == {0, 1, 2}

    def test_single_hole(self):
        assert masked_positions(np.array([0, M, 1]), M) == {1}

    def test_fully_revealed(self):
        assert masked_positions(np.array([0, 1]), M) == set()


class TestReveal:
    def test_substitutes_one_position(self):
        z = np.array([M, M])
        out = reveal(z, 0, 0, M)
        assert out.tolist() == [0, M]
        assert z.tolist() == [M, M]

    def test_absorbing(self):
        with pytest.raises(RevealUnmasked):
            reveal(np.array([0, M]), 0, 1, M)

    def test_mask_is_not_a_token(self):
        with pytest.raises(InvalidToken):
            reveal(np.array([0, M]), 1, M, M)
        with pytest.raises(InvalidToken):
            reveal(np.array([0, M]), 1, -1, M)

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=6), st.randoms())
    def test_revealed_set_grows_monotonically(self, x, rnd):
        z = np.full(len(x), M)
        order = list(range(len(x)))
        rnd.shuffle(order)
        revealed = set()
        for pos in order:
            z = reveal(z, pos, x[pos], M)
            now = set(range(len(x))) - masked_positions(z, M)
            assert revealed < now
            revealed = now
        assert z.tolist() == x


class TestValidatePartition:
    def test_mixed_part_sizes_are_valid(self):
        parts = from_one_based_parts([{1, 3}, {2}, {4}])
        assert validate_partition(parts, 4)

    def test_overlap(self):
        verdict = validate_partition(from_one_based_parts([{1}, {1, 2}]), 2)
        assert not verdict
        assert verdict.reason.startswith("overlap")

    def test_coverage(self):
        verdict = validate_partition(from_one_based_parts([{1}]), 2)
        assert not verdict
        assert verdict.reason.startswith("coverage")

    def test_emptiness(self):
        verdict = validate_partition([{0}, set(), {1}], 2)
        assert verdict.reason.startswith("emptiness")

    def test_constructor_raises(self):
        with pytest.raises(InvalidPartition):
            OrderedPartition((frozenset({0}),), 2)

    def test_steps_and_sequential(self):
        p = OrderedPartition((frozenset({0, 2}), frozenset({1})), 3)
        assert p.steps == 2
        assert not p.is_sequential
        assert p.to_one_based() == [[1, 3], [2]]
        assert OrderedPartition((frozenset({1}), frozenset({0})), 2).is_sequential

    @settings(max_examples=60)
    @given(st.integers(1, 4).flatmap(
        lambda L: st.tuples(st.just(L), st.lists(st.sets(st.integers(0, L - 1)), max_size=L + 1))))
    def test_accepts_exactly_the_ordered_partitions(self, case):
        L, parts = case
        valid = {tuple(p.parts) for p in enumerate_ordered_partitions(L)}
        key = tuple(frozenset(p) for p in parts)
        assert bool(validate_partition(parts, L)) == (key in valid)

    @pytest.mark.parametrize("L", range(1, 7))
    def test_enumerated_partitions_are_valid_and_distinct(self, L):
        parts = enumerate_ordered_partitions(L)
        assert all(validate_partition(p.parts, L) for p in parts)
        assert len({p.parts for p in parts}) == len(parts)
        assert all(p.steps <= L and (p.steps == L) == p.is_sequential for p in parts)


def from_one_based_parts(parts):
    return [set(from_one_based(p)) for p in parts]


class TestPositionConversion:
    def test_roundtrip(self):
        assert to_one_based({2, 0}) == [1, 3]
        assert from_one_based([1, 3]) == [0, 2]


class TestProbMatrix:
    def test_subs_carry_over(self):
        z = np.array([1, M])
        logp = np.log(np.full((2, 2), 0.5))
        P = ProbMatrix.from_masked_rows(z, logp, M)
        assert P.probs[0].tolist() == [0.0, 1.0]
        assert P.probs[1].tolist() == [0.5, 0.5]
        assert P.shape == (2, 2)  # no column for the mask token
        assert P.is_valid()

    def test_read_only(self):
        P = ProbMatrix.from_masked_rows(np.array([M]), np.log([[0.3, 0.7]]), M)
        with pytest.raises(ValueError):
            P.log_probs[0, 0] = 0.0

    def test_top_two(self):
        P = ProbMatrix.from_masked_rows(np.array([3, 3]), np.log([[0.2, 0.5, 0.3], [0.6, 0.3, 0.1]]), 3)
        p1, p2 = P.top_two()
        np.testing.assert_allclose(p1, [0.5, 0.6])
        np.testing.assert_allclose(p2, [0.3, 0.3])

    def test_invalid_rows_detected(self):
        P = ProbMatrix.from_masked_rows(np.array([M]), np.log([[0.3, 0.3]]), M)
        assert not P.is_valid()
        assert P.row_errors()[0] == pytest.approx(0.4)
