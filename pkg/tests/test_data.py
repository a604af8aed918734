"""Ingestion, binarization, per-user splitting, keyphrase matrices."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from convrec import data
from convrec.errors import ConfigError, IngestError
from convrec.rng import RngStream


def write_inputs(tmp_path, ratings_rows, review_rows, vocab):
    ratings = tmp_path / "ratings.csv"
    reviews = tmp_path / "reviews.csv"
    vocab_path = tmp_path / "vocab.txt"
    ratings.write_text("user,item,rating\n" + "".join(f"{r}\n" for r in ratings_rows))
    reviews.write_text("user,item,keyphrase_ids\n"
                       + "".join(f"{r}\n" for r in review_rows))
    vocab_path.write_text("".join(f"{t}\n" for t in vocab))
    return ratings, reviews, vocab_path


def small_table(tmp_path):
    paths = write_inputs(
        tmp_path,
        ["u1,i1,5", "u1,i2,2", "u2,i1,4", "u2,i3,3.5", "u1,i1,3"],
        ["u1,i1,0;1", "u2,i1,1", "u2,i3,", "u1,i2,2"],
        ["hoppy", "malty", "crisp"],
    )
    return data.read_tables(*paths)


class TestIngest:
    def test_dense_indices_and_values(self, tmp_path):
        table = small_table(tmp_path)
        assert table.user_ids == ["u1", "u2"]
        assert table.item_ids == ["i1", "i2", "i3"]
        assert table.n_users == 2 and table.n_items == 3
        assert len(table.ratings) == 5
        assert table.vocab == ["hoppy", "malty", "crisp"]
        # empty keyphrase field parses as an empty list
        assert table.review_kps[2] == []

    def test_numeric_ids_sort_numerically(self, tmp_path):
        paths = write_inputs(tmp_path, ["10,2,5", "2,10,4"], [], ["a"])
        table = data.read_tables(*paths)
        assert table.user_ids == ["2", "10"]
        assert table.item_ids == ["2", "10"]

    def test_header_mismatch(self, tmp_path):
        paths = write_inputs(tmp_path, ["u,i,5"], [], ["a"])
        bad = tmp_path / "bad.csv"
        bad.write_text("user,item,score\nu,i,5\n")
        with pytest.raises(IngestError, match="header"):
            data.read_tables(bad, paths[1], paths[2])

    def test_bad_rating_value(self, tmp_path):
        paths = write_inputs(tmp_path, ["u,i,high"], [], ["a"])
        with pytest.raises(IngestError, match="bad rating"):
            data.read_tables(*paths)

    def test_review_for_unknown_pair(self, tmp_path):
        paths = write_inputs(tmp_path, ["u,i,5"], ["ghost,i,0"], ["a"])
        with pytest.raises(IngestError, match="unknown interaction"):
            data.read_tables(*paths)

    def test_keyphrase_id_out_of_vocab(self, tmp_path):
        paths = write_inputs(tmp_path, ["u,i,5"], ["u,i,7"], ["a", "b"])
        with pytest.raises(IngestError, match="outside"):
            data.read_tables(*paths)

    def test_duplicate_vocab_rejected(self, tmp_path):
        paths = write_inputs(tmp_path, ["u,i,5"], [], ["a", "a"])
        with pytest.raises(IngestError, match="duplicate"):
            data.read_tables(*paths)

    def test_empty_ratings_rejected(self, tmp_path):
        paths = write_inputs(tmp_path, [], [], ["a"])
        with pytest.raises(IngestError, match="no interactions"):
            data.read_tables(*paths)


class TestBinarize:
    def test_strict_threshold(self, tmp_path):
        table = small_table(tmp_path)
        mat = data.binarize(table, 3.5)
        dense = mat.toarray()
        # u1-i1 max rating 5 > 3.5; u2-i1 4 > 3.5; u2-i3 is exactly 3.5 -> out
        assert dense[0, 0] == 1.0 and dense[1, 0] == 1.0
        assert dense[1, 2] == 0.0
        assert mat.nnz == 2

    def test_duplicates_keep_max(self, tmp_path):
        # u1-i1 appears with ratings 5 and 3; max=5 wins at threshold 4
        table = small_table(tmp_path)
        mat = data.binarize(table, 4.0)
        assert mat.toarray()[0, 0] == 1.0

    def test_duplicate_order_does_not_matter(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "b").mkdir()
        a = write_inputs(tmp_path / "a", ["u,i,5", "u,i,2"], [], ["x"])
        b = write_inputs(tmp_path / "b", ["u,i,2", "u,i,5"], [], ["x"])
        ma = data.binarize(data.read_tables(*a), 3.5).toarray()
        mb = data.binarize(data.read_tables(*b), 3.5).toarray()
        np.testing.assert_array_equal(ma, mb)
        assert ma[0, 0] == 1.0


@settings(max_examples=30, deadline=None)
@given(st.floats(1.0, 4.5), st.floats(0.0, 0.5))
def test_binarize_monotone_in_threshold(t, delta):
    gen = np.random.default_rng(0)
    table = data.RatingsTable(
        users=gen.integers(0, 4, 30),
        items=gen.integers(0, 5, 30),
        ratings=gen.uniform(1, 5, 30),
        review_users=np.array([], dtype=np.int64),
        review_items=np.array([], dtype=np.int64),
        review_kps=[],
        user_ids=[str(i) for i in range(4)],
        item_ids=[str(i) for i in range(5)],
        vocab=["a"],
    )
    low = data.binarize(table, t).toarray()
    high = data.binarize(table, t + delta).toarray()
    assert np.all(high <= low)  # raising the threshold only removes positives


class TestSplit:
    def build(self, counts, n_items=40, seed=11):
        rows, cols = [], []
        gen = np.random.default_rng(3)
        for u, n in enumerate(counts):
            items = gen.choice(n_items, size=n, replace=False)
            rows.extend([u] * n)
            cols.extend(items.tolist())
        return sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(len(counts), n_items))

    def test_exact_counts_for_ten(self):
        r = self.build([10])
        tr, va, te, forced = data.split_interactions(r, (0.6, 0.2, 0.2), 0)
        assert (tr.nnz, va.nnz, te.nnz) == (6, 2, 2)
        assert forced == 0

    def test_floor_remainder_goes_to_train(self):
        r = self.build([7])
        tr, va, te, _ = data.split_interactions(r, (0.6, 0.2, 0.2), 0)
        # floor(1.4)=1 to val, floor(1.4)=1 to test, 5 to train
        assert (tr.nnz, va.nnz, te.nnz) == (5, 1, 1)

    def test_under_three_positives_all_train(self):
        r = self.build([2, 1, 10])
        tr, va, te, forced = data.split_interactions(r, (0.6, 0.2, 0.2), 0)
        assert forced == 2
        assert tr[0].nnz == 2 and tr[1].nnz == 1
        assert va[0].nnz == 0 and te[0].nnz == 0
        assert va[2].nnz == 2 and te[2].nnz == 2

    def test_same_seed_identical_split(self):
        r = self.build([10, 8, 25, 5])
        a = data.split_interactions(r, (0.6, 0.2, 0.2), 42)
        b = data.split_interactions(r, (0.6, 0.2, 0.2), 42)
        for ma, mb in zip(a[:3], b[:3]):
            np.testing.assert_array_equal(ma.toarray(), mb.toarray())

    def test_different_seed_differs(self):
        r = self.build([20, 20, 20, 20])
        a = data.split_interactions(r, (0.6, 0.2, 0.2), 1)[0]
        b = data.split_interactions(r, (0.6, 0.2, 0.2), 2)[0]
        assert (a != b).nnz > 0

    def test_bad_ratios(self):
        r = self.build([5])
        with pytest.raises(ConfigError):
            data.split_interactions(r, (0.5, 0.2, 0.2), 0)
        with pytest.raises(ConfigError):
            data.split_interactions(r, (1.2, -0.1, -0.1), 0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=12),
       st.integers(0, 2 ** 31 - 1))
def test_split_partitions_positives(counts, seed):
    rows, cols = [], []
    gen = np.random.default_rng(7)
    n_items = 50
    for u, n in enumerate(counts):
        items = gen.choice(n_items, size=n, replace=False)
        rows.extend([u] * n)
        cols.extend(items.tolist())
    r = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)),
                          shape=(len(counts), n_items))
    tr, va, te, _ = data.split_interactions(r, (0.6, 0.2, 0.2), seed)
    total = tr + va + te
    np.testing.assert_array_equal(total.toarray(), r.toarray())  # disjoint union
    assert tr.multiply(va).nnz == 0
    assert tr.multiply(te).nnz == 0
    assert va.multiply(te).nnz == 0


class TestKeyphraseMatrices:
    def test_only_member_pairs_counted(self, tmp_path):
        table = small_table(tmp_path)
        member = sparse.csr_matrix(
            (np.ones(1), ([0], [0])), shape=(2, 3))  # only (u1, i1)
        k_counts, k_bin, ki_counts, ki_bin = data.build_keyphrase_matrices(
            table, member)
        np.testing.assert_array_equal(k_counts[0], [1, 1, 0])
        np.testing.assert_array_equal(k_counts[1], [0, 0, 0])
        np.testing.assert_array_equal(ki_counts[0], [1, 1, 0])
        np.testing.assert_array_equal(ki_bin[0], [1, 1, 0])
        assert ki_counts[1].sum() == 0

    def test_counts_accumulate_across_reviews(self, tmp_path):
        table = small_table(tmp_path)
        member = sparse.csr_matrix(np.ones((2, 3)))
        k_counts, _, ki_counts, _ = data.build_keyphrase_matrices(table, member)
        # kp 1 mentioned by u1 (i1) and u2 (i1): item i1 gets count 2
        assert ki_counts[0, 1] == 2.0
        assert k_counts[0, 1] == 1.0 and k_counts[1, 1] == 1.0

    def test_repeated_mention_in_one_review(self, tmp_path):
        paths = write_inputs(tmp_path, ["u,i,5"], ["u,i,0;0;1"], ["a", "b"])
        table = data.read_tables(*paths)
        member = sparse.csr_matrix(np.ones((1, 1)))
        k_counts, k_bin, _, _ = data.build_keyphrase_matrices(table, member)
        np.testing.assert_array_equal(k_counts[0], [2, 1])
        np.testing.assert_array_equal(k_bin[0], [1, 1])


class TestMaskModalities:
    def test_all_both(self):
        mask = data.mask_modalities(10, 1.0, 0)
        assert np.all(mask.codes == data.BOTH)
        assert len(mask.both_idx) == 10

    def test_half_both_even_split(self):
        mask = data.mask_modalities(100, 0.5, 3)
        assert (mask.codes == data.BOTH).sum() == 50
        assert (mask.codes == data.R_ONLY).sum() == 25
        assert (mask.codes == data.K_ONLY).sum() == 25
        # index helpers agree with codes
        assert len(mask.r_observed_idx) == 75
        assert len(mask.k_observed_idx) == 75

    def test_odd_remainder_favors_interactions(self):
        mask = data.mask_modalities(10, 0.1, 5)
        assert (mask.codes == data.BOTH).sum() == 1
        assert (mask.codes == data.R_ONLY).sum() == 5
        assert (mask.codes == data.K_ONLY).sum() == 4

    def test_deterministic_and_validated(self):
        a = data.mask_modalities(50, 0.3, 9).codes
        b = data.mask_modalities(50, 0.3, 9).codes
        np.testing.assert_array_equal(a, b)
        with pytest.raises(ConfigError):
            data.mask_modalities(10, 1.5, 0)


class TestL2Normalize:
    def test_unit_norms_and_zero_rows(self):
        m = np.array([[3.0, 4.0], [0.0, 0.0], [1.0, 0.0]])
        out = data.l2_normalize_rows(m)
        np.testing.assert_allclose(out[0], [0.6, 0.8])
        np.testing.assert_array_equal(out[1], [0.0, 0.0])
        np.testing.assert_allclose(np.linalg.norm(out[2]), 1.0)

    def test_does_not_mutate_input(self):
        m = np.ones((2, 2))
        data.l2_normalize_rows(m)
        np.testing.assert_array_equal(m, np.ones((2, 2)))


class TestMatchKeyphrases:
    VOCAB = ["hoppy", "bubble tea", "dark chocolate", "crisp"]

    def test_single_and_multiword(self):
        text = "Lovely hoppy finish; the Bubble-Tea pairing was odd."
        assert data.match_keyphrases(text, self.VOCAB) == [0, 1]

    def test_no_partial_token_match(self):
        # "crispy" must not match "crisp"
        assert data.match_keyphrases("crispy coating", self.VOCAB) == []

    def test_multiword_needs_adjacency(self):
        assert data.match_keyphrases("dark and chocolate", self.VOCAB) == []
        assert data.match_keyphrases("rich DARK CHOCOLATE notes", self.VOCAB) == [2]


class TestDatasetBundle:
    def make_dataset(self, tmp_path):
        paths = write_inputs(
            tmp_path,
            [f"u{u},i{i},{r}" for u, i, r in
             [(0, 0, 5), (0, 1, 4), (0, 2, 5), (0, 3, 4), (0, 4, 5),
              (1, 0, 4), (1, 2, 5), (1, 3, 2), (1, 4, 4), (1, 1, 5)]],
            ["u0,i0,0;1", "u0,i2,1", "u1,i0,0", "u1,i4,2"],
            ["rich", "smooth", "sharp"],
        )
        table = data.read_tables(*paths)
        return data.build_dataset(table, 3.5, (0.6, 0.2, 0.2), seed=5)

    def test_round_trip_bits(self, tmp_path):
        ds = self.make_dataset(tmp_path)
        p1 = tmp_path / "d1.bin"
        p2 = tmp_path / "d2.bin"
        ds.save(p1)
        loaded = data.Dataset.load(p1)
        loaded.save(p2)
        assert p1.read_bytes() == p2.read_bytes()
        np.testing.assert_array_equal(ds.r_train.toarray(), loaded.r_train.toarray())
        np.testing.assert_array_equal(ds.k_counts, loaded.k_counts)
        assert loaded.vocab == ds.vocab
        assert loaded.ratios == ds.ratios

    def test_split_manifest_counts(self, tmp_path):
        ds = self.make_dataset(tmp_path)
        man = ds.split_manifest()
        assert man["interactions"]["train"] == ds.r_train.nnz
        assert man["n_users"] == 2
        assert man["version"] == 1
        assert man["seed"] == 5

    def test_keyphrase_rows_follow_split(self, tmp_path):
        ds = self.make_dataset(tmp_path)
        # every keyphrase row only reflects reviews of pairs in that split
        train_pairs = set(zip(*ds.r_train.nonzero()))
        if (0, 0) in train_pairs:
            assert ds.k_binary[0, 0] == 1.0
        else:
            assert ds.k_binary[0, 0] == 0.0
