"""Synthetic corpus generator: structure, determinism, ingest compatibility."""

import numpy as np
import pytest

from convrec.data import build_dataset, read_tables
from convrec.errors import ConfigError
from convrec.fixture import FixtureConfig, generate_fixture, write_fixture


def small_config(**overrides):
    base = dict(n_users=20, n_items=16, n_keyphrases=8, n_groups=4,
                ratings_per_user=10, seed=0)
    base.update(overrides)
    return FixtureConfig(**base)


def test_config_validation():
    with pytest.raises(ConfigError):
        small_config(n_items=15)  # does not split into 4 groups
    with pytest.raises(ConfigError):
        small_config(n_keyphrases=9)
    with pytest.raises(ConfigError):
        small_config(ratings_per_user=17)


def test_generate_structure():
    cfg = small_config()
    ratings, reviews, vocab = generate_fixture(cfg)
    assert len(vocab) == cfg.n_keyphrases
    assert len(ratings) == cfg.n_users * cfg.ratings_per_user
    rated = {(u, i) for u, i, _ in ratings}
    assert len(rated) == len(ratings)  # no duplicate pairs per user
    for u, i, v in ratings:
        assert 0 <= u < cfg.n_users and 0 <= i < cfg.n_items
        assert 1.0 <= v <= 5.0
    for u, i, kps in reviews:
        assert (u, i) in rated  # reviews only accompany ratings
        assert len(kps) > 0
        assert all(0 <= c < cfg.n_keyphrases for c in kps)


def test_generate_deterministic():
    a = generate_fixture(small_config())
    b = generate_fixture(small_config())
    assert a == b
    c = generate_fixture(small_config(seed=1))
    assert a[0] != c[0]


def test_written_fixture_ingests(tmp_path):
    cfg = small_config()
    paths = write_fixture(tmp_path, cfg)
    table = read_tables(paths["ratings"], paths["reviews"], paths["vocab"])
    ds = build_dataset(table, threshold=3.5, ratios=(0.6, 0.2, 0.2), seed=0)
    assert ds.n_users == cfg.n_users
    assert ds.n_items == cfg.n_items
    assert ds.n_keyphrases == cfg.n_keyphrases
    # planted groups leave every item with at least one keyphrase
    assert (ds.ki_binary.sum(axis=1) >= 1).all()
    assert (ds.ki_binary.sum(axis=1) < cfg.n_keyphrases).any()


def test_written_fixture_roundtrip_bytes(tmp_path):
    cfg = small_config()
    p1 = write_fixture(tmp_path / "a", cfg)
    p2 = write_fixture(tmp_path / "b", cfg)
    for key in p1:
        assert p1[key].read_bytes() == p2[key].read_bytes()


def test_default_corpus_supports_splitting(tmp_path):
    paths = write_fixture(tmp_path, FixtureConfig(n_users=40))
    table = read_tables(paths["ratings"], paths["reviews"], paths["vocab"])
    ds = build_dataset(table, threshold=3.5, ratios=(0.6, 0.2, 0.2), seed=0)
    # every user keeps enough positives for a val and test slice
    assert ds.n_forced_train_users == 0
    assert ds.r_val.nnz > 0 and ds.r_test.nnz > 0
