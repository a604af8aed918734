"""Shared fixtures: tiny in-memory datasets and models."""

import numpy as np
import pytest

from convrec import data
from convrec.model import MmsVae, TrainConfig


def make_toy_table(n_users=24, n_items=16, n_kp=6, seed=0) -> data.RatingsTable:
    """Two taste groups; in-group items are loved, out-group items are not.

    Every rated pair also carries a review mentioning the item's group
    keyphrases, so interaction and keyphrase signals agree.
    """
    gen = np.random.default_rng(seed)
    half_items = n_items // 2
    half_kp = n_kp // 2
    users, items, ratings = [], [], []
    r_users, r_items, r_kps = [], [], []
    for u in range(n_users):
        group = u % 2
        own = np.arange(half_items) + group * half_items
        other = np.arange(half_items) + (1 - group) * half_items
        rated = list(own) + list(gen.choice(other, size=4, replace=False))
        for i in rated:
            in_group = (i // half_items) == group
            rating = 5.0 if in_group else 2.0
            users.append(u)
            items.append(int(i))
            ratings.append(rating)
            kps = list(range(half_kp)) if (i // half_items) == 0 else \
                list(range(half_kp, n_kp))
            r_users.append(u)
            r_items.append(int(i))
            r_kps.append(kps)
    return data.RatingsTable(
        users=np.array(users, dtype=np.int64),
        items=np.array(items, dtype=np.int64),
        ratings=np.array(ratings, dtype=np.float64),
        review_users=np.array(r_users, dtype=np.int64),
        review_items=np.array(r_items, dtype=np.int64),
        review_kps=r_kps,
        user_ids=[f"u{i}" for i in range(n_users)],
        item_ids=[f"i{i}" for i in range(n_items)],
        vocab=[f"kp{i}" for i in range(n_kp)],
    )


def make_toy_dataset(seed=0, **kwargs) -> data.Dataset:
    table = make_toy_table(seed=seed, **kwargs)
    return data.build_dataset(table, threshold=3.5, ratios=(0.6, 0.2, 0.2),
                              seed=seed)


@pytest.fixture(scope="session")
def toy_dataset() -> data.Dataset:
    return make_toy_dataset()


def tiny_config(**overrides) -> TrainConfig:
    base = dict(latent_dim=4, enc_hidden=12, dec_hidden=12, lr=2e-3,
                recon_weight=1.0, kl_beta=0.2, anneal=0.5, dropout=0.0,
                epochs=5, batch_size=8, l2_penalty=0.0, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture()
def tiny_model(toy_dataset) -> MmsVae:
    return MmsVae(toy_dataset.n_items, toy_dataset.n_keyphrases, tiny_config())
