"""Synthetic corpus with planted structure for end-to-end checks.

Items fall into groups; users prefer one group plus a two-dimensional
continuous taste. Ratings follow a noisy sigmoid of the affinity, reviews
mention the rated item's keyphrases at a fixed rate, and keyphrases are group
specific. The planted signal is strong enough for a trained model to beat
popularity while leaving initial recommendations imperfect, so critiquing
sessions have room to improve.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .rng import RngStream


@dataclass
class FixtureConfig:
    n_users: int = 200
    n_items: int = 100
    n_keyphrases: int = 12
    n_groups: int = 4
    ratings_per_user: int = 45
    group_strength: float = 2.0
    taste_dims: int = 2
    taste_scale: float = 0.7
    rating_gain: float = 1.2
    rating_center: float = 1.0
    rating_noise: float = 0.5
    own_kp_rate: float = 0.85
    cross_kp_rate: float = 0.05
    mention_rate: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if self.n_items % self.n_groups or self.n_keyphrases % self.n_groups:
            raise ConfigError("items and keyphrases must split evenly "
                              "into groups")
        if self.ratings_per_user > self.n_items:
            raise ConfigError("cannot rate more items than exist")


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def generate_fixture(cfg: FixtureConfig):
    """Returns (ratings, reviews, vocab): ratings as (user, item, value)
    rows, reviews as (user, item, [keyphrase ids]) rows, ids into vocab."""
    kp_per_group = cfg.n_keyphrases // cfg.n_groups
    items_per_group = cfg.n_items // cfg.n_groups
    item_group = np.arange(cfg.n_items) // items_per_group
    user_group = np.arange(cfg.n_users) % cfg.n_groups

    rng_items = RngStream(cfg.seed, (1,))
    item_taste = rng_items.standard_normal(
        (cfg.n_items, cfg.taste_dims)) * cfg.taste_scale
    item_kps: list[np.ndarray] = []
    for i in range(cfg.n_items):
        own = np.arange(kp_per_group) + item_group[i] * kp_per_group
        draws = rng_items.random(cfg.n_keyphrases)
        rate = np.full(cfg.n_keyphrases, cfg.cross_kp_rate)
        rate[own] = cfg.own_kp_rate
        kps = np.flatnonzero(draws < rate)
        if len(kps) == 0:
            kps = np.array([int(rng_items.choice(own))])
        item_kps.append(kps)

    rng_users = RngStream(cfg.seed, (2,))
    user_taste = rng_users.standard_normal(
        (cfg.n_users, cfg.taste_dims)) * cfg.taste_scale

    rng_r = RngStream(cfg.seed, (3,))
    rng_rev = RngStream(cfg.seed, (4,))
    ratings = []
    reviews = []
    for u in range(cfg.n_users):
        rated = np.sort(rng_r.choice(cfg.n_items, size=cfg.ratings_per_user,
                                     replace=False))
        match = (item_group[rated] == user_group[u]).astype(np.float64)
        affinity = cfg.group_strength * match + \
            item_taste[rated] @ user_taste[u]
        noise = rng_r.standard_normal(len(rated))
        arg = cfg.rating_gain * (affinity - cfg.rating_center) + \
            cfg.rating_noise * noise
        values = 1.0 + 4.0 * _sigmoid(arg)
        for i, v in zip(rated, values):
            ratings.append((int(u), int(i), float(v)))
            mentioned = item_kps[i][rng_rev.random(len(item_kps[i]))
                                    < cfg.mention_rate]
            if len(mentioned):
                reviews.append((int(u), int(i), [int(c) for c in mentioned]))

    vocab = [f"grp{g}_kp{j}" for g in range(cfg.n_groups)
             for j in range(kp_per_group)]
    return ratings, reviews, vocab


def write_fixture(out_dir, cfg: FixtureConfig) -> dict[str, Path]:
    """Write ratings.csv, reviews.csv and vocab.txt in the ingest format."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ratings, reviews, vocab = generate_fixture(cfg)
    paths = {"ratings": out / "ratings.csv", "reviews": out / "reviews.csv",
             "vocab": out / "vocab.txt"}
    with open(paths["ratings"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "item", "rating"])
        for u, i, v in ratings:
            w.writerow([f"u{u:03d}", f"i{i:03d}", f"{v:.3f}"])
    with open(paths["reviews"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "item", "keyphrase_ids"])
        for u, i, kps in reviews:
            w.writerow([f"u{u:03d}", f"i{i:03d}",
                        ";".join(str(c) for c in kps)])
    with open(paths["vocab"], "w") as fh:
        fh.write("\n".join(vocab) + "\n")
    return paths
