"""Bimodal variational autoencoder over user interactions and keyphrase
usage, with a mixture-of-experts posterior and weak-supervision training.

Two encoders (interactions r, keyphrases k) each produce a diagonal Gaussian
over the shared latent space; a joint posterior mixes them at parameter
level. Two decoders map a latent vector to multinomial logits over items and
keyphrases. Training maximizes the sum of three evidence lower bounds (joint,
r-only, k-only); users missing a modality contribute only the term they can.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import artifacts
from . import autodiff as ad
from . import metrics as metrics_mod
from .data import BOTH, K_ONLY, R_ONLY, Dataset, ObservationMask, l2_normalize_rows, mask_modalities
from .errors import CheckpointError, ConfigError, ShapeError
from .layers import GaussianPosterior, dropout, init_mlp2, kl_std_normal, mlp2_forward, multinomial_loglik, sample_gaussian
from .optim import AdamAmsgrad
from .rng import RngStream

MODE_FULL = "full"
MODE_R_ONLY = "r-only"


@dataclass
class TrainConfig:
    """Hyperparameters; field names mirror the config-file keys."""

    latent_dim: int = 300
    enc_hidden: int | None = None   # default 2 * latent_dim
    dec_hidden: int | None = None
    lr: float = 5e-5
    recon_weight: float = 3.0       # lambda, scales the log-likelihoods
    kl_beta: float = 0.7            # beta, final KL weight
    anneal: float = 0.5             # fraction of epochs to ramp beta over
    dropout: float = 0.4
    epochs: int = 300
    batch_size: int = 128
    l2_penalty: float = 1e-10
    seed: int = 0
    mode: str = MODE_FULL
    p_both: float = 1.0             # fraction of users with both modalities
    eval_every: int = 1

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if not 0.0 < self.anneal <= 1.0:
            raise ConfigError("anneal must lie in (0, 1]")
        if self.mode not in (MODE_FULL, MODE_R_ONLY):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.enc_hidden is None:
            self.enc_hidden = 2 * self.latent_dim
        if self.dec_hidden is None:
            self.dec_hidden = 2 * self.latent_dim


def beta_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Linear ramp from 0 to kl_beta over the first anneal * epochs epochs."""
    ramp = max(1, int(round(cfg.anneal * cfg.epochs)))
    return cfg.kl_beta * min(1.0, (epoch + 1) / ramp)


def combine_moe(post_r: GaussianPosterior, post_k: GaussianPosterior,
                alpha: float) -> GaussianPosterior:
    """Mixture of the two experts at parameter level.

    mu = alpha mu_r + (1-alpha) mu_k, and the same convex combination on the
    sigmas themselves (not the variances). The degenerate weights return the
    original posterior object so single-modality encoding is bit-identical.
    """
    if alpha == 1.0:
        return post_r
    if alpha == 0.0:
        return post_k
    mu = ad.add(ad.mul(post_r.mu, alpha), ad.mul(post_k.mu, 1.0 - alpha))
    sigma = ad.add(ad.mul(post_r.sigma, alpha), ad.mul(post_k.sigma, 1.0 - alpha))
    return GaussianPosterior(mu, sigma)


@dataclass
class TrainHistory:
    records: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_ndcg: float = float("-inf")


class MmsVae:
    """The bimodal VAE; holds plain-ndarray parameters plus its config."""

    def __init__(self, n_items: int, n_keyphrases: int, cfg: TrainConfig,
                 params: dict[str, np.ndarray] | None = None):
        self.n_items = int(n_items)
        self.n_keyphrases = int(n_keyphrases)
        self.cfg = cfg
        if params is None:
            rng = RngStream(cfg.seed, (0,))
            h, eh, dh = cfg.latent_dim, cfg.enc_hidden, cfg.dec_hidden
            params = {}
            params.update(init_mlp2(n_items, eh, 2 * h, rng, "enc_r"))
            params.update(init_mlp2(n_keyphrases, eh, 2 * h, rng, "enc_k"))
            params.update(init_mlp2(h, dh, n_items, rng, "dec_r"))
            params.update(init_mlp2(h, dh, n_keyphrases, rng, "dec_k"))
        self.params = params

    # ------------------------------------------------------------------
    # encoding / decoding

    def _encode(self, x, prefix: str, params=None) -> GaussianPosterior:
        p = self.params if params is None else params
        out = mlp2_forward(x, p[f"{prefix}_w1"], p[f"{prefix}_b1"],
                           p[f"{prefix}_w2"], p[f"{prefix}_b2"])
        h = self.cfg.latent_dim
        mu = ad.slice_cols(out, 0, h)
        sigma = ad.exp(ad.slice_cols(out, h, 2 * h))
        return GaussianPosterior(mu, sigma)

    def _prep_input(self, rows: np.ndarray, training: bool,
                    rng: RngStream | None) -> np.ndarray:
        x = l2_normalize_rows(np.atleast_2d(np.asarray(rows, dtype=np.float64)))
        if training:
            x = dropout(x, self.cfg.dropout, rng, training=True)
        return x

    def encode_r(self, r_rows, training: bool = False,
                 rng: RngStream | None = None) -> GaussianPosterior:
        return self._encode(self._prep_input(r_rows, training, rng), "enc_r")

    def encode_k(self, k_rows, training: bool = False,
                 rng: RngStream | None = None) -> GaussianPosterior:
        return self._encode(self._prep_input(k_rows, training, rng), "enc_k")

    def encode_joint(self, r_rows=None, k_rows=None) -> GaussianPosterior:
        """Posterior given whichever modalities are present (inference only)."""
        if r_rows is None and k_rows is None:
            raise ConfigError("encode_joint needs at least one modality")
        if k_rows is None:
            return combine_moe(self.encode_r(r_rows), None, 1.0)
        if r_rows is None:
            return combine_moe(None, self.encode_k(k_rows), 0.0)
        return combine_moe(self.encode_r(r_rows), self.encode_k(k_rows), 0.5)

    def _decode(self, z, prefix: str, params=None, cols=None):
        p = self.params if params is None else params
        w2, b2 = p[f"{prefix}_w2"], p[f"{prefix}_b2"]
        if cols is not None:
            w2, b2 = w2[:, cols], b2[cols]
        return mlp2_forward(z, p[f"{prefix}_w1"], p[f"{prefix}_b1"], w2, b2)

    def decode_r(self, z, cols=None):
        return self._decode(z, "dec_r", cols=cols)

    def decode_k(self, z):
        return self._decode(z, "dec_k")

    def z0_for_user(self, r_row: np.ndarray) -> np.ndarray:
        """Deterministic user latent: posterior mean of the r encoder."""
        return np.asarray(self.encode_r(r_row).mu)[0]

    # ------------------------------------------------------------------
    # objective

    def _objective_graph(self, leaves, batch_r: np.ndarray, batch_k: np.ndarray,
                         codes: np.ndarray, beta: float, rng: RngStream,
                         training: bool = True):
        """Negative weak-supervision objective for one minibatch, averaged
        over the batch, plus the L2 weight penalty. Returns a scalar Tensor.

        RNG consumption order is fixed: r dropout mask, k dropout mask, then
        one reparametrization draw per ELBO term (joint, r, k).
        """
        cfg = self.cfg
        n = batch_r.shape[0]
        if batch_r.ndim != 2 or batch_k.ndim != 2 or batch_k.shape[0] != n:
            raise ShapeError("batch_r and batch_k must be 2-D with equal rows")
        if cfg.mode == MODE_R_ONLY:
            r_idx = np.arange(n)
            k_idx = np.array([], dtype=np.int64)
            both_idx = np.array([], dtype=np.int64)
        else:
            r_idx = np.flatnonzero(codes != K_ONLY)
            k_idx = np.flatnonzero(codes != R_ONLY)
            both_idx = np.flatnonzero(codes == BOTH)

        post_r = post_k = None
        if len(r_idx):
            x_r = self._prep_input(batch_r[r_idx], training, rng)
            post_r = self._encode(x_r, "enc_r", leaves)
        if len(k_idx):
            x_k = self._prep_input(batch_k[k_idx], training, rng)
            post_k = self._encode(x_k, "enc_k", leaves)

        lam = cfg.recon_weight
        total = None

        def accumulate(term):
            nonlocal total
            total = term if total is None else ad.add(total, term)

        if len(both_idx):
            # rows of the modality posteriors that belong to both-users
            pos_r = np.searchsorted(r_idx, both_idx)
            pos_k = np.searchsorted(k_idx, both_idx)
            joint = combine_moe(
                GaussianPosterior(ad.gather_rows(post_r.mu, pos_r),
                                  ad.gather_rows(post_r.sigma, pos_r)),
                GaussianPosterior(ad.gather_rows(post_k.mu, pos_k),
                                  ad.gather_rows(post_k.sigma, pos_k)),
                0.5)
            z = sample_gaussian(joint, rng)
            ll = ad.add(
                multinomial_loglik(self._decode(z, "dec_r", leaves),
                                   batch_r[both_idx]),
                multinomial_loglik(self._decode(z, "dec_k", leaves),
                                   batch_k[both_idx]))
            accumulate(ad.add(ad.mul(ll, lam),
                              ad.mul(kl_std_normal(joint), -beta)))
        if len(r_idx):
            z = sample_gaussian(post_r, rng)
            ll = multinomial_loglik(self._decode(z, "dec_r", leaves),
                                    batch_r[r_idx])
            accumulate(ad.add(ad.mul(ll, lam),
                              ad.mul(kl_std_normal(post_r), -beta)))
        if len(k_idx):
            z = sample_gaussian(post_k, rng)
            ll = multinomial_loglik(self._decode(z, "dec_k", leaves),
                                    batch_k[k_idx])
            accumulate(ad.add(ad.mul(ll, lam),
                              ad.mul(kl_std_normal(post_k), -beta)))
        if total is None:
            raise ShapeError("batch contributed no objective terms")

        loss = ad.mul(total, -1.0 / n)
        if cfg.l2_penalty > 0.0:
            penalty = None
            for name in self._penalized_weights():
                w = leaves[name]
                sq = ad.asum(ad.mul(w, w))
                penalty = sq if penalty is None else ad.add(penalty, sq)
            loss = ad.add(loss, ad.mul(penalty, cfg.l2_penalty))
        return loss

    def _penalized_weights(self) -> list[str]:
        """Weight matrices covered by the L2 penalty in the current mode."""
        prefixes = (("enc_r", "dec_r") if self.cfg.mode == MODE_R_ONLY
                    else ("enc_r", "enc_k", "dec_r", "dec_k"))
        return [f"{p}_w{i}" for p in prefixes for i in (1, 2)]

    def training_objective(self, batch_r, batch_k, codes, beta: float,
                           rng: RngStream) -> tuple[float, dict[str, np.ndarray]]:
        """Loss value and parameter gradients for one minibatch."""
        leaves = {k: ad.Tensor(v) for k, v in self.params.items()}
        loss = self._objective_graph(leaves, np.asarray(batch_r, dtype=np.float64),
                                     np.asarray(batch_k, dtype=np.float64),
                                     codes, beta, rng)
        loss.backward()
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.value))
                 for k, t in leaves.items()}
        return float(loss.value), grads

    # ------------------------------------------------------------------
    # training loop

    def fit(self, dataset: Dataset, mask: ObservationMask | None = None,
            progress: Callable[[dict], None] | None = None) -> TrainHistory:
        """Train with minibatch AMSGrad; keep the epoch checkpoint with the
        best validation NDCG (r-path ranking against val positives)."""
        cfg = self.cfg
        if mask is None:
            if cfg.p_both >= 1.0:
                mask = ObservationMask(np.zeros(dataset.n_users, dtype=np.int8))
            else:
                mask = mask_modalities(dataset.n_users, cfg.p_both, cfg.seed)
        rng = RngStream(cfg.seed, (1,))
        opt = AdamAmsgrad(self.params, lr=cfg.lr)
        history = TrainHistory()
        best_params: dict[str, np.ndarray] | None = None
        n_users = dataset.n_users
        for epoch in range(cfg.epochs):
            beta = beta_schedule(epoch, cfg)
            perm = rng.permutation(n_users)
            epoch_loss = 0.0
            n_batches = 0
            for start in range(0, n_users, cfg.batch_size):
                users = perm[start:start + cfg.batch_size]
                batch_r = dataset.r_train[users].toarray()
                batch_k = dataset.k_binary[users]
                loss, grads = self.training_objective(
                    batch_r, batch_k, mask.codes[users], beta, rng)
                opt.step(grads)
                epoch_loss += loss
                n_batches += 1
            record = {"epoch": epoch, "loss": epoch_loss / max(1, n_batches),
                      "beta": beta, "val_ndcg": None}
            if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
                val_ndcg = self.validation_ndcg(dataset)
                record["val_ndcg"] = val_ndcg
                if val_ndcg > history.best_val_ndcg:
                    history.best_val_ndcg = val_ndcg
                    history.best_epoch = epoch
                    best_params = {k: v.copy() for k, v in self.params.items()}
            history.records.append(record)
            if progress is not None:
                progress(record)
        if best_params is not None:
            self.params = best_params
        return history

    def validation_ndcg(self, dataset: Dataset, chunk: int = 512) -> float:
        """Mean NDCG of r-path rankings against val positives, train masked."""
        return self._split_ndcg(dataset, dataset.r_val, chunk)

    def _split_ndcg(self, dataset: Dataset, r_eval, chunk: int) -> float:
        total, count = 0.0, 0
        for start in range(0, dataset.n_users, chunk):
            users = np.arange(start, min(start + chunk, dataset.n_users))
            rows = dataset.r_train[users].toarray()
            z = np.asarray(self.encode_r(rows).mu)
            scores = np.asarray(self.decode_r(z))
            scores[rows > 0] = -np.inf
            order = np.argsort(-scores, axis=1, kind="stable")
            for j, u in enumerate(users):
                relevant = set(
                    r_eval.indices[r_eval.indptr[u]:r_eval.indptr[u + 1]].tolist())
                if not relevant:
                    continue
                n_masked = int(rows[j].sum())
                ranked = order[j][:order.shape[1] - n_masked]
                total += metrics_mod.ndcg(ranked, relevant)
                count += 1
        return total / count if count else 0.0

    # ------------------------------------------------------------------
    # ranking heads

    def recommend_topn(self, z: np.ndarray, n: int,
                       exclude_items: np.ndarray | None = None,
                       items: np.ndarray | None = None):
        """Top-n item ids by decoder logit, ties broken by ascending id.

        `exclude_items` are removed from the ranking (typically the user's
        observed training items); `items` restricts scoring to a candidate
        subset. n is clamped to the number of rankable items.
        """
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if items is not None:
            items = np.asarray(items, dtype=np.int64)
            scores = np.asarray(self.decode_r(z, cols=items))[0]
            ids = items
        else:
            scores = np.asarray(self.decode_r(z))[0]
            ids = np.arange(self.n_items)
        if exclude_items is not None and len(exclude_items):
            keep = ~np.isin(ids, np.asarray(exclude_items))
            ids, scores = ids[keep], scores[keep]
        order = np.lexsort((ids, -scores))
        n = max(0, min(int(n), len(ids)))
        top = order[:n]
        return ids[top], scores[top]

    def explain_topk(self, z: np.ndarray, k: int):
        """Top-k keyphrase ids by the keyphrase decoder, no masking."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        scores = np.asarray(self.decode_k(z))[0]
        ids = np.arange(self.n_keyphrases)
        order = np.lexsort((ids, -scores))
        k = max(0, min(int(k), self.n_keyphrases))
        top = order[:k]
        return ids[top], scores[top]

    # ------------------------------------------------------------------
    # persistence

    def save(self, path) -> None:
        meta = {
            "config": asdict(self.cfg),
            "n_items": self.n_items,
            "n_keyphrases": self.n_keyphrases,
        }
        artifacts.save_artifact(path, "model", meta, self.params)

    @classmethod
    def load(cls, path) -> "MmsVae":
        meta, arrays = artifacts.load_artifact(path, expect_kind="model")
        try:
            cfg = TrainConfig(**meta["config"])
            model = cls(meta["n_items"], meta["n_keyphrases"], cfg, params=arrays)
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"model checkpoint missing fields: {exc}") from exc
        expected = {f"{p}_{s}" for p in ("enc_r", "enc_k", "dec_r", "dec_k")
                    for s in ("w1", "b1", "w2", "b2")}
        if set(arrays) != expected:
            raise CheckpointError("model checkpoint has unexpected parameters")
        return model


def clone_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return copy.deepcopy(params)
