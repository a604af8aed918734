"""Shared building blocks: Gaussian posteriors, likelihoods, MLP and GRU
cells, dropout, parameter initialization.

Every forward here accepts either plain ndarrays or autodiff Tensors for the
parameters (see autodiff module); data inputs are always plain ndarrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericDomainError, ShapeError
from .rng import RngStream


@dataclass
class GaussianPosterior:
    """Diagonal Gaussian q(z|x) with per-dimension mu and sigma.

    Fields are (B, H) Tensors inside a training graph, ndarrays elsewhere.
    """

    mu: object
    sigma: object

    def values(self) -> tuple[np.ndarray, np.ndarray]:
        mu = self.mu.value if isinstance(self.mu, ad.Tensor) else self.mu
        sig = self.sigma.value if isinstance(self.sigma, ad.Tensor) else self.sigma
        return np.asarray(mu), np.asarray(sig)


def sample_gaussian(post: GaussianPosterior, rng: RngStream | None = None,
                    deterministic: bool = False):
    """Reparametrized draw z = mu + eps * sigma, eps ~ N(0, I).

    Deterministic mode returns mu itself and is the only mode where
    sigma = 0 is legal.
    """
    mu_val, sig_val = post.values()
    if not (np.all(np.isfinite(mu_val)) and np.all(np.isfinite(sig_val))):
        raise NumericDomainError("posterior parameters must be finite")
    if deterministic:
        return post.mu
    if np.any(sig_val <= 0.0):
        raise NumericDomainError("sigma must be positive to sample")
    if rng is None:
        raise ConfigError("sampling requires an RngStream")
    eps = rng.standard_normal(mu_val.shape)
    return ad.add(post.mu, ad.mul(post.sigma, eps))


def kl_std_normal(post: GaussianPosterior):
    """KL(q || N(0, I)) summed over every dimension of the batch:
    0.5 * sum(mu^2 + sigma^2 - 1 - 2 ln sigma)."""
    _, sig_val = post.values()
    if np.any(sig_val <= 0.0):
        raise NumericDomainError("sigma must be positive in kl_std_normal")
    mu2 = ad.mul(post.mu, post.mu)
    sig2 = ad.mul(post.sigma, post.sigma)
    inner = ad.add(ad.add(mu2, sig2), ad.mul(ad.log(post.sigma), -2.0))
    return ad.mul(ad.add(ad.asum(inner), -float(np.prod(sig_val.shape))), 0.5)


def multinomial_loglik(logits, targets: np.ndarray):
    """sum(targets * log_softmax(logits)) over the whole batch.

    Targets are non-negative counts or binary indicators; rows with zero mass
    contribute nothing. Softmax is taken along the last axis with max shift.
    """
    targets = np.asarray(targets, dtype=np.float64)
    logits_val = logits.value if isinstance(logits, ad.Tensor) else np.asarray(logits)
    if logits_val.shape != targets.shape:
        raise ShapeError(
            f"logits {logits_val.shape} and targets {targets.shape} differ")
    if logits_val.size == 0:
        raise ShapeError("multinomial_loglik on empty arrays")
    if np.any(targets < 0):
        raise NumericDomainError("targets must be non-negative")
    log_probs = ad.add(logits, ad.mul(ad.logsumexp(logits, axis=-1), -1.0))
    return ad.asum(ad.mul(log_probs, targets))


def mlp2_forward(x, w1, b1, w2, b2):
    """Two-layer network: affine, tanh, affine. x is (B, n_in)."""
    hidden = ad.tanh(ad.add(ad.matmul(x, w1), b1))
    return ad.add(ad.matmul(hidden, w2), b2)


# paper-faithful gate naming: the update gate's hidden weight is w_hz
GRU_PARAM_NAMES = ("w_ir", "w_hr", "b_r", "w_iu", "w_hz", "b_u", "w_in", "w_hn", "b_n")


def gru_cell_forward(x, h, params: Mapping[str, object]):
    """One GRU step.

    r = sig(x W_ir + h W_hr + b_r)
    u = sig(x W_iu + h W_hz + b_u)
    n = tanh(x W_in + (r * h) W_hn + b_n)
    h' = (1 - u) * n + u * h
    """
    r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, params["w_ir"]),
                                 ad.matmul(h, params["w_hr"])), params["b_r"]))
    u = ad.sigmoid(ad.add(ad.add(ad.matmul(x, params["w_iu"]),
                                 ad.matmul(h, params["w_hz"])), params["b_u"]))
    n = ad.tanh(ad.add(ad.add(ad.matmul(x, params["w_in"]),
                              ad.matmul(ad.mul(r, h), params["w_hn"])), params["b_n"]))
    one_minus_u = ad.add(1.0, ad.mul(u, -1.0))
    return ad.add(ad.mul(one_minus_u, n), ad.mul(u, h))


def dropout(x: np.ndarray, rate: float, rng: RngStream | None = None,
            training: bool = True) -> np.ndarray:
    """Inverted dropout on a plain array (used on encoder inputs only)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode requires an RngStream")
    mask = rng.random(x.shape) >= rate
    return x * (mask / (1.0 - rate))


def init_linear(n_in: int, n_out: int, rng: RngStream) -> np.ndarray:
    """Uniform(-1/sqrt(n_in), 1/sqrt(n_in)) weights."""
    bound = 1.0 / np.sqrt(n_in)
    return rng.uniform(-bound, bound, (n_in, n_out))


def init_mlp2(n_in: int, n_hidden: int, n_out: int, rng: RngStream,
              prefix: str) -> dict[str, np.ndarray]:
    return {
        f"{prefix}_w1": init_linear(n_in, n_hidden, rng),
        f"{prefix}_b1": np.zeros(n_hidden),
        f"{prefix}_w2": init_linear(n_hidden, n_out, rng),
        f"{prefix}_b2": np.zeros(n_out),
    }


def init_gru(h_dim: int, rng: RngStream) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    for name in GRU_PARAM_NAMES:
        if name.startswith("w"):
            params[name] = init_linear(h_dim, h_dim, rng)
        else:
            params[name] = np.zeros(h_dim)
    return params
