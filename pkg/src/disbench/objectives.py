"""Loss terms for the six regularised VAE objectives.

All functions take autodiff tensors of shape (batch, ...) and return scalar
tensors.  Per-sample quantities are summed over latent dimensions / pixels and
averaged over the batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, UsageError

LOG_2PI = math.log(2.0 * math.pi)

OBJECTIVES = ("beta_vae", "annealed_vae", "factor_vae", "beta_tcvae", "dip_vae_i", "dip_vae_ii")

HYPERPARAMETER_NAMES = {
    "beta_vae": "beta",
    "annealed_vae": "c_max",
    "factor_vae": "gamma",
    "beta_tcvae": "beta",
    "dip_vae_i": "lambda_od",
    "dip_vae_ii": "lambda_od",
}

PAPER_GRIDS = {
    "beta_vae": (1.0, 2.0, 4.0, 6.0, 8.0, 16.0),
    "annealed_vae": (5.0, 10.0, 25.0, 50.0, 75.0, 100.0),
    "factor_vae": (10.0, 20.0, 30.0, 40.0, 50.0, 100.0),
    "dip_vae_i": (1.0, 2.0, 5.0, 10.0, 20.0, 50.0),
    "dip_vae_ii": (1.0, 2.0, 5.0, 10.0, 20.0, 50.0),
    "beta_tcvae": (1.0, 2.0, 4.0, 6.0, 8.0, 10.0),
}

ANNEALED_GAMMA = 1000.0
PAPER_ANNEALED_THRESHOLD = 100_000
PAPER_STEPS = 300_000


@dataclass(frozen=True)
class ObjectiveConfig:
    """One objective plus its swept hyperparameter.

    ``iteration_threshold`` only matters for the AnnealedVAE; ``None`` means
    one third of the training steps, the ratio of the paper-scale schedule.
    """

    kind: str
    value: float
    iteration_threshold: int | None = None
    annealed_gamma: float = ANNEALED_GAMMA
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in OBJECTIVES:
            raise ConfigurationError(f"unknown objective {self.kind!r}")
        object.__setattr__(self, "value", float(self.value))

    @property
    def hyperparameter_name(self):
        return HYPERPARAMETER_NAMES[self.kind]

    @property
    def lambda_od(self):
        return self.value

    @property
    def lambda_d(self):
        if self.kind == "dip_vae_i":
            return 10.0 * self.value
        if self.kind == "dip_vae_ii":
            return self.value
        raise ConfigurationError(f"{self.kind} has no lambda_d")

    def threshold_for(self, steps):
        if self.iteration_threshold is not None:
            return int(self.iteration_threshold)
        return max(1, int(round(steps * PAPER_ANNEALED_THRESHOLD / PAPER_STEPS)))

    def to_dict(self):
        return {"kind": self.kind, "value": self.value,
                "iteration_threshold": self.iteration_threshold,
                "annealed_gamma": self.annealed_gamma}

    @classmethod
    def from_dict(cls, data):
        return cls(kind=data["kind"], value=data["value"],
                   iteration_threshold=data.get("iteration_threshold"),
                   annealed_gamma=data.get("annealed_gamma", ANNEALED_GAMMA))


def grid(kind):
    return [ObjectiveConfig(kind, v) for v in PAPER_GRIDS[kind]]


# -- shared terms -------------------------------------------------------------

def kl_term(mean, log_variance):
    """KL(N(mean, diag exp(log_variance)) || N(0, I)), batch-averaged."""
    per_dim = 0.5 * (ad.square(mean) + ad.exp(log_variance) - 1.0 - log_variance)
    return per_dim.sum(axis=-1).mean()


def recon_nll(logits, x):
    """Bernoulli negative log-likelihood from logits, summed over pixels.

    softplus(l) - x*l is the cross-entropy form; it accepts targets in [0, 1].
    """
    x = x if isinstance(x, ad.Tensor) else ad.tensor(x)
    per_pixel = ad.softplus(logits) - x * logits
    return per_pixel.sum(axis=-1).mean()


def reparameterize(mean, log_variance, noise):
    return mean + ad.exp(0.5 * log_variance) * noise


def beta_vae_loss(recon, kl, beta):
    return recon + beta * kl


def annealed_capacity(step, c_max, threshold):
    if threshold <= 0:
        raise UsageError("iteration threshold must be positive")
    return c_max * min(step / threshold, 1.0)


def annealed_vae_loss(recon, kl, step, c_max, gamma, threshold):
    capacity = annealed_capacity(step, c_max, threshold)
    return recon + gamma * ad.absolute(kl - capacity)


# -- FactorVAE ----------------------------------------------------------------

def shuffle_dims(z, rng):
    """Permute every column independently (samples from the product of marginals)."""
    z = np.asarray(z)
    out = np.empty_like(z)
    for j in range(z.shape[1]):
        out[:, j] = z[rng.permutation(z.shape[0]), j]
    return out


def density_ratio_tc(logits):
    """Total-correlation estimate from discriminator logits (class 0 = joint)."""
    return (logits[:, 0:1] - logits[:, 1:2]).mean()


def discriminator_loss(logits_joint, logits_shuffled):
    """Cross-entropy of telling joint samples (class 0) from shuffled ones (class 1)."""
    log_p_joint = logits_joint[:, 0:1] - ad.logsumexp(logits_joint, axis=1, keepdims=True)
    log_p_shuf = logits_shuffled[:, 1:2] - ad.logsumexp(logits_shuffled, axis=1, keepdims=True)
    return -0.5 * (log_p_joint.mean() + log_p_shuf.mean())


# -- beta-TCVAE ---------------------------------------------------------------

def gaussian_log_density(z, mean, log_variance):
    diff = z - mean
    return -0.5 * (LOG_2PI + log_variance + ad.square(diff) * ad.exp(-log_variance))


def total_correlation_mws(z, mean, log_variance, dataset_size):
    """Minibatch-weighted-sampling estimate of TC(q(z)) in nats.

    log q(z_i) ~= logsumexp_j log q(z_i | x_j) - log(N M), and likewise for
    each marginal q(z_ij).  Biased, but cheap and differentiable.
    """
    m, d = z.shape
    if m < 2:
        raise UsageError("the TC estimate needs a batch of at least 2")
    if d == 1:
        return ad.tensor(0.0) * z.sum()
    log_norm = math.log(dataset_size * m)
    pairwise = gaussian_log_density(z.reshape(m, 1, d), mean.reshape(1, m, d),
                                    log_variance.reshape(1, m, d))
    log_qz = ad.logsumexp(pairwise.sum(axis=2), axis=1) - log_norm
    log_marginals = (ad.logsumexp(pairwise, axis=1) - log_norm).sum(axis=1)
    return (log_qz - log_marginals).mean()


def beta_tcvae_loss(z, mean, log_variance, recon, kl, beta, dataset_size):
    tc = total_correlation_mws(z, mean, log_variance, dataset_size)
    return recon + kl + (beta - 1.0) * tc, tc


# -- DIP-VAE ------------------------------------------------------------------

def dip_covariance(mean, log_variance, mode):
    """Cov over the batch of the encoder means; mode II adds E[diag sigma^2]."""
    m, d = mean.shape
    centered = mean - mean.mean(axis=0, keepdims=True)
    cov = (centered.T @ centered) * (1.0 / m)
    if mode == "ii":
        cov = cov + np.eye(d) * ad.exp(log_variance).mean(axis=0, keepdims=True)
    elif mode != "i":
        raise ConfigurationError(f"DIP mode must be 'i' or 'ii', got {mode!r}")
    return cov


def dip_vae_penalty(mean, log_variance, mode, lambda_od, lambda_d):
    if mean.shape[0] < 2:
        raise UsageError("DIP penalties need a batch of at least 2")
    cov = dip_covariance(mean, log_variance, mode)
    d = cov.shape[0]
    off = cov * (1.0 - np.eye(d))
    diag = (cov * np.eye(d)).sum(axis=1)
    return lambda_od * ad.square(off).sum() + lambda_d * ad.square(diag - 1.0).sum()
