"""Importance-weighted upper bound on the posterior-prior KL term.

The learned prior over z is a two-stage construction: a standard-normal
auxiliary variable pushed through the prior decoder. Its marginal is
intractable, so the KL between the encoder posterior and the prior is
replaced by the importance-weighted bound

    F = E_x E_{z ~ q(z|x)} [ log q(z|x)
          - E_{zeta_{1..K} ~ r(zeta|z)} log (1/K) sum_i p(z|zeta_i) p(zeta_i) / r(zeta_i|z) ],

estimated with one reparameterised z per datum and K reparameterised
auxiliary draws per z. The K-term average is evaluated with a max-shifted
log-sum-exp.
"""

from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd
from .errors import ContractViolation
from .ndtensor import Tensor
from .nets import FmvaeModel, gaussian_logpdf, reparam_sample, standard_normal_params


@dataclass
class VhpEstimate:
    f_value: Tensor  # scalar bound estimate
    z_sample: Tensor  # [batch, latent_dim], the reparameterised posterior draw
    zeta_samples: Tensor  # [batch, K, latent_dim]


@dataclass
class PriorSample:
    zeta: np.ndarray  # [n, latent_dim], standard-normal draws
    z: np.ndarray  # [n, latent_dim], ancestral draws from the prior decoder


def kl_upper_bound(model: FmvaeModel, x_batch: Tensor, k: int,
                   rng: np.random.Generator) -> VhpEstimate:
    """Single-sample estimate of the importance-weighted KL bound.

    Draw order from ``rng`` is fixed (posterior noise, then auxiliary noise),
    so the estimate is a pure function of (weights, batch, rng state).
    """
    if k < 1:
        raise ContractViolation(f"importance-sample count must be >= 1, got {k}")
    b = x_batch.shape[0]
    if b < 1:
        raise ContractViolation("empty batch")
    n_z = model.latent_dim

    posterior = model.encoder(x_batch)
    z = reparam_sample(posterior, Tensor(rng.standard_normal((b, n_z))))
    log_qz = gaussian_logpdf(z, posterior)  # [b]

    aux = model.prior_encoder(z)
    mean_rep = nd.tile_rows(aux.mean, k)
    lv_rep = nd.tile_rows(aux.log_variance, k)
    aux_rep = type(aux)(mean_rep, lv_rep)
    zeta = reparam_sample(aux_rep, Tensor(rng.standard_normal((b * k, n_z))))  # [b*k, n_z]

    log_r = gaussian_logpdf(zeta, aux_rep)  # [b*k]
    log_pzeta = gaussian_logpdf(zeta, standard_normal_params((b * k, n_z)))
    prior = model.prior_decoder(zeta)
    log_pz = gaussian_logpdf(nd.tile_rows(z, k), prior)  # [b*k]

    terms = nd.reshape(nd.sub(nd.add(log_pz, log_pzeta), log_r), (b, k))
    iw = nd.add_scalar(nd.logsumexp(terms, axis=1), -float(np.log(k)))  # [b]
    f_value = nd.tensor_mean(nd.sub(log_qz, iw))
    return VhpEstimate(f_value=f_value, z_sample=z,
                       zeta_samples=nd.reshape(zeta, (b, k, n_z)))


def sample_prior(model: FmvaeModel, n: int, seed: int) -> PriorSample:
    """Ancestral sampling: standard-normal auxiliary, then the prior decoder."""
    n_z = model.latent_dim
    rng = np.random.default_rng(seed)
    zeta = rng.standard_normal((n, n_z))
    if n == 0:
        return PriorSample(zeta=zeta, z=np.zeros((0, n_z)))
    params = model.prior_decoder(Tensor(zeta))
    z = params.mean.data + np.exp(0.5 * params.log_variance.data) * rng.standard_normal((n, n_z))
    return PriorSample(zeta=zeta, z=z)
