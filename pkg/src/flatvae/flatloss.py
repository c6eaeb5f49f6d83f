"""Metric-tensor machinery and the flat-manifold objective.

The decoder is treated as a map f from latent to observation space with
metric tensor G(z) = J(z)^T J(z). J is approximated by per-axis forward
differences built from 1 + latent_dim recorded decoder passes, so the
penalty ||G - c^2 I||_F^2 stays differentiable in the decoder weights
without any second-order machinery. Latent mixup supplies the evaluation
points, and the squared scale c^2 is the batch mean of tr(G)/latent_dim,
treated as a constant like a batch-normalisation statistic.
"""

from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd
from .errors import ContractViolation, TrainingFault
from .ndtensor import Tensor
from .nets import DecoderNet, FmvaeModel, reconstruction_constraint
from .vhp import kl_upper_bound


@dataclass
class MetricSample:
    z: np.ndarray  # [latent_dim]
    jacobian: np.ndarray  # [data_dim, latent_dim]
    metric: np.ndarray  # [latent_dim, latent_dim], exactly J^T J


@dataclass
class MixupBatch:
    partner: np.ndarray  # permutation giving each row its partner
    alpha: np.ndarray  # one interpolation weight per pair
    z_aug: Tensor  # (1 - alpha) * z_i + alpha * z_j


@dataclass
class LossBreakdown:
    """Scalar loss terms; total = constraint_c + beta * kl_bound_f + eta * flat_penalty."""

    total: Tensor
    constraint_c: Tensor
    kl_bound_f: Tensor
    flat_penalty: Tensor
    c_squared: float

    def values(self) -> dict:
        return {
            "total": self.total.item(),
            "constraint": self.constraint_c.item(),
            "kl_bound": self.kl_bound_f.item(),
            "flat_penalty": self.flat_penalty.item(),
            "c_squared": self.c_squared,
        }


def _as_decode_fn(decoder):
    if isinstance(decoder, DecoderNet):
        return decoder.decode
    if isinstance(decoder, FmvaeModel):
        return decoder.decode
    return decoder


def jacobian_columns(decoder: DecoderNet, z: Tensor, h: float) -> "list[Tensor]":
    """Forward-difference Jacobian columns, one recorded pass per latent axis.

    Column t is (f(z + h e_t) - f(z)) / h for the batch, shape [B, data_dim].
    Exact for affine maps at any h; gradients w.r.t. the decoder weights flow
    through every pass.
    """
    if h <= 0:
        raise ContractViolation(f"jacobian step must be positive, got {h}")
    b, n_z = z.shape
    shifted = [z]
    for t in range(n_z):
        e = np.zeros(n_z)
        e[t] = h
        shifted.append(nd.add(z, Tensor(e)))
    out = decoder.observation_map(nd.concat(shifted, axis=0))
    f0 = nd.slice_axis(out, 0, 0, b)
    cols = []
    for t in range(n_z):
        ft = nd.slice_axis(out, 0, (t + 1) * b, (t + 2) * b)
        cols.append(nd.scale(nd.sub(ft, f0), 1.0 / h))
    return cols


def approx_jacobian(decoder, z: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Forward-difference Jacobian on plain arrays.

    Accepts a decoder net, a model, or any callable mapping [B, latent] to
    [B, data]. Returns [data_dim, latent_dim] for a single point, else
    [B, data_dim, latent_dim].
    """
    if h <= 0:
        raise ContractViolation(f"jacobian step must be positive, got {h}")
    decode = _as_decode_fn(decoder)
    z = np.asarray(z, dtype=float)
    one = z.ndim == 1
    zb = np.atleast_2d(z)
    b, n_z = zb.shape
    stacked = np.concatenate([zb] + [zb + h * np.eye(n_z)[t] for t in range(n_z)], axis=0)
    out = np.atleast_2d(np.asarray(decode(stacked), dtype=float))
    f0 = out[:b]
    jac = np.stack([(out[(t + 1) * b:(t + 2) * b] - f0) / h for t in range(n_z)], axis=2)
    return jac[0] if one else jac


def metric_tensor(jacobian: np.ndarray) -> np.ndarray:
    """G = J^T J for one Jacobian or a batch of them."""
    j = np.asarray(jacobian, dtype=float)
    if j.ndim == 2:
        return j.T @ j
    return np.einsum("bxi,bxj->bij", j, j)


def metric_samples(decoder, z_points: np.ndarray, h: float = 1e-4) -> "list[MetricSample]":
    jac = approx_jacobian(decoder, np.atleast_2d(z_points), h)
    return [MetricSample(z=z.copy(), jacobian=j, metric=j.T @ j)
            for z, j in zip(np.atleast_2d(z_points), jac)]


def draw_mixup(batch_size: int, rng: np.random.Generator, alpha0: float):
    """Partner permutation plus one U(-alpha0, 1 + alpha0) weight per pair."""
    if batch_size < 2:
        raise ContractViolation(f"mixup needs a batch of at least 2, got {batch_size}")
    partner = rng.permutation(batch_size)
    alpha = rng.uniform(-alpha0, 1.0 + alpha0, size=batch_size)
    return partner, alpha


def apply_mixup(z: Tensor, partner: np.ndarray, alpha: np.ndarray) -> Tensor:
    """(1 - alpha) * z_i + alpha * z_partner(i), exactly."""
    b, n_z = z.shape
    a = np.repeat(np.asarray(alpha, dtype=float)[:, None], n_z, axis=1)
    z_j = nd.permute_rows(z, partner)
    return nd.add(nd.mul(z, Tensor(1.0 - a)), nd.mul(z_j, Tensor(a)))


def mixup_batch(z: Tensor, rng: np.random.Generator, alpha0: float) -> MixupBatch:
    partner, alpha = draw_mixup(z.shape[0], rng, alpha0)
    return MixupBatch(partner=partner, alpha=alpha, z_aug=apply_mixup(z, partner, alpha))


def scale_factor(metrics: np.ndarray) -> float:
    """Batch mean of tr(G) / latent_dim."""
    g = np.asarray(metrics, dtype=float)
    if g.ndim == 2:
        g = g[None]
    n_z = g.shape[-1]
    return float(np.trace(g, axis1=1, axis2=2).mean() / n_z)


def flat_penalty(metrics: np.ndarray, c_squared: float) -> float:
    """Batch mean of the squared Frobenius distance from c^2 I."""
    g = np.asarray(metrics, dtype=float)
    if g.ndim == 2:
        g = g[None]
    dev = g - c_squared * np.eye(g.shape[-1])
    return float((dev ** 2).sum(axis=(1, 2)).mean())


def flat_penalty_loss(decoder: DecoderNet, z_points: Tensor, h: float,
                      fixed_c_squared: float | None = None):
    """Recorded flatness penalty at the given latent points.

    Returns (penalty tensor, c_squared float). The scale is read off the
    current batch and excluded from gradient flow; ``fixed_c_squared``
    overrides it for the ablations.
    """
    cols = jacobian_columns(decoder, z_points, h)
    n_z = len(cols)
    diag = []  # G_tt as [B] tensors
    off = []  # G_ts, s < t
    for t in range(n_z):
        diag.append(nd.tensor_sum(nd.square(cols[t]), axis=1))
        for s in range(t + 1, n_z):
            off.append(nd.tensor_sum(nd.mul(cols[t], cols[s]), axis=1))
    if fixed_c_squared is None:
        # mean over batch samples and diagonal elements, detached from the tape
        c2 = float(np.mean([d.data.mean() for d in diag]))
    else:
        c2 = float(fixed_c_squared)
    per_row = None
    for d in diag:
        term = nd.square(nd.add_scalar(d, -c2))
        per_row = term if per_row is None else nd.add(per_row, term)
    for o in off:
        per_row = nd.add(per_row, nd.scale(nd.square(o), 2.0))
    return nd.tensor_mean(per_row), c2


def fmvae_loss(model: FmvaeModel, x_batch: Tensor, beta: float, config,
               rng: np.random.Generator) -> LossBreakdown:
    """Full objective: constraint + beta * KL bound + eta * flatness penalty.

    The penalty is evaluated at mixup points between the posterior draws
    (or at the draws themselves when mixup is disabled); with eta = 0 the
    metric machinery is skipped entirely and the objective reduces to the
    constrained hierarchical-prior one.
    """
    est = kl_upper_bound(model, x_batch, config.k_importance, rng)
    constraint = reconstruction_constraint(model.decoder, x_batch, est.z_sample)
    if config.eta > 0.0:
        if config.mixup_enabled:
            z_pen = mixup_batch(est.z_sample, rng, config.alpha0).z_aug
        else:
            z_pen = est.z_sample
        penalty, c2 = flat_penalty_loss(model.decoder, z_pen,
                                        config.jacobian_step_train, config.fixed_c2)
    else:
        penalty, c2 = Tensor(0.0), 0.0
    total = compose_total(constraint, est.f_value, penalty, beta, config.eta)
    breakdown = LossBreakdown(total=total, constraint_c=constraint,
                              kl_bound_f=est.f_value, flat_penalty=penalty, c_squared=c2)
    for name in ("constraint", "kl_bound", "flat_penalty", "total"):
        if not np.isfinite(breakdown.values()[name]):
            raise TrainingFault(f"non-finite {name} in loss")
    return breakdown


def compose_total(constraint: Tensor, kl_bound: Tensor, penalty: Tensor,
                  beta: float, eta: float) -> Tensor:
    total = nd.add(constraint, nd.scale(kl_bound, beta))
    if eta > 0.0:
        total = nd.add(total, nd.scale(penalty, eta))
    return total
