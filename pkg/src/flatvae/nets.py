"""MLP building blocks, probability heads, and the four-network model.

The model couples an encoder producing a Gaussian posterior over latents z
with a decoder likelihood over observations x, plus a learned two-stage
prior: a prior encoder mapping z to a Gaussian over an auxiliary variable
of the same width, and a prior decoder mapping that variable back to a
Gaussian over z.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import ndtensor as nd
from .errors import ContractViolation
from .ndtensor import Tensor

LOG_2PI = math.log(2.0 * math.pi)
LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


@dataclass
class DenseLayer:
    weight: Tensor  # [in_dim, out_dim]
    bias: Tensor  # [out_dim]
    activation: str = "none"  # "relu" or "none"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ContractViolation(f"layer expects width {self.in_dim}, input has shape {x.shape}")
        h = nd.add(nd.matmul(x, self.weight), self.bias)
        return nd.relu(h) if self.activation == "relu" else h


def dense(in_dim: int, out_dim: int, activation: str, rng: np.random.Generator,
          weight_scale: float = 1.0) -> DenseLayer:
    # fan-in-scaled uniform init, biases zero
    bound = weight_scale * math.sqrt(6.0 / in_dim)
    w = Tensor(rng.uniform(-bound, bound, size=(in_dim, out_dim)), requires_grad=True)
    b = Tensor(np.zeros(out_dim), requires_grad=True)
    return DenseLayer(w, b, activation)


def mlp(in_dim: int, widths: "list[int]", rng: np.random.Generator) -> "list[DenseLayer]":
    layers = []
    prev = in_dim
    for w in widths:
        layers.append(dense(prev, w, "relu", rng))
        prev = w
    return layers


def mlp_forward(layers: "list[DenseLayer]", x: Tensor) -> Tensor:
    for layer in layers:
        x = layer(x)
    return x


def layer_params(prefix: str, layers: "list[DenseLayer]") -> "list[tuple[str, Tensor]]":
    out = []
    for i, l in enumerate(layers):
        out.append((f"{prefix}.{i}.weight", l.weight))
        out.append((f"{prefix}.{i}.bias", l.bias))
    return out


@dataclass
class GaussianParams:
    """Diagonal-Gaussian parameters; producers clamp log_variance to [-10, 10]."""

    mean: Tensor
    log_variance: Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_variance.shape:
            raise ContractViolation(
                f"mean shape {self.mean.shape} != log_variance shape {self.log_variance.shape}")


@dataclass
class GaussianNet:
    """ReLU trunk with linear mean / log-variance heads."""

    trunk: "list[DenseLayer]"
    mean_head: DenseLayer
    logvar_head: DenseLayer

    def __call__(self, x: Tensor) -> GaussianParams:
        h = mlp_forward(self.trunk, x)
        return GaussianParams(
            mean=self.mean_head(h),
            log_variance=nd.clip(self.logvar_head(h), LOGVAR_MIN, LOGVAR_MAX),
        )

    def params(self, prefix: str) -> "list[tuple[str, Tensor]]":
        out = layer_params(f"{prefix}.trunk", self.trunk)
        out += [(f"{prefix}.mean.weight", self.mean_head.weight),
                (f"{prefix}.mean.bias", self.mean_head.bias),
                (f"{prefix}.logvar.weight", self.logvar_head.weight),
                (f"{prefix}.logvar.bias", self.logvar_head.bias)]
        return out


@dataclass
class DecoderNet:
    """ReLU trunk with an observation head.

    gaussian: the head is the mean and a standalone per-dimension
    log-variance vector is learned alongside; bernoulli: the head is logits
    and the observation map squashes them through a sigmoid.
    """

    trunk: "list[DenseLayer]"
    out_head: DenseLayer
    likelihood: str  # "gaussian" | "bernoulli"
    log_variance: Tensor | None = None  # [data_dim], gaussian only

    def head_output(self, z: Tensor) -> Tensor:
        return self.out_head(mlp_forward(self.trunk, z))

    def observation_map(self, z: Tensor) -> Tensor:
        """f(z): the decoder as a map into observation space."""
        out = self.head_output(z)
        return nd.sigmoid(out) if self.likelihood == "bernoulli" else out

    def decode(self, z: np.ndarray) -> np.ndarray:
        """Observation map on plain arrays (never recorded)."""
        one = z.ndim == 1
        out = self.observation_map(Tensor(np.atleast_2d(z))).data
        return out[0] if one else out

    def params(self, prefix: str) -> "list[tuple[str, Tensor]]":
        out = layer_params(f"{prefix}.trunk", self.trunk)
        out += [(f"{prefix}.out.weight", self.out_head.weight),
                (f"{prefix}.out.bias", self.out_head.bias)]
        if self.log_variance is not None:
            out.append((f"{prefix}.logvar", self.log_variance))
        return out


@dataclass
class FmvaeModel:
    encoder: GaussianNet  # x -> posterior over z
    decoder: DecoderNet  # z -> likelihood over x
    prior_encoder: GaussianNet  # z -> auxiliary posterior
    prior_decoder: GaussianNet  # auxiliary -> Gaussian over z
    likelihood: str
    latent_dim: int
    data_dim: int
    hidden: dict = field(default_factory=dict)  # widths per net, for checkpointing

    def encoder_decoder_params(self) -> "list[tuple[str, Tensor]]":
        return self.encoder.params("encoder") + self.decoder.params("decoder")

    def prior_params(self) -> "list[tuple[str, Tensor]]":
        return self.prior_encoder.params("prior_encoder") + self.prior_decoder.params("prior_decoder")

    def named_params(self) -> "list[tuple[str, Tensor]]":
        return self.encoder_decoder_params() + self.prior_params()

    # plain-array conveniences for analysis (no tape is ever active there)

    def encode_mean(self, x: np.ndarray) -> np.ndarray:
        return self.encoder(Tensor(np.atleast_2d(x))).mean.data

    def decode(self, z: np.ndarray) -> np.ndarray:
        return self.decoder.decode(z)


def build_model(data_dim: int, latent_dim: int, encoder_hidden: "list[int]",
                decoder_hidden: "list[int]", prior_encoder_hidden: "list[int]",
                prior_decoder_hidden: "list[int]", likelihood: str = "gaussian",
                seed: int = 0) -> FmvaeModel:
    if likelihood not in ("gaussian", "bernoulli"):
        raise ContractViolation(f"unknown likelihood {likelihood!r}")
    rng = np.random.default_rng(seed)

    def gaussian_net(in_dim, widths, out_dim):
        trunk = mlp(in_dim, widths, rng)
        last = widths[-1] if widths else in_dim
        return GaussianNet(trunk, dense(last, out_dim, "none", rng),
                           dense(last, out_dim, "none", rng))

    encoder = gaussian_net(data_dim, encoder_hidden, latent_dim)
    dec_trunk = mlp(latent_dim, decoder_hidden, rng)
    dec_last = decoder_hidden[-1] if decoder_hidden else latent_dim
    decoder = DecoderNet(
        trunk=dec_trunk,
        out_head=dense(dec_last, data_dim, "none", rng),
        likelihood=likelihood,
        log_variance=Tensor(np.zeros(data_dim), requires_grad=True) if likelihood == "gaussian" else None,
    )
    prior_encoder = gaussian_net(latent_dim, prior_encoder_hidden, latent_dim)
    prior_decoder = gaussian_net(latent_dim, prior_decoder_hidden, latent_dim)
    return FmvaeModel(
        encoder=encoder, decoder=decoder, prior_encoder=prior_encoder,
        prior_decoder=prior_decoder, likelihood=likelihood,
        latent_dim=latent_dim, data_dim=data_dim,
        hidden={"encoder": list(encoder_hidden), "decoder": list(decoder_hidden),
                "prior_encoder": list(prior_encoder_hidden),
                "prior_decoder": list(prior_decoder_hidden)},
    )


# -- distributions -----------------------------------------------------------


def reparam_sample(p: GaussianParams, noise: Tensor) -> Tensor:
    """mean + exp(log_variance / 2) * noise; differentiable in both params."""
    if noise.shape != p.mean.shape:
        raise ContractViolation(f"noise shape {noise.shape} != mean shape {p.mean.shape}")
    return nd.add(p.mean, nd.mul(nd.exp(nd.scale(p.log_variance, 0.5)), noise))


def gaussian_logpdf(x: Tensor, p: GaussianParams) -> Tensor:
    """Per-row diagonal-Gaussian log density, summed over the last axis."""
    diff = nd.sub(x, p.mean)
    quad = nd.mul(nd.square(diff), nd.exp(nd.scale(p.log_variance, -1.0)))
    per_elem = nd.add_scalar(nd.scale(nd.add(p.log_variance, quad), -0.5), -0.5 * LOG_2PI)
    return nd.tensor_sum(per_elem, axis=per_elem.data.ndim - 1)


def standard_normal_params(shape: tuple[int, ...]) -> GaussianParams:
    z = np.zeros(shape)
    return GaussianParams(Tensor(z), Tensor(z.copy()))


def bernoulli_loglik(x: Tensor, logits: Tensor) -> Tensor:
    """Per-row log likelihood of binary x under logits, in stable form."""
    if not np.all((x.data == 0.0) | (x.data == 1.0)):
        raise ContractViolation("bernoulli log-likelihood needs x entries in {0, 1}")
    per_pixel = nd.sub(nd.mul(x, logits), nd.softplus(logits))
    return nd.tensor_sum(per_pixel, axis=per_pixel.data.ndim - 1)


def reconstruction_constraint(decoder: DecoderNet, x: Tensor, z: Tensor) -> Tensor:
    """Per-dimension reconstruction error, averaged over the batch.

    gaussian: mean squared error per dimension; bernoulli: mean cross-entropy
    per dimension. Dividing by the data width keeps the constraint threshold
    comparable across data sets.
    """
    out = decoder.head_output(z)
    if decoder.likelihood == "gaussian":
        return nd.tensor_mean(nd.square(nd.sub(x, out)))
    return nd.scale(nd.tensor_mean(nd.sub(nd.mul(x, out), nd.softplus(out))), -1.0)
