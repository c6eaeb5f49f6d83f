"""Constrained training loop with a self-tuning KL weight.

The objective is total = C + beta * F + eta * R, where C is the
per-dimension reconstruction constraint, F the hierarchical-prior KL bound
and R the flatness penalty. Training starts in an initial phase in which
only the encoder/decoder parameters move and beta stays frozen; once the
smoothed constraint first drops below kappa^2 the phase ends for good,
after which all four networks train and beta follows

    beta_t = beta_{t-1} * exp[nu * f(beta_{t-1}, delta; tau) * delta],
    f(beta, delta; tau) = (1 - H(delta)) * tanh(tau * (beta - 1)) - H(delta),

with delta the smoothed constraint violation and H the Heaviside step
(H(0) = 1). While violated, beta shrinks, weighting reconstruction; once
satisfied, beta relaxes to 1.
"""

import csv
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import flatloss
from .data import epoch_permutation
from .errors import ContractViolation, TrainingFault
from .ndtensor import AdamState, Tape, Tensor, adam_step
from .nets import FmvaeModel, build_model

LOG_COLUMNS = ["step", "beta", "c_hat", "total", "constraint", "kl_bound",
               "flat_penalty", "c_squared"]

CHECKPOINT_MAGIC = b"FMVAECP1"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    kappa: float = 0.025
    nu: float = 1.0
    tau: float = 3.0
    k_importance: int = 16
    eta: float = 1000.0
    alpha0: float = 0.1
    beta_init: float = 1e-2
    c_hat_smoothing: float = 0.9
    learning_rate: float = 1e-4
    batch_size: int = 128
    max_steps: int = 10_000
    jacobian_step_train: float = 1e-2
    seed: int = 0
    mixup_enabled: bool = True
    fixed_c2: float | None = None

    def validate(self) -> "TrainConfig":
        checks = [
            (self.kappa > 0, "kappa must be > 0"),
            (self.nu > 0, "nu must be > 0"),
            (self.tau > 0, "tau must be > 0"),
            (self.eta >= 0, "eta must be >= 0"),
            (self.k_importance >= 1, "k_importance must be >= 1"),
            (self.alpha0 >= 0, "alpha0 must be >= 0"),
            (self.beta_init > 0, "beta_init must be > 0"),
            (0 < self.c_hat_smoothing < 1, "c_hat_smoothing must be in (0, 1)"),
            (self.batch_size >= 2, "batch_size must be >= 2"),
            (self.max_steps >= 0, "max_steps must be >= 0"),
            (self.jacobian_step_train > 0, "jacobian_step_train must be > 0"),
            (self.fixed_c2 is None or self.fixed_c2 >= 0, "fixed_c2 must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ContractViolation(msg)
        return self


@dataclass
class TrainState:
    t: int
    beta: float
    c_hat: float | None
    initial_phase: bool
    adam_enc_dec: AdamState
    adam_prior: AdamState
    rng: np.random.Generator

    @classmethod
    def fresh(cls, model: FmvaeModel, config: TrainConfig) -> "TrainState":
        ed = [p for _, p in model.encoder_decoder_params()]
        pr = [p for _, p in model.prior_params()]
        return cls(
            t=0, beta=config.beta_init, c_hat=None, initial_phase=True,
            adam_enc_dec=AdamState.for_params(ed, learning_rate=config.learning_rate),
            adam_prior=AdamState.for_params(pr, learning_rate=config.learning_rate),
            rng=np.random.default_rng(config.seed),
        )


def heaviside(delta: float) -> float:
    """H with the boundary counted as violated: H(0) = 1."""
    return 1.0 if delta >= 0.0 else 0.0


def f_beta(beta: float, delta: float, tau: float) -> float:
    if tau <= 0:
        raise ContractViolation(f"tau must be > 0, got {tau}")
    h = heaviside(delta)
    return (1.0 - h) * math.tanh(tau * (beta - 1.0)) - h


def update_beta(beta: float, c_hat: float, config: TrainConfig) -> float:
    delta = c_hat - config.kappa ** 2
    # exponent clamp and floor only guard IEEE range; they never engage for
    # sane (nu, tau, kappa) where |nu * delta| stays small
    exponent = min(max(config.nu * f_beta(beta, delta, config.tau) * delta, -700.0), 700.0)
    return max(beta * math.exp(exponent), 1e-12)


def update_c_hat(c_hat: float | None, batch_constraint: float, smoothing: float) -> float:
    """Exponential moving average; the first batch seeds it directly."""
    if not 0.0 < smoothing < 1.0:
        raise ContractViolation(f"smoothing must be in (0, 1), got {smoothing}")
    if c_hat is None:
        return batch_constraint
    return (1.0 - smoothing) * batch_constraint + smoothing * c_hat


def train_step(model: FmvaeModel, x_batch: np.ndarray, state: TrainState,
               config: TrainConfig) -> flatloss.LossBreakdown:
    """One pass of the training loop body; mutates model and state in place."""
    named_ed = model.encoder_decoder_params()
    named_pr = model.prior_params()
    for _, p in named_ed + named_pr:
        p.zero_grad()
    try:
        with Tape() as tape:
            parts = flatloss.fmvae_loss(model, Tensor(x_batch), state.beta, config, state.rng)
            state.c_hat = update_c_hat(state.c_hat, parts.constraint_c.item(),
                                       config.c_hat_smoothing)
            if state.initial_phase and state.c_hat < config.kappa ** 2:
                state.initial_phase = False
            if not state.initial_phase:
                state.beta = update_beta(state.beta, state.c_hat, config)
            total = flatloss.compose_total(parts.constraint_c, parts.kl_bound_f,
                                           parts.flat_penalty, state.beta, config.eta)
            tape.backward(total)
        adam_step([p for _, p in named_ed], state.adam_enc_dec, [n for n, _ in named_ed])
        if not state.initial_phase:
            adam_step([p for _, p in named_pr], state.adam_prior, [n for n, _ in named_pr])
    except TrainingFault as err:
        raise TrainingFault(f"step {state.t}: {err}") from err
    state.t += 1
    return replace(parts, total=total)


@dataclass
class FitResult:
    state: TrainState
    log: "list[dict]"


def fit(model: FmvaeModel, dataset, config: TrainConfig, log_path=None,
        state: TrainState | None = None) -> FitResult:
    """Run the loop to ``max_steps``, logging one row per step.

    Mini-batches come from a seeded shuffle that is a pure function of
    (seed, epoch), so a run resumed from a checkpoint consumes exactly the
    batches the uninterrupted run would have.
    """
    config.validate()
    samples = dataset.samples if hasattr(dataset, "samples") else np.asarray(dataset)
    n = samples.shape[0]
    if n < 1:
        raise ContractViolation("empty dataset")
    if state is None:
        state = TrainState.fresh(model, config)
    per_epoch = max(n // config.batch_size, 1)
    bs = min(config.batch_size, n)

    rows = []
    writer = _LogWriter(log_path) if log_path is not None else None
    perm_epoch, perm = -1, None
    while state.t < config.max_steps:
        epoch, pos = divmod(state.t, per_epoch)
        if epoch != perm_epoch:
            perm = epoch_permutation(n, config.seed, epoch)
            perm_epoch = epoch
        batch = samples[perm[pos * bs:(pos + 1) * bs]]
        step_index = state.t
        parts = train_step(model, batch, state, config)
        row = {"step": step_index, "beta": state.beta, "c_hat": state.c_hat,
               **parts.values()}
        rows.append(row)
        if writer is not None:
            writer.write(row)
    if writer is not None:
        writer.close()
    return FitResult(state=state, log=rows)


class _LogWriter:
    def __init__(self, path):
        self._fh = open(path, "a", newline="")
        if self._fh.tell() == 0:
            self._fh.write(",".join(LOG_COLUMNS) + "\n")
        self._writer = csv.DictWriter(self._fh, fieldnames=LOG_COLUMNS,
                                      extrasaction="ignore")

    def write(self, row: dict):
        self._writer.writerow({k: repr(v) if isinstance(v, float) else v
                               for k, v in row.items()})
        self._fh.flush()

    def close(self):
        self._fh.close()


# -- checkpointing -----------------------------------------------------------
#
# Layout (version 1): 8-byte magic "FMVAECP1", uint32 little-endian header
# length, UTF-8 JSON header, then the float64 little-endian payload arrays
# in the order listed by the header: model weights, then Adam first/second
# moments for the encoder/decoder group, then for the prior group.


def save_checkpoint(path, model: FmvaeModel, state: TrainState, config: TrainConfig) -> None:
    named = model.named_params()
    header = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "state": {"t": state.t, "beta": state.beta, "c_hat": state.c_hat,
                  "initial_phase": state.initial_phase,
                  "adam_enc_dec_steps": state.adam_enc_dec.step_count,
                  "adam_prior_steps": state.adam_prior.step_count},
        "rng_state": state.rng.bit_generator.state,
        "model": {"data_dim": model.data_dim, "latent_dim": model.latent_dim,
                  "likelihood": model.likelihood, "hidden": model.hidden},
        "weights": [{"name": n, "shape": list(p.shape)} for n, p in named],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, p in named:
            fh.write(p.data.astype("<f8").tobytes())
        for adam in (state.adam_enc_dec, state.adam_prior):
            for arr in adam.first_moment + adam.second_moment:
                fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (model, state, config); the triple resumes bit-identically."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ContractViolation(f"not a checkpoint file (magic {magic!r})")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header["version"] != CHECKPOINT_VERSION:
            raise ContractViolation(f"unsupported checkpoint version {header['version']}")
        cfg_dict = header["config"]
        config = TrainConfig(**cfg_dict)
        m = header["model"]
        model = build_model(m["data_dim"], m["latent_dim"], m["hidden"]["encoder"],
                            m["hidden"]["decoder"], m["hidden"]["prior_encoder"],
                            m["hidden"]["prior_decoder"], m["likelihood"], seed=0)
        named = model.named_params()
        manifest = header["weights"]
        if [n for n, _ in named] != [w["name"] for w in manifest]:
            raise ContractViolation("checkpoint weight manifest does not match architecture")

        def read_array(shape):
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ContractViolation("truncated checkpoint payload")
            return np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)

        for (_, p), w in zip(named, manifest):
            p.data = np.ascontiguousarray(read_array(tuple(w["shape"])))

        state = TrainState.fresh(model, config)
        st = header["state"]
        state.t = st["t"]
        state.beta = st["beta"]
        state.c_hat = st["c_hat"]
        state.initial_phase = st["initial_phase"]
        state.adam_enc_dec.step_count = st["adam_enc_dec_steps"]
        state.adam_prior.step_count = st["adam_prior_steps"]
        for adam in (state.adam_enc_dec, state.adam_prior):
            adam.first_moment = [read_array(a.shape) for a in adam.first_moment]
            adam.second_moment = [read_array(a.shape) for a in adam.second_moment]
        bg = np.random.PCG64()
        bg.state = header["rng_state"]
        state.rng = np.random.Generator(bg)
    return model, state, config


def read_log(path) -> "list[dict]":
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]
