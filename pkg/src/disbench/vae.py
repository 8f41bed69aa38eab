"""Gaussian-encoder / Bernoulli-decoder VAEs, their training loop and checkpoints."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import objectives as obj
from .errors import ConfigurationError, InputError, NonFiniteError
from .nn import AdamState, MlpSpec, adam_step, init_params, mlp_apply, mlp_forward

CHECKPOINT_FORMAT = "disbench.checkpoint/1"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and optimiser settings shared by every objective.

    Desk defaults: dense 2x64 encoder/decoder, 6 latents, batch 32, 5000 steps.
    ``paper()`` returns the paper-scale constants (used only as a reference
    preset; the convolutional architecture itself is not reproduced).
    """

    latent_dim: int = 6
    hidden: tuple = (64, 64)
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    discriminator_hidden: tuple = (64, 64)
    discriminator_learning_rate: float = 1e-3
    discriminator_beta1: float = 0.5
    discriminator_beta2: float = 0.9
    dataset_size: int = 6144
    trace_every: int = 100

    @classmethod
    def paper(cls):
        return cls(latent_dim=10, hidden=(256, 256), batch_size=64, learning_rate=1e-4,
                   discriminator_hidden=(1000,) * 6, discriminator_learning_rate=1e-4,
                   dataset_size=737_280)

    def to_dict(self):
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        out["discriminator_hidden"] = list(self.discriminator_hidden)
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["hidden"] = tuple(data.get("hidden", (64, 64)))
        data["discriminator_hidden"] = tuple(data.get("discriminator_hidden", (64, 64)))
        return cls(**data)


class VaeModel:
    def __init__(self, input_width, config: ModelConfig, rng):
        self.input_width = int(input_width)
        self.config = config
        d = config.latent_dim
        self.latent_dim = d
        self.encoder_spec = MlpSpec.hidden(input_width, config.hidden, 2 * d)
        self.decoder_spec = MlpSpec.hidden(d, tuple(reversed(config.hidden)), input_width)
        self.encoder = init_params(self.encoder_spec, input_width, rng)
        self.decoder = init_params(self.decoder_spec, d, rng)

    @property
    def params(self):
        return self.encoder + self.decoder

    def encode(self, x):
        """Graph-recording encoder; returns (mean, log_variance) tensors."""
        out = mlp_apply(self.encoder_spec, self.encoder, x)
        d = self.latent_dim
        return out[:, :d], out[:, d:]

    def decode(self, z):
        return mlp_apply(self.decoder_spec, self.decoder, z)

    def encode_numpy(self, x, chunk=8192):
        """Graph-free encoder for evaluation. Returns (mean, log_variance)."""
        x = _flatten(x, self.input_width)
        parts = [mlp_forward(self.encoder_spec, self.encoder, x[i:i + chunk])
                 for i in range(0, len(x), chunk)]
        out = np.concatenate(parts) if parts else np.zeros((0, 2 * self.latent_dim))
        return out[:, :self.latent_dim], out[:, self.latent_dim:]

    def decode_numpy(self, z):
        return mlp_forward(self.decoder_spec, self.decoder, np.asarray(z, dtype=np.float64))


class Discriminator:
    def __init__(self, latent_dim, hidden, rng):
        self.spec = MlpSpec(tuple(hidden) + (2,), ("leaky_relu",) * len(hidden) + ("identity",),
                            input_width=latent_dim)
        self.params = init_params(self.spec, latent_dim, rng)

    def __call__(self, z, frozen=False):
        params = [ad.tensor(p.data) for p in self.params] if frozen else self.params
        return mlp_apply(self.spec, params, z)


def _flatten(x, width=None):
    x = np.asarray(x, dtype=np.float64)
    x = x.reshape(x.shape[0], -1)
    if width is not None and x.shape[1] != width:
        raise InputError(f"observations have width {x.shape[1]}, model expects {width}")
    return x


def representation(model: VaeModel, x, mode="mean", rng=None):
    """Mean of q(z|x), or a single reparameterised draw from it."""
    mean, log_var = model.encode_numpy(x)
    if mode == "mean":
        return mean
    if mode != "sampled":
        raise ConfigurationError(f"representation mode must be 'mean' or 'sampled', got {mode!r}")
    if rng is None:
        raise ConfigurationError("sampled representations need an rng")
    return mean + np.exp(0.5 * log_var) * rng.standard_normal(mean.shape)


class EncoderRepresentation:
    """Picklable ``x -> codes`` callable over a model's encoder."""

    def __init__(self, model, mode="mean", rng=None):
        self.model, self.mode, self.rng = model, mode, rng

    def __call__(self, x):
        return representation(self.model, _flatten(x), self.mode, self.rng)


# -- loss assembly ------------------------------------------------------------

def vae_loss(model: VaeModel, config: obj.ObjectiveConfig, x, noise, step=0, steps=1,
             discriminator=None):
    """Total loss of one objective on a batch, with the injected noise fixed.

    Returns ``(loss, z, terms)``; ``terms`` maps term names to floats.  For the
    FactorVAE the discriminator is used with frozen parameters, so its
    gradient only reaches the VAE through z.
    """
    x = ad.tensor(_flatten(x, model.input_width))
    mean, log_var = model.encode(x)
    z = obj.reparameterize(mean, log_var, ad.tensor(noise))
    logits = model.decode(z)
    recon = obj.recon_nll(logits, x)
    kl = obj.kl_term(mean, log_var)
    terms = {}
    kind = config.kind
    if kind == "beta_vae":
        loss = obj.beta_vae_loss(recon, kl, config.value)
    elif kind == "annealed_vae":
        threshold = config.threshold_for(steps)
        terms["capacity"] = obj.annealed_capacity(step, config.value, threshold)
        loss = obj.annealed_vae_loss(recon, kl, step, config.value, config.annealed_gamma, threshold)
    elif kind == "factor_vae":
        if discriminator is None:
            raise ConfigurationError("factor_vae needs a discriminator")
        tc = obj.density_ratio_tc(discriminator(z, frozen=True))
        terms["tc"] = tc.item()
        loss = recon + kl + config.value * tc
    elif kind == "beta_tcvae":
        loss, tc = obj.beta_tcvae_loss(z, mean, log_var, recon, kl, config.value,
                                       model.config.dataset_size)
        terms["tc"] = tc.item()
    else:
        mode = "i" if kind == "dip_vae_i" else "ii"
        penalty = obj.dip_vae_penalty(mean, log_var, mode, config.lambda_od, config.lambda_d)
        terms["dip_penalty"] = penalty.item()
        loss = recon + kl + penalty
    terms.update(recon=recon.item(), kl=kl.item(), loss=loss.item())
    return loss, z, terms


def discriminator_step_loss(discriminator, z, permuted):
    return obj.discriminator_loss(discriminator(ad.tensor(z)), discriminator(ad.tensor(permuted)))


# -- training -----------------------------------------------------------------

@dataclass
class TrainedModel:
    model: VaeModel
    objective: obj.ObjectiveConfig
    seed: int
    steps: int
    trace: list = field(default_factory=list)
    final_terms: dict = field(default_factory=dict)
    ground_truth: dict = field(default_factory=dict)
    discriminator: Discriminator | None = None
    wall_time_s: float = 0.0


def _streams(seed):
    root = np.random.SeedSequence(int(seed))
    init, data, noise, disc = root.spawn(4)
    return (np.random.default_rng(init), np.random.default_rng(data),
            np.random.default_rng(noise), np.random.default_rng(disc))


def train_model(objective: obj.ObjectiveConfig, model_config: ModelConfig, ground_truth,
                seed: int, steps: int, batch_size: int | None = None, ground_truth_spec=None):
    """Train one VAE on i.i.d. draws from ``ground_truth``.

    Deterministic in all arguments.  Raises NonFiniteError carrying the step
    index and loss-term values if the loss or a gradient stops being finite.
    """
    if steps < 0:
        raise ConfigurationError("steps must be >= 0")
    batch = int(batch_size or model_config.batch_size)
    if batch < 1:
        raise ConfigurationError("batch size must be positive")
    if objective.kind in ("factor_vae", "beta_tcvae", "dip_vae_i", "dip_vae_ii") and batch < 2:
        raise ConfigurationError(f"{objective.kind} needs a batch size of at least 2")
    started = time.perf_counter()
    init_rng, data_rng, noise_rng, disc_rng = _streams(seed)
    width = int(np.prod(ground_truth.observation_shape))
    model = VaeModel(width, model_config, init_rng)
    opt = AdamState.for_params(model.params, learning_rate=model_config.learning_rate,
                               beta1=model_config.beta1, beta2=model_config.beta2,
                               epsilon=model_config.epsilon)
    disc = disc_opt = None
    if objective.kind == "factor_vae":
        disc = Discriminator(model_config.latent_dim, model_config.discriminator_hidden, init_rng)
        disc_opt = AdamState.for_params(disc.params,
                                        learning_rate=model_config.discriminator_learning_rate,
                                        beta1=model_config.discriminator_beta1,
                                        beta2=model_config.discriminator_beta2,
                                        epsilon=model_config.epsilon)
    trace, terms = [], {}
    d = model_config.latent_dim
    for step in range(steps):
        _, x = ground_truth.sample(batch, data_rng)
        noise = noise_rng.standard_normal((batch, d))
        loss, _, terms = vae_loss(model, objective, x, noise, step, steps, disc)
        if not math.isfinite(terms["loss"]):
            raise NonFiniteError(f"non-finite loss at step {step}", step=step, terms=terms)
        grads = ad.gradients(loss, model.params)
        try:
            adam_step(model.params, grads, opt)
        except NonFiniteError as exc:
            raise NonFiniteError(f"{exc} at step {step}", step=step, terms=terms) from None
        if disc is not None:
            _, x2 = ground_truth.sample(batch, data_rng)
            mean, log_var = model.encode_numpy(x2)
            z2 = mean + np.exp(0.5 * log_var) * noise_rng.standard_normal(mean.shape)
            d_loss = discriminator_step_loss(disc, z2, obj.shuffle_dims(z2, disc_rng))
            terms["discriminator_loss"] = d_loss.item()
            adam_step(disc.params, ad.gradients(d_loss, disc.params), disc_opt)
        if step % model_config.trace_every == 0 or step == steps - 1:
            trace.append({"step": step, **terms})
    return TrainedModel(model=model, objective=objective, seed=int(seed), steps=int(steps),
                        trace=trace, final_terms=dict(terms),
                        ground_truth=dict(ground_truth_spec or {}), discriminator=disc,
                        wall_time_s=time.perf_counter() - started)


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(trained: TrainedModel, directory):
    """Write ``manifest.json`` plus a little-endian float64 ``params.bin``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    model = trained.model
    layout, offset, blobs = [], 0, []
    for group, params in (("encoder", model.encoder), ("decoder", model.decoder)):
        for i, p in enumerate(params):
            layout.append({"name": f"{group}.{i}", "shape": list(p.shape), "offset": offset})
            offset += p.data.size
            blobs.append(p.data.astype("<f8").ravel())
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "objective": trained.objective.to_dict(),
        "model_config": model.config.to_dict(),
        "input_width": model.input_width,
        "seed": trained.seed,
        "step": trained.steps,
        "ground_truth": trained.ground_truth,
        "final_terms": trained.final_terms,
        "parameters": layout,
        "parameter_count": offset,
        "byte_order": "little",
        "dtype": "float64",
    }
    (directory / "params.bin").write_bytes(np.concatenate(blobs).tobytes() if blobs else b"")
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def load_checkpoint(directory) -> TrainedModel:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"unsupported checkpoint format {manifest.get('format')!r}")
    flat = np.frombuffer((directory / "params.bin").read_bytes(), dtype="<f8")
    if flat.size != manifest["parameter_count"]:
        raise ConfigurationError("parameter blob size does not match the manifest")
    config = ModelConfig.from_dict(manifest["model_config"])
    model = VaeModel(manifest["input_width"], config, np.random.default_rng(0))
    targets = {f"encoder.{i}": p for i, p in enumerate(model.encoder)}
    targets.update({f"decoder.{i}": p for i, p in enumerate(model.decoder)})
    for entry in manifest["parameters"]:
        p = targets[entry["name"]]
        size = int(np.prod(entry["shape"]))
        p.data[...] = flat[entry["offset"]:entry["offset"] + size].reshape(entry["shape"])
    return TrainedModel(model=model, objective=obj.ObjectiveConfig.from_dict(manifest["objective"]),
                        seed=manifest["seed"], steps=manifest["step"],
                        final_terms=manifest.get("final_terms", {}),
                        ground_truth=manifest.get("ground_truth", {}))
