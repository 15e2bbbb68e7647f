"""The distributional autoencoder: networks, objective and training loop."""

from __future__ import annotations

import logging
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .autodiff import NonFiniteError, Tape, Tensor, concat
from .data import Column, EncodedDataset, TabularSchema
from .cramer_wold import MixtureMeasureConfig, cw_distance_sq, mix_cw_distance_sq
from .heads import AnnealSchedule, gumbel_softmax_st, quantile_batch, temperature
from .nn import AdamState, ConfigurationError, MlpSpec, adam_step, forward_mlp, init_mlp

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-8


class TrainingAborted(RuntimeError):
    """Training hit a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1024
    learning_rate: float = 0.001
    lam: float = 1.0
    tau: float = 0.2
    latent_dim: int = 2
    pi: float = 0.05
    n_knots: int = 10
    seed: int = 0
    gamma: float | str = "silverman"
    anneal: str = "epoch"

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2")
        if not self.learning_rate > 0 or not self.tau > 0:
            raise ConfigurationError("learning_rate and tau must be positive")
        if self.lam < 0:
            raise ConfigurationError("lam must be non-negative")
        if self.latent_dim != 2:
            raise ConfigurationError("only a 2-dimensional latent space is supported")
        if not 0.0 <= self.pi <= 1.0:
            raise ConfigurationError(f"pi must lie in [0, 1], got {self.pi}")
        if self.n_knots < 0:
            raise ConfigurationError("n_knots must be >= 0")
        if self.anneal not in ("epoch", "step"):
            raise ConfigurationError("anneal must be 'epoch' or 'step'")
        if isinstance(self.gamma, str) and self.gamma != "silverman":
            raise ConfigurationError(f"unknown gamma mode {self.gamma!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class Streams:
    """Named, counter-based random streams derived from one seed.

    ``streams.rng("alpha", epoch, batch)`` always returns a fresh generator
    in the same state for the same key, so any step can be replayed.
    """

    def __init__(self, seed: int, *prefix):
        self.seed = int(seed)
        self.prefix = tuple(prefix)

    @staticmethod
    def _key(part) -> int:
        if isinstance(part, str):
            return zlib.crc32(part.encode("utf-8"))
        return int(part)

    def rng(self, *key) -> np.random.Generator:
        spawn = tuple(self._key(k) for k in self.prefix + key)
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=spawn)))

    def child(self, *key) -> "Streams":
        return Streams(self.seed, *(self.prefix + key))


def encoder_spec(D: int, latent_dim: int) -> MlpSpec:
    return MlpSpec(D, (16, 8, 2 * latent_dim), ("elu", "elu", "identity"))


def decoder_spec(schema: TabularSchema, latent_dim: int, n_knots: int) -> MlpSpec:
    return MlpSpec(latent_dim, (16, 64, trunk_width(schema, n_knots)), ("relu", "relu", "identity"))


def trunk_width(schema: TabularSchema, n_knots: int) -> int:
    return (n_knots + 2) * len(schema.continuous) + sum(len(c.levels) for c in schema.discrete)


def head_layout(schema: TabularSchema, n_knots: int) -> list[tuple[Column, slice]]:
    """Slice of the decoder output feeding each column's head, in schema order."""
    out, pos = [], 0
    for col in schema.columns:
        w = len(col.levels) if col.is_discrete else n_knots + 2
        out.append((col, slice(pos, pos + w)))
        pos += w
    return out


@dataclass
class CwdaeModel:
    schema: TabularSchema
    params: dict[str, Tensor]
    mean: np.ndarray
    scale: np.ndarray
    latent_dim: int = 2
    n_knots: int = 10
    n_train: int = 0
    config: TrainConfig = field(default_factory=TrainConfig)

    @property
    def enc_spec(self) -> MlpSpec:
        return encoder_spec(self.schema.D, self.latent_dim)

    @property
    def dec_spec(self) -> MlpSpec:
        return decoder_spec(self.schema, self.latent_dim, self.n_knots)

    def copy(self) -> "CwdaeModel":
        params = {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        return CwdaeModel(self.schema, params, self.mean.copy(), self.scale.copy(), self.latent_dim,
                          self.n_knots, self.n_train, self.config)


def init_model(schema: TabularSchema, cfg: TrainConfig, mean=None, scale=None,
               n_train: int = 0) -> CwdaeModel:
    n_cont = len(schema.continuous)
    mean = np.zeros(n_cont) if mean is None else np.asarray(mean, dtype=np.float64)
    scale = np.ones(n_cont) if scale is None else np.asarray(scale, dtype=np.float64)
    rng = Streams(cfg.seed).rng("init")
    params = init_mlp(encoder_spec(schema.D, cfg.latent_dim), rng, "enc.")
    params.update(init_mlp(decoder_spec(schema, cfg.latent_dim, cfg.n_knots), rng, "dec."))
    return CwdaeModel(schema, params, mean, scale, cfg.latent_dim, cfg.n_knots, n_train, cfg)


def encode(model: CwdaeModel, x, rng: np.random.Generator | None = None,
           eps: np.ndarray | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Reparameterized posterior draw ``z = mu + exp(logvar / 2) * eps``."""
    h = forward_mlp(model.enc_spec, model.params, x, "enc.")
    d = model.latent_dim
    mu, logvar = h[:, :d], h[:, d:]
    if eps is None:
        eps = rng.standard_normal(mu.shape)
    z = mu + (logvar * 0.5).exp() * eps
    return z, mu, logvar


def decoder_heads(model: CwdaeModel, z) -> Tensor:
    return forward_mlp(model.dec_spec, model.params, z, "dec.")


def decode_and_sample(model: CwdaeModel, z, temp: float, streams: Streams,
                      alpha: np.ndarray | float | None = None, hard: bool = True) -> Tensor:
    """Draw one encoded row per latent row.

    Continuous columns use the spline head at alpha ~ U(0,1) (or the fixed
    ``alpha``); discrete columns use Gumbel-Softmax at temperature ``temp``.
    """
    out = decoder_heads(model, z)
    n = out.shape[0]
    pieces = []
    for j, (col, sl) in enumerate(head_layout(model.schema, model.n_knots)):
        block = out[:, sl]
        if col.is_discrete:
            pieces.append(gumbel_softmax_st(block, temp, streams.rng("gumbel", j), hard=hard))
        else:
            if alpha is None:
                a = streams.rng("alpha", j).uniform(0.0, 1.0, size=n)
            else:
                a = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (n,))
            pieces.append(quantile_batch(block[:, 0], block[:, 1:], a).reshape(n, 1))
    return concat(pieces, axis=1)


@dataclass
class LossBreakdown:
    total: float
    log_mix_recon: float
    log_latent_cw: float
    raw_recon: float
    raw_latent: float

    FIELDS = ("total", "log_mix_recon", "log_latent_cw", "raw_recon", "raw_latent")

    def as_row(self) -> list[float]:
        return [getattr(self, f) for f in self.FIELDS]


def loss(model: CwdaeModel, x_batch, cfg: TrainConfig, temp: float, streams: Streams,
         hard: bool = True) -> tuple[Tensor, LossBreakdown]:
    """log mixCW(x, x_hat) + lam * log CW(z_prior, z_post); both distances floored at 1e-8."""
    x = x_batch if isinstance(x_batch, Tensor) else Tensor(x_batch)
    n = x.shape[0]
    if n < 2:
        raise ValueError("loss needs a batch of at least two rows")
    z, _, _ = encode(model, x, streams.rng("eps"))
    x_hat = decode_and_sample(model, z, temp, streams, hard=hard)
    recon = mix_cw_distance_sq(x, x_hat, MixtureMeasureConfig(cfg.pi, None, cfg.gamma))
    prior = streams.rng("prior").standard_normal((n, model.latent_dim))
    latent = cw_distance_sq(Tensor(prior), z, cfg.gamma, "latent")
    log_recon = recon.clamp_min(LOG_FLOOR).log()
    log_latent = latent.clamp_min(LOG_FLOOR).log()
    total = log_recon + cfg.lam * log_latent
    if not np.isfinite(total.data):
        raise NonFiniteError("non-finite loss")
    return total, LossBreakdown(total.item(), log_recon.item(), log_latent.item(),
                                recon.item(), latent.item())


def _as_matrix(dataset) -> np.ndarray:
    return dataset.matrix if isinstance(dataset, EncodedDataset) else np.asarray(dataset, dtype=np.float64)


def train(dataset: EncodedDataset, cfg: TrainConfig, model: CwdaeModel | None = None,
          on_abort: Callable[[CwdaeModel], None] | None = None,
          on_epoch: Callable[[int, LossBreakdown], None] | None = None
          ) -> tuple[CwdaeModel, list[LossBreakdown]]:
    """Mini-batch Adam on the objective for ``cfg.epochs`` epochs.

    Batches are reshuffled every epoch; a trailing batch with fewer than two
    rows is dropped. On a numerical failure ``on_abort`` receives the model
    (e.g. to write a checkpoint) before :class:`TrainingAborted` is raised.
    """
    X = _as_matrix(dataset)
    if model is None:
        if not isinstance(dataset, EncodedDataset):
            raise ValueError("pass an EncodedDataset or an initialized model")
        enc = dataset.encoder
        model = init_model(dataset.schema, cfg, enc.mean_, enc.scale_, n_train=len(dataset))
    if X.shape[1] != model.schema.D:
        raise ConfigurationError(f"data width {X.shape[1]} != schema width {model.schema.D}")
    names = list(model.params)
    state = AdamState(cfg.learning_rate)
    schedule = AnnealSchedule(floor=cfg.tau)
    streams = Streams(cfg.seed)
    n = X.shape[0]
    history: list[LossBreakdown] = []
    step = 0
    for epoch in range(cfg.epochs):
        perm = streams.rng("shuffle", epoch).permutation(n)
        rows = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            temp = temperature(schedule, epoch if cfg.anneal == "epoch" else step)
            try:
                with Tape() as tape:
                    total, br = loss(model, X[idx], cfg, temp, streams.child("step", epoch, b))
                grads = tape.gradient(total, [model.params[k] for k in names])
                adam_step(state, model.params, dict(zip(names, grads)))
            except NonFiniteError as exc:
                logger.error("numerical failure at epoch %d, batch %d: %s", epoch, b, exc)
                if on_abort is not None:
                    on_abort(model)
                raise TrainingAborted(f"epoch {epoch}, batch {b}: {exc}") from exc
            rows.append(br.as_row())
            step += 1
        if rows:
            summary = LossBreakdown(*np.mean(rows, axis=0))
            history.append(summary)
            if on_epoch is not None:
                on_epoch(epoch, summary)
            logger.debug("epoch %d: %s", epoch, summary)
    return model, history


def write_history(history: list[LossBreakdown], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch," + ",".join(LossBreakdown.FIELDS) + "\n")
        for e, br in enumerate(history):
            fh.write(f"{e}," + ",".join(repr(float(v)) for v in br.as_row()) + "\n")
