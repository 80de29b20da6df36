"""Variational autoencoder over 1-d claim amounts.

Claims are modelled in log space: ``x = (log(amount) - shift) / scale``.  The
encoder emits ``(mu, log_var)`` per latent dimension, the decoder maps a latent
draw back to the standardized log amount, and generation inverts the
standardization, so generated amounts are always strictly positive.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .nnet import Adam, DenseNet, backward, forward, load_checkpoint, net_arrays, net_from_arrays, save_checkpoint

LOG_VAR_CLAMP = 10.0


@dataclass(frozen=True)
class VaeTrainConfig:
    beta: float = 1.0
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    latent_dim: int = 4
    hidden: tuple[int, ...] = (32, 32)
    tail_weight: float = 0.0

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.latent_dim < 1:
            raise ValueError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.tail_weight < 0:
            raise ValueError(f"tail_weight must be >= 0, got {self.tail_weight}")


@dataclass
class VaeModel:
    encoder: DenseNet
    decoder: DenseNet
    latent_dim: int
    shift: float
    scale: float

    def __post_init__(self) -> None:
        if self.encoder.out_dim != 2 * self.latent_dim:
            raise ValueError("encoder must emit 2 * latent_dim values")
        if self.decoder.in_dim != self.latent_dim:
            raise ValueError("decoder input must equal latent_dim")
        if not self.scale > 0:
            raise ValueError(f"normalization scale must be > 0, got {self.scale}")

    @classmethod
    def init(cls, cfg: VaeTrainConfig, rng: np.random.Generator, shift: float = 0.0, scale: float = 1.0) -> "VaeModel":
        enc = DenseNet.init((1, *cfg.hidden, 2 * cfg.latent_dim), "relu", rng)
        dec = DenseNet.init((cfg.latent_dim, *cfg.hidden, 1), "relu", rng)
        return cls(enc, dec, cfg.latent_dim, shift, scale)

    def standardize(self, amounts: np.ndarray) -> np.ndarray:
        return ((np.log(np.asarray(amounts, dtype=float)) - self.shift) / self.scale)[:, None]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return generate_claims(self, n, rng)

    def save(self, path: str | Path) -> None:
        arrays = {**net_arrays("encoder", self.encoder), **net_arrays("decoder", self.decoder)}
        meta = {
            "kind": "vae",
            "latent_dim": self.latent_dim,
            "shift": self.shift,
            "scale": self.scale,
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
        }
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path: str | Path) -> "VaeModel":
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "vae":
            raise ValueError(f"{path}: not a VAE checkpoint")
        return cls(
            net_from_arrays("encoder", meta["encoder"], arrays),
            net_from_arrays("decoder", meta["decoder"], arrays),
            int(meta["latent_dim"]),
            float(meta["shift"]),
            float(meta["scale"]),
        )


def encode(m: VaeModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior ``(mu, log_var)`` for standardized claims; ``log_var`` clamped to +/-10."""
    out = m.encoder(np.asarray(x, dtype=float))
    mu, log_var = out[..., : m.latent_dim], out[..., m.latent_dim :]
    return mu, np.clip(log_var, -LOG_VAR_CLAMP, LOG_VAR_CLAMP)


def reparameterize(mu: np.ndarray, log_var: np.ndarray, eps: np.ndarray) -> np.ndarray:
    return mu + np.exp(0.5 * np.asarray(log_var)) * eps


def decode(m: VaeModel, z: np.ndarray) -> np.ndarray:
    return m.decoder(np.asarray(z, dtype=float))


def vae_loss(
    x: np.ndarray,
    x_hat: np.ndarray,
    mu: np.ndarray,
    log_var: np.ndarray,
    beta: float,
) -> tuple[float, float, float]:
    """Batch-mean ``(total, reconstruction, kl)``; reconstruction is MSE over features."""
    x, x_hat = np.atleast_2d(x), np.atleast_2d(x_hat)
    mu, log_var = np.atleast_2d(mu), np.atleast_2d(log_var)
    if x.shape != x_hat.shape or mu.shape != log_var.shape:
        raise ValueError("shape mismatch in vae_loss")
    recon = float(np.mean((x - x_hat) ** 2))
    kl = float(np.mean(-0.5 * np.sum(1.0 + log_var - mu**2 - np.exp(log_var), axis=1)))
    return recon + beta * kl, recon, kl


def _batch_loss_and_grads(
    m: VaeModel,
    x: np.ndarray,
    eps: np.ndarray,
    beta: float,
    tail_weight: float = 0.0,
) -> tuple[tuple[float, float, float], list[np.ndarray], list[np.ndarray]]:
    n, d = x.shape
    L = m.latent_dim
    enc_out, enc_cache = forward(m.encoder, x)
    mu, raw_lv = enc_out[:, :L], enc_out[:, L:]
    lv = np.clip(raw_lv, -LOG_VAR_CLAMP, LOG_VAR_CLAMP)
    std = np.exp(0.5 * lv)
    z = mu + std * eps
    x_hat, dec_cache = forward(m.decoder, z)

    w = 1.0 + tail_weight * np.maximum(x, 0.0) if tail_weight > 0 else np.ones_like(x)
    diff = x_hat - x
    recon = float(np.mean(w * diff**2))
    kl_rows = -0.5 * np.sum(1.0 + lv - mu**2 - np.exp(lv), axis=1)
    kl = float(kl_rows.mean())
    total = recon + beta * kl

    g_xhat = 2.0 * w * diff / (n * d)
    dec_grads, g_z = backward(m.decoder, dec_cache, g_xhat)
    g_mu = g_z + beta * mu / n
    g_lv = g_z * eps * 0.5 * std + beta * (-0.5) * (1.0 - np.exp(lv)) / n
    g_lv = np.where((raw_lv > -LOG_VAR_CLAMP) & (raw_lv < LOG_VAR_CLAMP), g_lv, 0.0)
    enc_grads, _ = backward(m.encoder, enc_cache, np.concatenate([g_mu, g_lv], axis=1))
    return (total, recon, kl), enc_grads, dec_grads


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    total: float
    reconstruction: float
    kl: float
    min_batch_kl: float


def train_vae(
    claims: Sequence[float] | np.ndarray,
    cfg: VaeTrainConfig,
    rng: np.random.Generator,
) -> tuple[VaeModel, list[EpochStats]]:
    claims = np.asarray(claims, dtype=float)
    if claims.size == 0:
        raise ValueError("cannot train a VAE on an empty claim set")
    if np.any(claims <= 0) or not np.all(np.isfinite(claims)):
        raise ValueError("claims must be positive and finite")
    if claims.size < cfg.batch_size:
        raise ValueError(f"need at least batch_size={cfg.batch_size} claims, got {claims.size}")
    logs = np.log(claims)
    shift = float(logs.mean())
    scale = float(logs.std()) or 1.0
    model = VaeModel.init(cfg, rng, shift, scale)
    data = model.standardize(claims)
    params = model.encoder.params() + model.decoder.params()
    opt = Adam(lr=cfg.learning_rate)
    history: list[EpochStats] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(data.shape[0])
        sums = np.zeros(3)
        n_seen = 0
        min_kl = math.inf
        for start in range(0, order.size, cfg.batch_size):
            batch = data[order[start : start + cfg.batch_size]]
            eps = rng.standard_normal((batch.shape[0], cfg.latent_dim))
            (total, recon, kl), g_enc, g_dec = _batch_loss_and_grads(model, batch, eps, cfg.beta, cfg.tail_weight)
            if kl < -1e-12:
                raise ArithmeticError(f"negative KL {kl} in epoch {epoch}")
            min_kl = min(min_kl, kl)
            opt.step(params, g_enc + g_dec)
            sums += np.array([total, recon, kl]) * batch.shape[0]
            n_seen += batch.shape[0]
        t, r, k = sums / n_seen
        history.append(EpochStats(epoch, float(t), float(r), float(k), float(min_kl)))
    return model, history


def generate_claims(m: VaeModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Decode ``n`` prior draws into claim amounts (strictly positive, finite)."""
    if n <= 0:
        return np.zeros(0)
    z = rng.standard_normal((n, m.latent_dim))
    x = decode(m, z)[:, 0]
    log_amount = np.clip(x * m.scale + m.shift, -700.0, 700.0)
    return np.maximum(np.exp(log_amount), np.finfo(float).tiny)


def write_loss_history(path: str | Path, history: Sequence[EpochStats]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "total", "reconstruction", "kl", "min_batch_kl"])
        for h in history:
            w.writerow([h.epoch, repr(h.total), repr(h.reconstruction), repr(h.kl), repr(h.min_batch_kl)])


def config_dict(cfg: VaeTrainConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
