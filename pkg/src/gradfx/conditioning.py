"""Conditioning for black-box backbones: FiLM and its temporal variants.

All variants modulate activations h[channels, time] with a per-channel
affine (gamma * h + beta). They differ in where (gamma, beta) come from:

  FiLM     one MLP latent from the controls; a linear head per network
           block emits static (gamma, beta)
  TFiLM    per network block: max-pooled activations (+controls) drive
           an LSTM; per-time-block (gamma, beta)
  TTFiLM   TFiLM with the LSTM squeezed to r channels by a linear layer
           and widened back by a small MLP
  TVFiLM   one shared LSTM over the downsampled model input emits a
           time-varying latent; per-block linear heads emit (gamma, beta)
  TVCond   the same shared controller, but its latent is upsampled and
           concatenated to a recurrent model's input instead

Every gamma-producing head starts as the identity (zero weights, gamma
bias 1, beta bias 0).
"""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensor as T
from .controllers import num_blocks
from .tensor import Tensor


def film_apply(h: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Per-channel affine over [channels, time]; gamma/beta are [channels]."""
    if gamma.data.shape[-1] != h.data.shape[0]:
        raise ValueError(f"channel mismatch: h has {h.data.shape[0]}, "
                         f"gamma has {gamma.data.shape[-1]}")
    c = h.data.shape[0]
    return T.add(T.mul(h, T.reshape(gamma, (c, 1))), T.reshape(beta, (c, 1)))


def blockwise_affine(h: Tensor, gamma_seq: Tensor, beta_seq: Tensor,
                     block_size: int) -> Tensor:
    """Apply per-time-block (gamma, beta) [Tb, C] to h [C, T], held per block."""
    c, t = h.data.shape
    tb = gamma_seq.data.shape[0]
    if tb != num_blocks(t, block_size):
        raise ValueError(f"got {tb} modulation blocks, signal needs "
                         f"{num_blocks(t, block_size)}")
    gs = T.upsample1d(T.transpose(gamma_seq), block_size)[:, 0:t]
    bs = T.upsample1d(T.transpose(beta_seq), block_size)[:, 0:t]
    return T.add(T.mul(h, gs), bs)


def _identity_head(layer: nn.Linear, channels: int) -> nn.Linear:
    """Zero weights; bias = [1]*C (gamma) + [0]*C (beta)."""
    layer.w.data = np.zeros_like(layer.w.data)
    b = np.zeros(2 * channels, dtype=layer.b.data.dtype)
    b[:channels] = 1.0
    layer.b.data = b
    return layer


def _split_gamma_beta(gb: Tensor, channels: int):
    if gb.data.ndim == 1:
        return gb[0:channels], gb[channels:2 * channels]
    return gb[:, 0:channels], gb[:, channels:2 * channels]


class FiLM(nn.Module):
    """Static conditioning: z = MLP(c); per-block heads z -> (gamma, beta)."""

    def __init__(self, num_controls: int, channels: int, net_blocks: int,
                 rng: np.random.Generator, hidden: int = 16, latent: int = 32):
        self.channels = channels
        self.generator = nn.MLP([num_controls, hidden, latent], rng)
        self.heads = [_identity_head(nn.Linear(latent, 2 * channels, rng), channels)
                      for _ in range(net_blocks)]

    def latent(self, c: Tensor) -> Tensor:
        return self.generator(c)

    def modulate(self, k: int, h: Tensor, z: Tensor) -> Tensor:
        gamma, beta = _split_gamma_beta(self.heads[k](z), self.channels)
        return film_apply(h, gamma, beta)


class TFiLM(nn.Module):
    """Per-block temporal FiLM: pooled activations (+c) -> LSTM -> heads."""

    def __init__(self, num_controls: int, channels: int, net_blocks: int,
                 rng: np.random.Generator, block_size: int = 128):
        self.channels = channels
        self.block_size = block_size
        self.lstms = [nn.LSTM(channels + num_controls, 2 * channels, rng)
                      for _ in range(net_blocks)]
        self.heads = [_identity_head(nn.Linear(2 * channels, 2 * channels, rng), channels)
                      for _ in range(net_blocks)]

    def zero_state(self):
        return [None] * len(self.lstms)

    def modulate(self, k: int, h: Tensor, c, state_k):
        feats = T.transpose(T.maxpool1d(h, self.block_size))  # [Tb, C]
        if c is not None and c.data.size:
            tb = feats.data.shape[0]
            feats = T.concat([feats, T.repeat_new_axis(c, tb, axis=0)], axis=1)
        hs, state_k = self.lstms[k](feats, state_k)
        gamma, beta = _split_gamma_beta(self.heads[k](hs), self.channels)
        return blockwise_affine(h, gamma, beta, self.block_size), state_k


class TTFiLM(nn.Module):
    """TFiLM with a reduced-width LSTM: C -> r before, MLP r -> 2C after."""

    def __init__(self, num_controls: int, channels: int, net_blocks: int,
                 rng: np.random.Generator, block_size: int = 128,
                 reduced: int = 8, expand_hidden: int = 24):
        if reduced >= channels:
            raise ValueError("reduced width must be smaller than channels")
        self.channels = channels
        self.block_size = block_size
        self.reduce = [nn.Linear(channels, reduced, rng) for _ in range(net_blocks)]
        self.lstms = [nn.LSTM(reduced + num_controls, reduced, rng)
                      for _ in range(net_blocks)]
        self.expand = []
        for _ in range(net_blocks):
            mlp = nn.MLP([reduced, expand_hidden, 2 * channels], rng)
            _identity_head(mlp.layers[-1], channels)
            self.expand.append(mlp)

    def zero_state(self):
        return [None] * len(self.lstms)

    def modulate(self, k: int, h: Tensor, c, state_k):
        pooled = T.transpose(T.maxpool1d(h, self.block_size))  # [Tb, C]
        feats = self.reduce[k](pooled)
        if c is not None and c.data.size:
            tb = feats.data.shape[0]
            feats = T.concat([feats, T.repeat_new_axis(c, tb, axis=0)], axis=1)
        hs, state_k = self.lstms[k](feats, state_k)
        gamma, beta = _split_gamma_beta(self.expand[k](hs), self.channels)
        return blockwise_affine(h, gamma, beta, self.block_size), state_k


class TVFiLMController(nn.Module):
    """Shared controller: LSTM over (x downsampled by B, c) -> latent sequence."""

    def __init__(self, num_controls: int, rng: np.random.Generator,
                 block_size: int = 128, latent: int = 32):
        self.block_size = block_size
        self.latent_dim = latent
        self.lstm = nn.LSTM(1 + num_controls, latent, rng)

    def zero_state(self):
        return None

    def latents(self, x: Tensor, c, state):
        nb = num_blocks(x.data.shape[-1], self.block_size)
        feats = T.reshape(T.blockmean1d(x, self.block_size), (nb, 1))
        if c is not None and c.data.size:
            feats = T.concat([feats, T.repeat_new_axis(c, nb, axis=0)], axis=1)
        z, state = self.lstm(feats, state)
        return z, state


class TVFiLM(nn.Module):
    """Time-varying FiLM: shared latent sequence, per-block identity heads."""

    def __init__(self, num_controls: int, channels: int, net_blocks: int,
                 rng: np.random.Generator, block_size: int = 128, latent: int = 32):
        self.channels = channels
        self.block_size = block_size
        self.controller = TVFiLMController(num_controls, rng, block_size, latent)
        self.heads = [_identity_head(nn.Linear(latent, 2 * channels, rng), channels)
                      for _ in range(net_blocks)]

    def zero_state(self):
        return self.controller.zero_state()

    def latents(self, x: Tensor, c, state):
        return self.controller.latents(x, c, state)

    def modulate(self, k: int, h: Tensor, z_seq: Tensor) -> Tensor:
        tb = z_seq.data.shape[0]
        if tb != num_blocks(h.data.shape[-1], self.block_size):
            raise ValueError(f"latent has {tb} blocks, activations need "
                             f"{num_blocks(h.data.shape[-1], self.block_size)}")
        gamma, beta = _split_gamma_beta(self.heads[k](z_seq), self.channels)
        return blockwise_affine(h, gamma, beta, self.block_size)


class TVCond(nn.Module):
    """Shared controller latent, upsampled and concatenated to model input."""

    def __init__(self, num_controls: int, rng: np.random.Generator,
                 block_size: int = 128, latent: int = 16):
        self.controller = TVFiLMController(num_controls, rng, block_size, latent)
        self.block_size = block_size
        self.latent_dim = latent

    def zero_state(self):
        return None

    def generate(self, x: Tensor, c, state):
        """Returns [len(x), latent] ready to concatenate on the feature dim."""
        n = x.data.shape[-1]
        z, state = self.controller.latents(x, c, state)
        zs = T.transpose(T.upsample1d(T.transpose(z), self.block_size)[:, 0:n])
        return zs, state
