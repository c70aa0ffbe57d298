"""Conditional invertible flow between style codes and disentangled latents.

A stack of affine coupling layers with alternating even/odd coordinate
masks. Each layer's scale/shift networks see the pass-through half
concatenated with a one-hot encoding of the style code's layer index, so
every layer index gets its own map while sharing parameters. Scales are
soft-clamped, and final net layers start at zero, so an untrained model is
exactly the identity with zero log-determinant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, NumericError
from .numerics import Mlp, Tensor, init_mlp, no_grad
from .numerics import autodiff as ad
from .prior import LatentPair, PriorConfig


@dataclass(frozen=True)
class FlowConfig:
    num_couplings: int = 8
    hidden_width: int = 128
    hidden_layers: int = 2
    scale_clamp: float = 2.0

    def __post_init__(self):
        if self.num_couplings < 2:
            raise ConfigError("need at least 2 coupling layers so every coordinate is transformed")
        if self.hidden_width < 1 or self.hidden_layers < 1:
            raise ConfigError("hidden_width and hidden_layers must be positive")
        if self.scale_clamp <= 0:
            raise ConfigError("scale_clamp must be positive")


@dataclass
class StyleCode:
    """One per-layer style vector plus the index of the layer it feeds."""

    w: np.ndarray
    layer_index: int


@dataclass
class StyleStack:
    """All style codes of one image: row i of ``codes`` is the code for
    layer i. ``labels`` are the mapped attribute targets."""

    codes: np.ndarray  # (num_codes, code_dim)
    labels: np.ndarray  # (num_attrs,)
    identity_id: int
    frame_id: int

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.codes.ndim != 2:
            raise DimensionError("codes must be a (num_codes, code_dim) array")

    @property
    def num_codes(self) -> int:
        return self.codes.shape[0]

    @property
    def code_dim(self) -> int:
        return self.codes.shape[1]

    def code(self, layer_index: int) -> StyleCode:
        return StyleCode(w=self.codes[layer_index], layer_index=layer_index)


class CouplingLayer:
    """One affine coupling step: half the coordinates pass through and
    drive an elementwise scale/shift of the other half."""

    def __init__(self, mask_parity: int, scale_net: Mlp, shift_net: Mlp, scale_clamp: float, code_dim: int):
        self.mask_parity = mask_parity
        self.scale_net = scale_net
        self.shift_net = shift_net
        self.scale_clamp = scale_clamp
        self.code_dim = code_dim
        idx = np.arange(code_dim)
        self.pass_idx = idx[idx % 2 == mask_parity]
        self.trans_idx = idx[idx % 2 != mask_parity]
        # output column j sits at position perm[j] of [pass_half ++ trans_half]
        order = np.concatenate([self.pass_idx, self.trans_idx])
        self.reassemble = np.argsort(order)

    def parameters(self) -> list[Tensor]:
        return self.scale_net.parameters() + self.shift_net.parameters()


@dataclass
class FlowModel:
    layers: list[CouplingLayer]
    code_dim: int
    num_codes: int
    prior: PriorConfig
    flow_config: FlowConfig = field(default_factory=FlowConfig)

    def __post_init__(self):
        if len(self.layers) < 2:
            raise ConfigError("a flow needs at least 2 coupling layers")
        parities = {layer.mask_parity for layer in self.layers}
        if parities != {0, 1}:
            raise ConfigError("mask parities must alternate so every coordinate is transformed")

    def parameters(self) -> list[Tensor]:
        out: list[Tensor] = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out


def build_flow(prior: PriorConfig, num_codes: int, cfg: FlowConfig, seed: int) -> FlowModel:
    """Construct an identity-initialized conditional flow."""
    if num_codes < 1:
        raise ConfigError("num_codes must be at least 1")
    rng = np.random.default_rng(seed)
    n = prior.latent_dim
    layers = []
    for i in range(cfg.num_couplings):
        parity = i % 2
        n_pass = int(np.sum(np.arange(n) % 2 == parity))
        n_trans = n - n_pass
        dims = [n_pass + num_codes] + [cfg.hidden_width] * cfg.hidden_layers + [n_trans]
        scale_net = init_mlp(dims, rng, zero_final=True)
        shift_net = init_mlp(dims, rng, zero_final=True)
        layers.append(CouplingLayer(parity, scale_net, shift_net, cfg.scale_clamp, n))
    return FlowModel(layers=layers, code_dim=n, num_codes=num_codes, prior=prior, flow_config=cfg)


def _one_hot(layer_indices: np.ndarray, num_codes: int) -> np.ndarray:
    layer_indices = np.asarray(layer_indices, dtype=np.int64)
    if np.any(layer_indices < 0) or np.any(layer_indices >= num_codes):
        raise DimensionError(f"layer index out of range [0, {num_codes})")
    return np.eye(num_codes)[layer_indices]


def coupling_forward_t(layer: CouplingLayer, x: Tensor, cond: np.ndarray) -> tuple[Tensor, Tensor]:
    """Graph-building batched coupling transform; returns (y, per-row logdet)."""
    xp = ad.take_cols(x, layer.pass_idx)
    xt = ad.take_cols(x, layer.trans_idx)
    h = ad.concat_cols([xp, Tensor(cond)])
    s_raw = layer.scale_net.forward(h)
    t = layer.shift_net.forward(h)
    s = layer.scale_clamp * ad.tanh(s_raw / layer.scale_clamp)
    yt = xt * ad.exp(s) + t
    y = ad.take_cols(ad.concat_cols([xp, yt]), layer.reassemble)
    return y, ad.asum(s, axis=1)


def _coupling_inverse_np(layer: CouplingLayer, y: np.ndarray, cond: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact algebraic inverse; recomputes (s, t) from the untouched half."""
    yp = y[:, layer.pass_idx]
    yt = y[:, layer.trans_idx]
    h = np.concatenate([yp, cond], axis=1)
    with no_grad():
        s_raw = layer.scale_net.forward(Tensor(h)).data
        t = layer.shift_net.forward(Tensor(h)).data
    s = layer.scale_clamp * np.tanh(s_raw / layer.scale_clamp)
    xt = (yt - t) * np.exp(-s)
    x = np.empty_like(y)
    x[:, layer.pass_idx] = yp
    x[:, layer.trans_idx] = xt
    return x, -np.sum(s, axis=1)


def coupling_forward(layer: CouplingLayer, x: np.ndarray, cond: np.ndarray) -> tuple[np.ndarray, float]:
    """Single-vector coupling transform: y and the logdet contribution."""
    x = np.asarray(x, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    if x.shape != (layer.code_dim,):
        raise DimensionError(f"input has shape {x.shape}, expected ({layer.code_dim},)")
    if cond.shape != (layer.scale_net.in_dim - layer.pass_idx.size,):
        raise DimensionError("condition length does not match the coupling nets")
    with no_grad():
        y, logdet = coupling_forward_t(layer, Tensor(x[None, :]), cond[None, :])
    if not np.all(np.isfinite(y.data)):
        raise NumericError("coupling_forward produced a non-finite output")
    return y.data[0], float(logdet.data[0])


def coupling_inverse(layer: CouplingLayer, y: np.ndarray, cond: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    if y.shape != (layer.code_dim,):
        raise DimensionError(f"input has shape {y.shape}, expected ({layer.code_dim},)")
    x, _ = _coupling_inverse_np(layer, y[None, :], cond[None, :])
    if not np.all(np.isfinite(x)):
        raise NumericError("coupling_inverse produced a non-finite output")
    return x[0]


def to_latent_t(model: FlowModel, x: Tensor, cond: np.ndarray) -> tuple[Tensor, Tensor]:
    """Batched graph-building forward pass through all couplings."""
    logdet: Tensor | None = None
    for layer in model.layers:
        x, ld = coupling_forward_t(layer, x, cond)
        logdet = ld if logdet is None else logdet + ld
    return x, logdet


def codes_to_latents(model: FlowModel, codes: np.ndarray, layer_indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched style codes -> latent rows; returns (latents, per-row logdet)."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[1] != model.code_dim:
        raise DimensionError(f"codes have shape {codes.shape}, expected (*, {model.code_dim})")
    cond = _one_hot(layer_indices, model.num_codes)
    with no_grad():
        z, logdet = to_latent_t(model, Tensor(codes), cond)
    if not (np.all(np.isfinite(z.data)) and np.all(np.isfinite(logdet.data))):
        raise NumericError("flow forward produced a non-finite value")
    return z.data, logdet.data


def latents_to_codes(model: FlowModel, latents: np.ndarray, layer_indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched inverse; returns (codes, per-row logdet of the inverse map)."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[1] != model.code_dim:
        raise DimensionError(f"latents have shape {latents.shape}, expected (*, {model.code_dim})")
    cond = _one_hot(layer_indices, model.num_codes)
    x = latents
    logdet = np.zeros(latents.shape[0])
    for layer in reversed(model.layers):
        x, ld = _coupling_inverse_np(layer, x, cond)
        logdet += ld
    if not np.all(np.isfinite(x)):
        raise NumericError("flow inverse produced a non-finite value")
    return x, logdet


def to_latent(model: FlowModel, code: StyleCode) -> tuple[LatentPair, float]:
    """Map one style code to its (attribute, non-attribute) latent pair."""
    w = np.asarray(code.w, dtype=np.float64)
    if w.shape != (model.code_dim,):
        raise DimensionError(f"style code has shape {w.shape}, expected ({model.code_dim},)")
    z, logdet = codes_to_latents(model, w[None, :], np.array([code.layer_index]))
    m = model.prior.num_attrs
    return LatentPair(c=z[0, :m], s=z[0, m:]), float(logdet[0])


def to_style(model: FlowModel, pair: LatentPair, layer_index: int) -> StyleCode:
    """Exact inverse of to_latent at the same layer condition."""
    z = pair.concat()
    if z.shape != (model.code_dim,):
        raise DimensionError(f"latent pair has total length {z.shape[0]}, expected {model.code_dim}")
    w, _ = latents_to_codes(model, z[None, :], np.array([layer_index]))
    return StyleCode(w=w[0], layer_index=layer_index)
