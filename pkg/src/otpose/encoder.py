"""Temporal patch embedding and the keypoint-wise transformer encoder.

Tokens are the D = N_j * N_f channel planes of the embedded volume
Z in R^{D x L}; each token carries an L-dimensional feature (its flattened
spatial map), so attention matrices are D x D (D_h x D_h per head, heads
splitting the channel axis into contiguous blocks) and never L x L.  The
learned Q/K/V/MLP maps mix channels at every spatial position, which keeps
both parameter count and activation memory independent of L^2 while matching
the token semantics above: the query of token i is still a vector in R^L.

Residual branches are scaled by per-channel factors initialized to zero, so a
freshly built encoder is the identity on its token volume.

``patch_full_attention`` and ``local_window_attention`` are forward-only
comparators for the complexity benchmark: they attend over the L spatial
positions instead (full L x L, or square spatial windows).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tensorlab import ConfigError, Parameter, Tensor
from .tensorlab import ops

ATTENTION_KINDS = ("keypoint_wise", "patch_local")

WEIGHT_STD = 1e-3  # Gaussian init scale for all learned weights


@dataclass
class EncoderConfig:
    """Shared configuration for the occlusion and temporal encoders."""

    n_joints: int
    n_feats: int
    H: int
    W: int
    n_layers: int = 8
    n_heads: int = 1
    patch: tuple[int, int] = (1, 1)
    mlp_ratio: float = 2.0
    attention_kind: str = "keypoint_wise"
    window: Optional[int] = None
    scale_full_d: bool = False
    use_pos_embed: bool = True
    layerscale_init: float = 0.0

    def __post_init__(self):
        ph, pw = self.patch
        if self.H % ph or self.W % pw:
            raise ConfigError(
                f"patch {self.patch} does not tile the {self.H}x{self.W} grid")
        if self.D % self.n_heads:
            raise ConfigError(
                f"token count D={self.D} not divisible by {self.n_heads} heads")
        if self.attention_kind not in ATTENTION_KINDS:
            raise ConfigError(f"unknown attention kind: {self.attention_kind}")

    @property
    def D(self) -> int:
        return self.n_joints * self.n_feats

    @property
    def L(self) -> int:
        return (self.H // self.patch[0]) * (self.W // self.patch[1])

    @property
    def head_dim(self) -> int:
        return self.D // self.n_heads

    @property
    def attn_scale(self) -> float:
        return float(np.sqrt(self.D if self.scale_full_d else self.head_dim))


def _gauss(rng, shape, dtype):
    return rng.normal(0.0, WEIGHT_STD, size=shape).astype(dtype)


class LayerParams:
    """Parameters of one encoder layer; per-head Q/K/V stacks, channel MLP,
    LayerNorm affines over the token-feature axis, and the two residual
    scales (``no_decay``, initialized to the configured LayerScale value)."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator,
                 prefix: str, dtype):
        d, dh, h, L = cfg.D, cfg.head_dim, cfg.n_heads, cfg.L
        hidden = max(1, int(round(cfg.mlp_ratio * d)))
        def p(name, value, **kw):
            return Parameter(value, f"{prefix}.{name}", dtype=dtype, **kw)

        self.ln1_gain = p("ln1_gain", np.ones(L))
        self.ln1_bias = p("ln1_bias", np.zeros(L))
        self.w_q = p("w_q", _gauss(rng, (h, dh, dh), dtype))
        self.b_q = p("b_q", np.zeros((h, dh)))
        self.w_k = p("w_k", _gauss(rng, (h, dh, dh), dtype))
        self.b_k = p("b_k", np.zeros((h, dh)))
        self.w_v = p("w_v", _gauss(rng, (h, dh, dh), dtype))
        self.b_v = p("b_v", np.zeros((h, dh)))
        self.w_o = p("w_o", _gauss(rng, (d, d), dtype))
        self.b_o = p("b_o", np.zeros(d))
        self.alpha = p("alpha", np.full(d, cfg.layerscale_init), no_decay=True)
        self.ln2_gain = p("ln2_gain", np.ones(L))
        self.ln2_bias = p("ln2_bias", np.zeros(L))
        self.w_m1 = p("w_m1", _gauss(rng, (hidden, d), dtype))
        self.b_m1 = p("b_m1", np.zeros(hidden))
        self.w_m2 = p("w_m2", _gauss(rng, (d, hidden), dtype))
        self.b_m2 = p("b_m2", np.zeros(d))
        self.alpha_bar = p("alpha_bar", np.full(d, cfg.layerscale_init),
                           no_decay=True)

    def parameters(self):
        yield from (self.ln1_gain, self.ln1_bias,
                    self.w_q, self.b_q, self.w_k, self.b_k, self.w_v, self.b_v,
                    self.w_o, self.b_o, self.alpha,
                    self.ln2_gain, self.ln2_bias,
                    self.w_m1, self.b_m1, self.w_m2, self.b_m2, self.alpha_bar)


class EncoderParams:
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator,
                 prefix: str, dtype=np.float64):
        self.cfg = cfg
        ph, pw = cfg.patch
        self.embed_w = self.embed_b = None
        if (ph, pw) != (1, 1):
            width = cfg.n_joints * cfg.n_feats * ph * pw
            self.embed_w = Parameter(_gauss(rng, (cfg.D, width), dtype),
                                     f"{prefix}.embed_w", dtype=dtype)
            self.embed_b = Parameter(np.zeros(cfg.D), f"{prefix}.embed_b",
                                     dtype=dtype)
        self.layers = [LayerParams(cfg, rng, f"{prefix}.layer{i}", dtype)
                       for i in range(cfg.n_layers)]
        self.head_w = Parameter(_gauss(rng, (cfg.n_joints, cfg.D, 1, 1), dtype),
                                f"{prefix}.head_w", dtype=dtype)
        self.head_b = Parameter(np.zeros(cfg.n_joints), f"{prefix}.head_b",
                                dtype=dtype)
        self.pos_embed = sine_pos_embed_2d(cfg).astype(dtype) \
            if cfg.use_pos_embed else None

    def parameters(self):
        if self.embed_w is not None:
            yield self.embed_w
            yield self.embed_b
        for layer in self.layers:
            yield from layer.parameters()
        yield self.head_w
        yield self.head_b


# ---------------------------------------------------------------------------
# embedding
# ---------------------------------------------------------------------------

def _stack_features(features: Sequence[Tensor], cfg: EncoderConfig) -> Tensor:
    if len(features) != cfg.n_feats:
        raise ConfigError(
            f"expected {cfg.n_feats} feature maps, got {len(features)}")
    shapes = {f.data.shape for f in features}
    if len(shapes) != 1:
        raise ConfigError(f"inconsistent feature shapes: {sorted(shapes)}")
    shape = features[0].data.shape
    if shape[-3:] != (cfg.n_joints, cfg.H, cfg.W):
        raise ConfigError(
            f"feature maps must be (..., {cfg.n_joints}, {cfg.H}, {cfg.W}), "
            f"got {shape}")
    stacked = features[0] if cfg.n_feats == 1 else ops.concat(features, axis=-3)
    if stacked.data.ndim == 3:
        stacked = ops.reshape(stacked, (1,) + stacked.data.shape)
    return stacked  # (B, D, H, W)


def temporal_patch_embed(features: Sequence[Tensor], cfg: EncoderConfig,
                         params: Optional[EncoderParams] = None) -> Tensor:
    """Stack N_f feature maps into the token volume ``(B, D, L)``.

    With 1x1 patches (the default) this is a pure reshape: token ``f*N_j + j``
    is the flattened map of joint ``j`` in feature ``f``.  Larger patches
    concatenate the pixels of each patch and apply a learned projection to D.
    """
    batched = features[0].data.ndim == 4
    x = _stack_features(features, cfg)
    b = x.data.shape[0]
    ph, pw = cfg.patch
    if (ph, pw) == (1, 1):
        z = ops.reshape(x, (b, cfg.D, cfg.L))
    else:
        gh, gw = cfg.H // ph, cfg.W // pw
        x = ops.reshape(x, (b, cfg.D, gh, ph, gw, pw))
        x = ops.permute(x, (0, 1, 3, 5, 2, 4))      # (B, D, ph, pw, gh, gw)
        x = ops.reshape(x, (b, cfg.D * ph * pw, gh * gw))
        if params is None or params.embed_w is None:
            raise ConfigError("patch sizes > 1 need a learned embedding projection")
        z = ops.bias_rows(ops.matmul(params.embed_w.tensor(), x),
                          params.embed_b.tensor())
    if not batched:
        z = ops.reshape(z, z.data.shape[1:])
    return z


def unembed(z: Tensor, cfg: EncoderConfig) -> Tensor:
    """Inverse of the 1x1-patch embedding: ``(B, D, L)`` -> ``(B, D, H, W)``."""
    if cfg.patch != (1, 1):
        raise ConfigError("unembed is only defined for 1x1 patches")
    return ops.reshape(z, (z.data.shape[0], cfg.D, cfg.H, cfg.W))


def sine_pos_embed_2d(cfg: EncoderConfig) -> np.ndarray:
    """Fixed 2-D sinusoidal embedding over the patch grid, shape ``(D, L)``.

    The first ceil(D/2) channels encode x and the rest encode y, alternating
    sin/cos over geometric frequencies with base 10000.
    """
    if cfg.D < 2:
        raise ConfigError("position embedding needs D >= 2")
    gh, gw = cfg.H // cfg.patch[0], cfg.W // cfg.patch[1]
    dx = (cfg.D + 1) // 2
    dy = cfg.D - dx

    def axis_embed(n_chan: int, positions: np.ndarray) -> np.ndarray:
        out = np.empty((n_chan, positions.size))
        for i in range(n_chan):
            freq = 1.0 / (10000.0 ** (2 * (i // 2) / n_chan))
            fn = np.sin if i % 2 == 0 else np.cos
            out[i] = fn(positions * freq)
        return out

    ys, xs = np.mgrid[0:gh, 0:gw]
    return np.concatenate([axis_embed(dx, xs.ravel().astype(np.float64)),
                           axis_embed(dy, ys.ravel().astype(np.float64))])


# ---------------------------------------------------------------------------
# attention and encoder layers
# ---------------------------------------------------------------------------

def _promote(z: Tensor) -> tuple[Tensor, bool]:
    if z.data.ndim == 2:
        return ops.reshape(z, (1,) + z.data.shape), True
    if z.data.ndim == 3:
        return z, False
    raise ConfigError(f"token volume must be (D, L) or (B, D, L), got {z.shape}")


def keypoint_attention(z: Tensor, lp: LayerParams,
                       cfg: EncoderConfig) -> tuple[Tensor, np.ndarray]:
    """Multi-head self-attention over channel tokens.

    Heads take contiguous D_h-channel blocks; per head the attention matrix is
    softmax(Q K^T / scale) of shape (D_h, D_h), with Q, K, V produced by
    learned per-position channel maps.  Returns the projected attention output
    (residual not applied) and the attention maps ``(B, heads, D_h, D_h)``.
    """
    z3, squeeze = _promote(z)
    b = z3.data.shape[0]
    h, dh = cfg.n_heads, cfg.head_dim
    zh = ops.reshape(z3, (b, h, dh, cfg.L))
    q = ops.linear_heads(lp.w_q.tensor(), zh, lp.b_q.tensor())
    k = ops.linear_heads(lp.w_k.tensor(), zh, lp.b_k.tensor())
    v = ops.linear_heads(lp.w_v.tensor(), zh, lp.b_v.tensor())
    logits = ops.scale(ops.matmul(q, ops.transpose(k)), 1.0 / cfg.attn_scale)
    attn = ops.softmax_rows(logits, tag="attn")
    mixed = ops.reshape(ops.matmul(attn, v), (b, cfg.D, cfg.L))
    out = ops.linear_rows(lp.w_o.tensor(), mixed, lp.b_o.tensor())
    if squeeze:
        out = ops.reshape(out, (cfg.D, cfg.L))
    return out, attn.data.copy()


def encoder_layer(z: Tensor, lp: LayerParams,
                  cfg: EncoderConfig) -> tuple[Tensor, np.ndarray]:
    """Pre-norm block with zero-initialized per-channel residual scales:

        z1 = alpha     * MSA(LN(z))  + z
        z2 = alpha_bar * MLP(LN(z1)) + z1
    """
    z3, squeeze = _promote(z)
    normed = ops.layernorm(z3, lp.ln1_gain.tensor(), lp.ln1_bias.tensor())
    attn_out, attn = keypoint_attention(normed, lp, cfg)
    z1 = ops.residual_scale(attn_out, lp.alpha.tensor(), z3)
    normed2 = ops.layernorm(z1, lp.ln2_gain.tensor(), lp.ln2_bias.tensor())
    hdn = ops.gelu(ops.linear_rows(lp.w_m1.tensor(), normed2,
                                   lp.b_m1.tensor()))
    mlp_out = ops.linear_rows(lp.w_m2.tensor(), hdn, lp.b_m2.tensor())
    z2 = ops.residual_scale(mlp_out, lp.alpha_bar.tensor(), z1)
    if squeeze:
        z2 = ops.reshape(z2, (cfg.D, cfg.L))
    return z2, attn


def encoder_forward(features: Sequence[Tensor], cfg: EncoderConfig,
                    params: EncoderParams, *, collect_tokens: bool = False):
    """Embed, add the sine position embedding before the first layer only,
    run the layer stack, and collapse tokens to N_j heatmaps with a learned
    1x1 convolution.

    Returns ``(heatmaps, attn_maps)`` where heatmaps is ``(B, N_j, H, W)``
    (or unbatched if the features were) and attn_maps has one entry per
    layer.  ``collect_tokens`` additionally returns the token volume after
    every layer, used by the identity-at-initialization checks.
    """
    if cfg.attention_kind != "keypoint_wise":
        raise ConfigError(
            "encoder_forward runs keypoint-wise attention; the patch-local "
            "kind exists only as a benchmark comparator")
    if cfg.patch != (1, 1):
        raise ConfigError("the heatmap head requires 1x1 patches")
    batched = features[0].data.ndim == 4
    z = temporal_patch_embed(features, cfg, params)
    if not batched:
        z = ops.reshape(z, (1,) + z.data.shape)
    if params.pos_embed is not None:
        z = ops.add_const(z, params.pos_embed)
    attns = []
    tokens = [z.data.copy()] if collect_tokens else None
    for lp in params.layers:
        z, attn = encoder_layer(z, lp, cfg)
        attns.append(attn)
        if collect_tokens:
            tokens.append(z.data.copy())
    planes = unembed(z, cfg)
    heat = ops.bias_channels(ops.conv2d(planes, params.head_w.tensor()),
                             params.head_b.tensor())
    if not batched:
        heat = ops.reshape(heat, heat.data.shape[1:])
    if collect_tokens:
        return heat, attns, tokens
    return heat, attns


# ---------------------------------------------------------------------------
# benchmark comparators (forward only, spatial tokens)
# ---------------------------------------------------------------------------

@dataclass
class PatchAttentionParams:
    """Plain (D, D) projection set for the position-token comparators."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    @staticmethod
    def create(d: int, rng: np.random.Generator) -> "PatchAttentionParams":
        return PatchAttentionParams(*(rng.normal(0.0, WEIGHT_STD, (d, d))
                                      for _ in range(3)))


def patch_full_attention(z: np.ndarray, params: PatchAttentionParams) -> np.ndarray:
    """Full self-attention over the L spatial tokens: allocates an L x L map."""
    d = z.shape[0]
    q = (params.w_q @ z).T  # (L, D)
    k = (params.w_k @ z).T
    v = (params.w_v @ z).T
    logits = q @ k.T / np.sqrt(d)
    logits -= logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    attn = Tensor(e / e.sum(axis=-1, keepdims=True), tag="attn")
    return (attn.data @ v).T


def local_window_attention(z: np.ndarray, window: int, grid: tuple[int, int],
                           params: PatchAttentionParams) -> np.ndarray:
    """Self-attention over spatial tokens restricted to square windows.

    Each query attends to a ``window x window`` patch of the grid, shifted to
    stay inside it near borders; a window at least as large as the grid
    degenerates to full patch attention (after a warning when clamped).
    Attention buffers total L * window^2 entries.  Forward only.
    """
    hh, ww = grid
    d, L = z.shape
    if L != hh * ww:
        raise ConfigError(f"grid {grid} does not match L={L}")
    if window < 1:
        raise ConfigError("window must be >= 1")
    wy, wx = min(window, hh), min(window, ww)
    if wy != window or wx != window:
        warnings.warn(f"window {window} clamped to grid {grid}", stacklevel=2)
    if wy == hh and wx == ww:
        return patch_full_attention(z, params)

    q = (params.w_q @ z).T.reshape(hh, ww, d)
    k = (params.w_k @ z).T.reshape(hh, ww, d)
    v = (params.w_v @ z).T.reshape(hh, ww, d)
    scale = 1.0 / np.sqrt(d)
    x0 = np.clip(np.arange(ww) - wx // 2, 0, ww - wx)
    # flat key indices of each query's band inside a (wy, W) row block
    band = (np.arange(wy)[None, :, None] * ww
            + (x0[:, None, None] + np.arange(wx)[None, None, :]))
    band = band.reshape(ww, wy * wx)                    # (W, wy*wx)
    out = np.empty((hh, ww, d))
    for y in range(hh):
        y0 = min(max(y - wy // 2, 0), hh - wy)
        k_block = k[y0:y0 + wy].reshape(wy * ww, d)
        v_block = v[y0:y0 + wy].reshape(wy * ww, d)
        logits_full = (q[y] @ k_block.T) * scale        # (W, wy*W)
        flat = np.take_along_axis(logits_full, band, axis=1)
        flat -= flat.max(axis=-1, keepdims=True)
        e = np.exp(flat)
        attn = Tensor(e / e.sum(axis=-1, keepdims=True), tag="attn")
        spread = np.zeros_like(logits_full)
        np.put_along_axis(spread, band, attn.data, axis=1)
        out[y] = spread @ v_block
    return out.reshape(L, d).T
