"""Full model assembly: occlusion encoder, two temporal branches, and the
multi-dilation deformable refinement producing the final heatmaps.

Per window the pipeline is: build the five keypoint flows and attention
masks, encode the total flow into occlusion-aware heatmaps, feed each
temporal branch its eight stacked feature maps (shared context plus the
branch-specific flow/mask pair), and refine the total flow with modulated
deformable 3x3 convolutions at dilations {3, 6, 9, 12, 15} whose offsets and
modulation are predicted from the two branch outputs and their difference.

Ablation switches: ``one_branch`` routes the past-context branch output to
both refine inputs (the future branch is not built), ``no_oe`` substitutes
the total attention mask for the encoded heatmaps, and ``pseudo_from_flow``
builds the pseudo label from the total flow instead of the total mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import flowmask
from .encoder import EncoderConfig, EncoderParams, WEIGHT_STD, encoder_forward
from .tensorlab import ConfigError, DimensionError, Parameter, Tensor
from .tensorlab import ops

DILATIONS = (3, 6, 9, 12, 15)


@dataclass
class ModelConfig:
    n_joints: int = 15
    H: int = 64
    W: int = 48
    te_layers: int = 8
    oe_layers: int = 8
    te_heads: int = 2
    oe_heads: int = 1
    mlp_ratio: float = 2.0
    refine_width: int = 24
    dilations: tuple = DILATIONS
    scale_full_d: bool = False
    use_pos_embed: bool = True
    one_branch: bool = False
    no_oe: bool = False
    pseudo_from_flow: bool = False
    pseudo_label_norm: str = "max"
    dtype: str = "f64"

    @property
    def np_dtype(self):
        if self.dtype == "f64":
            return np.float64
        if self.dtype == "f32":
            return np.float32
        raise ConfigError(f"unknown dtype {self.dtype!r} (use 'f32' or 'f64')")

    def oe_config(self) -> EncoderConfig:
        return EncoderConfig(n_joints=self.n_joints, n_feats=1, H=self.H,
                             W=self.W, n_layers=self.oe_layers,
                             n_heads=self.oe_heads, mlp_ratio=self.mlp_ratio,
                             scale_full_d=self.scale_full_d,
                             use_pos_embed=self.use_pos_embed)

    def te_config(self) -> EncoderConfig:
        return EncoderConfig(n_joints=self.n_joints, n_feats=8, H=self.H,
                             W=self.W, n_layers=self.te_layers,
                             n_heads=self.te_heads, mlp_ratio=self.mlp_ratio,
                             scale_full_d=self.scale_full_d,
                             use_pos_embed=self.use_pos_embed)


# ---------------------------------------------------------------------------
# modulated deformable convolution
# ---------------------------------------------------------------------------

def deformable_conv3x3(x: Tensor, offsets: Tensor, modulation: Tensor,
                       kernel: Tensor, dilation: int, *,
                       unit_modulation: bool = False) -> Tensor:
    """Modulated deformable 3x3 convolution (dilated, size preserving).

    For every output pixel, each of the nine taps samples the input
    bilinearly at its dilated position plus a learned per-pixel offset,
    scales the sample by the logistic of its modulation channel, and the
    results contract with the kernel.  ``offsets`` has 18 channels laid out
    (dy, dx) per tap, ``modulation`` 9 pre-activation channels.  Sampling
    outside the image reads zero.  Differentiable in all four operands
    (input gradients use a scatter-add and are only computed on demand).

    ``unit_modulation`` is a test hook that pins the post-activation
    modulation to 1, reducing the op to a plain dilated convolution when the
    offsets are zero.
    """
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    od = offsets.data[None] if offsets.data.ndim == 3 else offsets.data
    md = modulation.data[None] if modulation.data.ndim == 3 else modulation.data
    if xd.ndim != 4:
        raise DimensionError(f"deformable input must be (B, C, H, W), got {x.shape}")
    b, c, hh, ww = xd.shape
    if od.shape != (b, 18, hh, ww):
        raise DimensionError(f"offsets must be (B, 18, H, W), got {offsets.shape}")
    if md.shape != (b, 9, hh, ww):
        raise DimensionError(f"modulation must be (B, 9, H, W), got {modulation.shape}")
    kd = kernel.data
    if kd.ndim != 4 or kd.shape[1:] != (c, 3, 3):
        raise DimensionError(f"kernel must be (C_out, {c}, 3, 3), got {kernel.shape}")
    co = kd.shape[0]
    L = hh * ww
    dt = xd.dtype

    taps = np.array([(dilation * (t // 3 - 1), dilation * (t % 3 - 1))
                     for t in range(9)], dtype=dt)
    yy = (np.arange(L) // ww).astype(dt)
    xx = (np.arange(L) % ww).astype(dt)
    off = od.reshape(b, 9, 2, L)
    py = yy[None, None, :] + taps[None, :, 0, None] + off[:, :, 0, :]
    px = xx[None, None, :] + taps[None, :, 1, None] + off[:, :, 1, :]

    y0 = np.floor(py)
    x0 = np.floor(px)
    ay = (py - y0).astype(dt)
    ax = (px - x0).astype(dt)
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)

    corners = []  # (idx, valid, weight) per corner, each (B, 9, L)
    for dy, dx, wgt in ((0, 0, (1 - ay) * (1 - ax)), (0, 1, (1 - ay) * ax),
                        (1, 0, ay * (1 - ax)), (1, 1, ay * ax)):
        cy, cx = y0 + dy, x0 + dx
        valid = (cy >= 0) & (cy < hh) & (cx >= 0) & (cx < ww)
        idx = np.clip(cy, 0, hh - 1) * ww + np.clip(cx, 0, ww - 1)
        corners.append((idx, valid, np.where(valid, wgt, 0).astype(dt)))

    xf = xd.reshape(b, c, L)

    def gather(corner):
        idx, valid, _ = corner
        vals = np.empty((b, c, 9, L), dtype=dt)
        for bi in range(b):
            vals[bi] = xf[bi][:, idx[bi]]
            vals[bi][:, ~valid[bi]] = 0.0
        return vals

    def gathered_sum():
        acc = np.zeros((b, c, 9, L), dtype=dt)
        for corner in corners:
            acc += corner[2][:, None] * gather(corner)
        return acc

    if unit_modulation:
        m = np.ones((b, 9, L), dtype=dt)
    else:
        m = 1.0 / (1.0 + np.exp(-md.reshape(b, 9, L)))
    kmat = kd.reshape(co, c * 9)
    gm = (gathered_sum() * m[:, None]).reshape(b, c * 9, L)
    out = np.matmul(kmat, gm).reshape(b, co, hh, ww)
    del gm  # rebuilt on demand in backward; it is 9x the input size
    result = out[0] if squeeze else out

    def bwd(g):
        g4 = g[None] if squeeze else g
        gy = g4.reshape(b, co, L)
        d_kernel = d_off = d_mod = d_x = None
        need_off = offsets.requires_grad
        need_mod = modulation.requires_grad and not unit_modulation
        need_x = x.requires_grad
        v = None
        g_val = None
        if kernel.requires_grad or need_mod or need_off:
            # one pass of corner gathers serves the kernel, modulation, and
            # offset gradients alike
            v = [gather(cn) for cn in corners]
            g_val = sum(cn[2][:, None] * vi for cn, vi in zip(corners, v))
        if kernel.requires_grad:
            gm2 = (g_val * m[:, None]).reshape(b, c * 9, L)
            gy_flat = gy.transpose(1, 0, 2).reshape(co, b * L)
            gm_flat = gm2.transpose(1, 0, 2).reshape(c * 9, b * L)
            d_kernel = np.matmul(gy_flat, gm_flat.T).reshape(kd.shape)
        if need_off or need_mod or need_x:
            dgm = np.matmul(kmat.T, gy).reshape(b, c, 9, L)
            if need_mod:
                dm = (dgm * g_val).sum(axis=1)
                d_mod = (dm * m * (1.0 - m)).reshape(b, 9, hh, ww)
                if modulation.data.ndim == 3:
                    d_mod = d_mod[0]
            dg = dgm * m[:, None]
            if need_off:
                dpy = (dg * ((1 - ax)[:, None] * (v[2] - v[0])
                             + ax[:, None] * (v[3] - v[1]))).sum(axis=1)
                dpx = (dg * ((1 - ay)[:, None] * (v[1] - v[0])
                             + ay[:, None] * (v[3] - v[2]))).sum(axis=1)
                d_off = np.stack([dpy, dpx], axis=2).reshape(b, 18, hh, ww)
                if offsets.data.ndim == 3:
                    d_off = d_off[0]
            if need_x:
                dxf = np.zeros((b, c, L), dtype=dt)
                rows = np.arange(c)[:, None, None]
                for idx, valid, wgt in corners:
                    for bi in range(b):
                        contrib = wgt[bi][None] * dg[bi]
                        np.add.at(dxf[bi], (rows, idx[bi][None].repeat(c, 0)),
                                  contrib)
                d_x = dxf.reshape(b, c, hh, ww)
                if squeeze:
                    d_x = d_x[0]
        return (d_x, d_off, d_mod, d_kernel)

    return Tensor.from_op(result, (x, offsets, modulation, kernel), bwd)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

class RefineParams:
    """Shared 3x3 conv stack plus per-dilation offset/modulation convolutions
    (zero-initialized, so refinement starts as a plain multi-dilation
    smoother) and per-dilation deformable kernels."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype):
        nj, w = cfg.n_joints, cfg.refine_width

        def gauss(shape):
            return rng.normal(0.0, WEIGHT_STD, size=shape).astype(dtype)

        self.conv1_w = Parameter(gauss((w, 4 * nj, 3, 3)), "refine.conv1_w", dtype=dtype)
        self.conv1_b = Parameter(np.zeros(w), "refine.conv1_b", dtype=dtype)
        self.conv2_w = Parameter(gauss((w, w, 3, 3)), "refine.conv2_w", dtype=dtype)
        self.conv2_b = Parameter(np.zeros(w), "refine.conv2_b", dtype=dtype)
        self.offset_w, self.offset_b = [], []
        self.kernels = []
        for d in cfg.dilations:
            self.offset_w.append(Parameter(np.zeros((27, w, 3, 3)),
                                           f"refine.d{d}.offset_w", dtype=dtype))
            self.offset_b.append(Parameter(np.zeros(27),
                                           f"refine.d{d}.offset_b", dtype=dtype))
            self.kernels.append(Parameter(gauss((nj, nj, 3, 3)),
                                          f"refine.d{d}.kernel", dtype=dtype))

    def parameters(self):
        yield from (self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b)
        for w, b, k in zip(self.offset_w, self.offset_b, self.kernels):
            yield w
            yield b
            yield k


class PoseModel:
    """Owns every parameter group: occlusion encoder, the temporal branch
    encoders (independent parameters), and the refine module."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        dtype = cfg.np_dtype
        root = np.random.SeedSequence(seed)
        keys = root.spawn(4)
        self.oe = None if cfg.no_oe else EncoderParams(
            cfg.oe_config(), np.random.default_rng(keys[0]), "oe", dtype)
        self.te_prev = EncoderParams(
            cfg.te_config(), np.random.default_rng(keys[1]), "te_prev", dtype)
        self.te_sub = None if cfg.one_branch else EncoderParams(
            cfg.te_config(), np.random.default_rng(keys[2]), "te_sub", dtype)
        self.refine = RefineParams(cfg, np.random.default_rng(keys[3]), dtype)

    def parameters(self):
        if self.oe is not None:
            yield from self.oe.parameters()
        yield from self.te_prev.parameters()
        if self.te_sub is not None:
            yield from self.te_sub.parameters()
        yield from self.refine.parameters()

    def named_parameters(self) -> dict[str, Parameter]:
        out = {}
        for p in self.parameters():
            if p.name in out:
                raise ConfigError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    def group_grad_norms(self) -> dict[str, float]:
        groups: dict[str, float] = {}
        for p in self.parameters():
            key = p.name.split(".", 1)[0]
            groups[key] = groups.get(key, 0.0) + float((p.grad ** 2).sum())
        return {k: float(np.sqrt(v)) for k, v in groups.items()}


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def occlusion_encode(f_total: Tensor, params: EncoderParams,
                     cfg: EncoderConfig) -> tuple[Tensor, list]:
    """Occlusion-aware heatmaps from the total flow, squashed into [0, 1]."""
    heat, attns = encoder_forward([f_total], cfg, params)
    return ops.sigmoid(heat), attns


def temporal_encode(inputs: Sequence[Tensor], params: EncoderParams,
                    cfg: EncoderConfig) -> tuple[Tensor, list]:
    """One temporal branch over its eight stacked feature maps."""
    if len(inputs) != 8:
        raise ConfigError(f"temporal branch expects 8 feature maps, got {len(inputs)}")
    return encoder_forward(inputs, cfg, params)


def branch_inputs(flows: dict, masks: dict, psi: Tensor,
                  branch: str) -> list[Tensor]:
    """Stack order: shared context [M_close, F_close, M_far, F_far, M_total,
    psi_total] then the branch's (M_k, F_k) for k in {prev, sub}."""
    if branch not in ("prev", "sub"):
        raise ConfigError(f"branch must be 'prev' or 'sub', got {branch!r}")
    dtype = psi.data.dtype
    def t(a):
        return Tensor(np.ascontiguousarray(a, dtype=dtype))
    return [t(masks["close"]), t(flows["close"]), t(masks["far"]),
            t(flows["far"]), t(masks["total"]), psi,
            t(masks[branch]), t(flows[branch])]


def refine(phi_prev: Tensor, phi_sub: Tensor, f_total: Tensor,
           params: RefineParams, cfg: ModelConfig, *,
           unit_modulation: bool = False, return_prenorm: bool = False):
    """Predict offsets/modulation from both branches and their difference,
    sample the total flow with deformable kernels at every dilation, and
    average the per-dilation outputs; the result is channel max-normalized.
    """
    u0 = ops.concat([phi_prev, phi_sub, ops.sub(phi_prev, phi_sub), f_total],
                    axis=-3)
    u1 = ops.gelu(ops.bias_channels(ops.conv2d(u0, params.conv1_w.tensor()),
                                    params.conv1_b.tensor()))
    u = ops.bias_channels(ops.conv2d(u1, params.conv2_w.tensor()),
                          params.conv2_b.tensor())
    # offsets and modulation for all dilations come from one stacked
    # convolution over u; each dilation's 27 channels are independent weights
    w_all = ops.concat([w.tensor() for w in params.offset_w], axis=0)
    b_all = ops.concat([b.tensor() for b in params.offset_b], axis=0)
    fields = ops.bias_channels(ops.conv2d(u, w_all), b_all)
    total = None
    for i, d in enumerate(cfg.dilations):
        off = ops.slice_channels(fields, 27 * i, 27 * i + 18)
        mod = ops.slice_channels(fields, 27 * i + 18, 27 * i + 27)
        y = deformable_conv3x3(f_total, off, mod, params.kernels[i].tensor(),
                               d, unit_modulation=unit_modulation)
        total = y if total is None else ops.add(total, y)
    prenorm = ops.scale(total, 1.0 / len(cfg.dilations))
    # kernels are signed, so clamp at zero before the per-channel max
    # normalization to keep the heatmap value contract
    p = ops.channel_max_norm(ops.relu(prenorm))
    if return_prenorm:
        return p, prenorm
    return p


@dataclass
class ForwardResult:
    """Prediction plus everything worth inspecting downstream."""

    p: Tensor                       # (B, N_j, H, W) in [0, 1]
    psi: Tensor                     # (B, N_j, H, W)
    pseudo_label: Optional[np.ndarray]
    flows: dict = field(repr=False, default=None)
    masks: dict = field(repr=False, default=None)
    attn_oe: list = field(repr=False, default_factory=list)
    attn_prev: list = field(repr=False, default_factory=list)
    attn_sub: list = field(repr=False, default_factory=list)


def forward_batch(model: PoseModel, heatmaps: np.ndarray,
                  gt_heatmaps: Optional[np.ndarray] = None) -> ForwardResult:
    """Run the full pipeline on stacked windows ``(B, 5, N_j, H, W)``.

    ``gt_heatmaps`` (``(B, N_j, H, W)``) triggers pseudo-label construction
    for the occlusion loss.  Flows and masks are inputs, not activations:
    no gradient flows into them.
    """
    cfg = model.cfg
    dt = cfg.np_dtype
    hm = np.ascontiguousarray(heatmaps, dtype=dt)
    if hm.ndim != 5:
        raise DimensionError(f"expected (B, 5, N_j, H, W), got {hm.shape}")
    flows = flowmask.build_flows(hm)
    masks = flowmask.build_masks(flows)
    f_total = Tensor(flows["total"])

    attn_oe: list = []
    if model.oe is None:
        psi = Tensor(masks["total"].astype(dt, copy=True))
    else:
        psi, attn_oe = occlusion_encode(f_total, model.oe, cfg.oe_config())

    te_cfg = cfg.te_config()
    phi_prev, attn_prev = temporal_encode(
        branch_inputs(flows.flows, masks, psi, "prev"), model.te_prev, te_cfg)
    if model.te_sub is None:
        phi_sub, attn_sub = phi_prev, []
    else:
        phi_sub, attn_sub = temporal_encode(
            branch_inputs(flows.flows, masks, psi, "sub"), model.te_sub, te_cfg)

    p = refine(phi_prev, phi_sub, f_total, model.refine, cfg)

    pseudo = None
    if gt_heatmaps is not None:
        source = flows["total"] if cfg.pseudo_from_flow else masks["total"]
        pseudo = flowmask.build_pseudo_label(
            source, np.ascontiguousarray(gt_heatmaps, dtype=dt),
            mode=cfg.pseudo_label_norm)
    return ForwardResult(p=p, psi=psi, pseudo_label=pseudo, flows=flows.flows,
                         masks=masks, attn_oe=attn_oe, attn_prev=attn_prev,
                         attn_sub=attn_sub)


def forward(model: PoseModel, window) -> ForwardResult:
    """Single-window forward; see :func:`forward_batch`."""
    gt = None if window.gt_heatmaps is None else window.gt_heatmaps[None]
    res = forward_batch(model, window.heatmaps[None], gt)
    return res
