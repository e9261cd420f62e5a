"""The gradient-check suite behind the ``gradcheck`` command.

Every differentiable operation is verified against central differences at
float64 on toy shapes, plus composite checks: a full encoder layer, a small
encoder forward, and the whole model end to end (3 joints on a 16x12 grid).
Composite checks sample a deterministic subset of parameter entries to stay
inside the one-minute budget; thresholds follow the per-op contracts
(1e-5 for primitive ops, 1e-4 for deformable offsets and composites).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import posenet
from .. import training
from ..encoder import EncoderConfig, EncoderParams, encoder_layer, encoder_forward
from ..tensorlab import Tensor, finite_diff_check, ops

PRIMITIVE_TOL = 1e-5
COMPOSITE_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.threshold


def _leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _unit_leaf(rng, *shape):
    return Tensor(rng.random(shape), requires_grad=True)


def _check_primitives(rng) -> list[CheckResult]:
    out = []

    def run(name, fn, inputs, tol=PRIMITIVE_TOL, h=1e-5):
        out.append(CheckResult(name, finite_diff_check(fn, inputs, h), tol))

    w34 = rng.standard_normal((3, 4))
    run("matmul", ops.matmul, [_leaf(rng, 3, 5), _leaf(rng, 5, 4)])
    run("softmax_rows",
        lambda x: ops.weighted_sum(ops.softmax_rows(x), w34),
        [_leaf(rng, 3, 4)])
    run("layernorm",
        lambda x, g, b: ops.weighted_sum(ops.layernorm(x, g, b), w34),
        [_leaf(rng, 3, 4), _leaf(rng, 4), _leaf(rng, 4)])
    run("gelu", ops.gelu, [_leaf(rng, 4, 6)])
    run("sigmoid", ops.sigmoid, [_leaf(rng, 4, 6)])
    w_conv = rng.standard_normal((2, 6, 5))
    run("conv2d_dilated",
        lambda x, w: ops.weighted_sum(ops.conv2d(x, w, dilation=2), w_conv),
        [_unit_leaf(rng, 3, 6, 5),
         Tensor(rng.standard_normal((2, 3, 3, 3)) * 0.3, requires_grad=True)])
    x_img = _unit_leaf(rng, 1, 6, 6)
    run("bilinear_sample_coords",
        lambda px, py: ops.bilinear_sample(x_img, px, py, c=0),
        [Tensor(np.asarray(2.3), requires_grad=True),
         Tensor(np.asarray(3.6), requires_grad=True)], h=1e-6, tol=COMPOSITE_TOL)
    run("bilinear_sample_image",
        lambda x: ops.bilinear_sample(x, 1.25, 2.75, c=0),
        [_unit_leaf(rng, 1, 5, 5)])
    bumps = rng.random((2, 4, 4))
    bumps[0, 1, 1] += 2.0
    bumps[1, 2, 3] += 2.0
    w_norm = rng.standard_normal((2, 4, 4))
    run("channel_max_norm",
        lambda x: ops.weighted_sum(ops.channel_max_norm(x), w_norm),
        [Tensor(bumps, requires_grad=True)])
    w_rows = rng.standard_normal((3, 5))
    run("scale_bias_rows",
        lambda x, s, b: ops.weighted_sum(
            ops.bias_rows(ops.scale_rows(x, s), b), w_rows),
        [_leaf(rng, 3, 5), _leaf(rng, 3), _leaf(rng, 3)])
    return out


def _check_deformable(rng) -> list[CheckResult]:
    out = []
    c, hh, ww = 2, 6, 5
    wmap = rng.standard_normal((c, hh, ww))
    x = _unit_leaf(rng, c, hh, ww)
    off = Tensor(0.25 + 0.1 * rng.random((18, hh, ww)), requires_grad=True)
    mod = Tensor(rng.standard_normal((9, hh, ww)) * 0.4, requires_grad=True)
    kern = Tensor(rng.standard_normal((c, c, 3, 3)) * 0.4, requires_grad=True)

    err = finite_diff_check(
        lambda o: ops.weighted_sum(
            posenet.deformable_conv3x3(x, o, mod, kern, 2), wmap),
        [off], h=1e-6)
    out.append(CheckResult("deformable_offsets", err, COMPOSITE_TOL))
    err = finite_diff_check(
        lambda xi, m, k: ops.weighted_sum(
            posenet.deformable_conv3x3(xi, off, m, k, 2), wmap),
        [x, mod, kern])
    out.append(CheckResult("deformable_input_mod_kernel", err, PRIMITIVE_TOL))
    return out


def _check_composites(rng) -> list[CheckResult]:
    out = []
    cfg = EncoderConfig(n_joints=3, n_feats=2, H=6, W=4, n_layers=1,
                        n_heads=2)
    params = EncoderParams(cfg, rng, "check", np.float64)
    lp = params.layers[0]
    lp.alpha.value[:] = 0.4
    lp.alpha_bar.value[:] = 0.3
    w_tok = rng.standard_normal((cfg.D, cfg.L))
    err = finite_diff_check(
        lambda z: ops.weighted_sum(encoder_layer(z, lp, cfg)[0], w_tok),
        [_leaf(rng, cfg.D, cfg.L)])
    out.append(CheckResult("encoder_layer", err, COMPOSITE_TOL))

    oe_cfg = EncoderConfig(n_joints=3, n_feats=1, H=6, W=4, n_layers=2,
                           n_heads=1)
    oe_params = EncoderParams(oe_cfg, rng, "check_oe", np.float64)
    for layer in oe_params.layers:
        layer.alpha.value[:] = 0.3
        layer.alpha_bar.value[:] = 0.2
    w_img = rng.standard_normal((3, 6, 4))
    err = finite_diff_check(
        lambda f: ops.weighted_sum(
            encoder_forward([f], oe_cfg, oe_params)[0], w_img),
        [_unit_leaf(rng, 3, 6, 4)])
    out.append(CheckResult("encoder_forward", err, COMPOSITE_TOL))
    return out


def _check_end_to_end(rng) -> list[CheckResult]:
    cfg = posenet.ModelConfig(n_joints=3, H=16, W=12, te_layers=8,
                              oe_layers=8, te_heads=2, refine_width=8,
                              dtype="f64")
    model = posenet.PoseModel(cfg, seed=17)
    for enc_params in (model.oe, model.te_prev, model.te_sub):
        for lp in enc_params.layers:
            lp.alpha.value[:] = 0.2
            lp.alpha_bar.value[:] = 0.15
    for w, b in zip(model.refine.offset_w, model.refine.offset_b):
        w.value[:] = rng.normal(0.0, 1e-3, w.value.shape)
        b.value[:] = rng.normal(0.0, 1e-3, b.value.shape)
    hm = rng.random((1, 5, 3, 16, 12))
    gt = rng.random((1, 3, 16, 12))
    vis = np.ones((1, 3), dtype=bool)

    def loss():
        res = posenet.forward_batch(model, hm, gt)
        l1 = training.loss_occ(res.psi, res.pseudo_label, vis)
        l2 = training.loss_pred(res.p, gt, vis)
        return ops.add(l1, l2)

    # every op backward is verified exhaustively above; here the point is
    # the wiring, so perturb a depth-covering subset: first and last layer
    # of each encoder, both heads, and the whole refine module
    last = cfg.te_layers - 1
    keep = ("layer0", f"layer{last}", "head", "refine", "embed")
    params = [p for p in model.parameters()
              if any(k in p.name for k in keep)]
    err = finite_diff_check(loss, [], params=params,
                            max_entries_per_input=2,
                            rng=np.random.default_rng(23))
    return [CheckResult("end_to_end", err, COMPOSITE_TOL)]


def run_all(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    results += _check_primitives(rng)
    results += _check_deformable(rng)
    results += _check_composites(rng)
    results += _check_end_to_end(rng)
    return results


def format_results(results: list[CheckResult]) -> str:
    lines = [f"{'check':<28} {'max_rel_err':>12} {'threshold':>10}  status"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<28} {r.max_rel_err:>12.3e} "
                     f"{r.threshold:>10.0e}  {status}")
    return "\n".join(lines)
