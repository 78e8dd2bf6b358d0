"""The finite-difference gradient suite over every differentiable op, layer
and full model. Used by ``ssnet gradcheck`` and the acceptance tests."""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import tensor as T
from .gradcheck import GradCheckReport, check_gradients, check_module, grad_check
from .nn import Conv2D, LayerNorm, Linear, MultiHeadSelfAttention
from .ssn import SSNBlock, SSNModel, SSNModelConfig, StageConfig, StemConfig, UCDLayer
from .tensor import Tensor
from .train import compute_loss
from .zoo import TinyResidual, TinyResidualConfig, TinyViT, TinyViTConfig

TOLERANCE = 1e-4


def reduced_ssn_config(seed: int = 0) -> SSNModelConfig:
    """16x16 input, one block per stage."""
    return SSNModelConfig(
        stem=StemConfig(channels=[8, 8, 8, 8, 8]),
        stages=[StageConfig(1, 8, 2), StageConfig(1, 16, 2)],
        raster_size=16,
        proj_dim=16,
        horizon=4,
        seed=seed,
    )


def _rand(rng, *shape, scale=1.0):
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True)


def _op_cases(seed: int) -> list[tuple[str, Callable[[], GradCheckReport]]]:
    rng = np.random.default_rng(seed)
    cases = [
        ("matmul", lambda: grad_check(T.matmul, [(4, 5), (5, 3)], seed=seed)),
        ("conv2d", lambda: grad_check(lambda x, w, b: T.conv2d(x, w, b, 1, 1), [(2, 5, 5), (3, 2, 3, 3), (3,)], seed=seed)),
        ("conv2d-stride2", lambda: grad_check(lambda x, w, b: T.conv2d(x, w, b, 2, 1), [(2, 2, 7, 7), (3, 2, 3, 3), (3,)], seed=seed)),
        ("gelu", lambda: grad_check(T.gelu, [(16,)], seed=seed)),
        ("softmax", lambda: grad_check(lambda x: T.softmax(x, -1), [(3, 7)], seed=seed)),
        ("avg_pool_global", lambda: grad_check(T.avg_pool_global, [(3, 4, 5)], seed=seed)),
        ("downsample_half", lambda: grad_check(T.downsample_half, [(2, 4, 6)], seed=seed)),
        ("standardize", lambda: grad_check(T.standardize, [(5, 6)], seed=seed)),
        ("wrap_angle", lambda: grad_check(T.wrap_angle, [(10,)], seed=seed)),
    ]
    x_tokens = _rand(rng, 2, 5, 8)
    lin = Linear(8, 6, rng)
    ln = LayerNorm(8)
    ln.gain.data = 1.0 + 0.1 * rng.standard_normal(8)
    mhsa = MultiHeadSelfAttention(8, 2, rng)
    conv = Conv2D(3, 4, 3, seed=rng)
    x_img = _rand(rng, 2, 3, 6, 6)
    cases += [
        ("linear", lambda: check_module(lin, lambda: lin(x_tokens), extra_inputs=[x_tokens], max_entries=None, label="linear")),
        ("layer_norm", lambda: check_module(ln, lambda: ln(x_tokens), extra_inputs=[x_tokens], max_entries=None, label="layer_norm")),
        ("mhsa", lambda: check_module(mhsa, lambda: mhsa(x_tokens), extra_inputs=[x_tokens], max_entries=None, label="mhsa")),
        ("conv_layer", lambda: check_module(conv, lambda: conv(x_img), extra_inputs=[x_img], max_entries=None, label="conv_layer")),
    ]
    return cases


def _ssn_cases(seed: int) -> list[tuple[str, Callable[[], GradCheckReport]]]:
    rng = np.random.default_rng(seed + 1)
    block = SSNBlock(8, 2, seed=rng)
    x = _rand(rng, 2, 8, 4, 4)
    ucd = UCDLayer(8, 12, rng)
    reduced = SSNModel(reduced_ssn_config(seed))
    img16 = _rand(rng, 2, 5, 16, 16)
    desk = SSNModel(SSNModelConfig(seed=seed))
    img64 = Tensor(rng.random((1, 5, 64, 64)))
    return [
        ("ucd", lambda: check_module(ucd, lambda: ucd(x), extra_inputs=[x], max_entries=None, label="ucd")),
        ("rru", lambda: check_module(block, lambda: block.rru(x), extra_inputs=[x], max_entries=8, label="rru")),
        ("fmhsa", lambda: check_module(block, lambda: block.fmhsa(x), extra_inputs=[x], max_entries=8, label="fmhsa")),
        ("iru", lambda: check_module(block, lambda: block.iru(x), extra_inputs=[x], max_entries=8, label="iru")),
        ("ssn_block", lambda: check_module(block, lambda: block(x), extra_inputs=[x], max_entries=8, label="ssn_block")),
        ("stem", lambda: check_module(reduced, lambda: reduced.stem_forward(img16), extra_inputs=[img16], max_entries=6, label="stem")),
        ("ssn_reduced", lambda: check_module(reduced, lambda: reduced(img16), extra_inputs=[img16], max_entries=6, label="ssn_reduced")),
        ("ssn_desk", lambda: check_module(desk, lambda: desk(img64), max_entries=2, label="ssn_desk")),
    ]


def _baseline_cases(seed: int) -> list[tuple[str, Callable[[], GradCheckReport]]]:
    rng = np.random.default_rng(seed + 2)
    res = TinyResidual(TinyResidualConfig(channels=[8, 8, 16], raster_size=32, proj_dim=16, horizon=4, seed=seed))
    vit = TinyViT(TinyViTConfig(patch_size=8, dim=16, depth=2, heads=2, raster_size=32, proj_dim=16, horizon=4, seed=seed))
    img = _rand(rng, 2, 5, 32, 32)
    pred = _rand(rng, 2, 4, 3)
    target = Tensor(rng.standard_normal((2, 4, 3)))
    return [
        ("tiny_residual", lambda: check_module(res, lambda: res(img), extra_inputs=[img], max_entries=6, label="tiny_residual")),
        ("tiny_vit", lambda: check_module(vit, lambda: vit(img), extra_inputs=[img], max_entries=6, label="tiny_vit")),
        ("loss", lambda: check_gradients(lambda p: compute_loss(p, target), [pred], label="loss")),
    ]


def gradient_suite(seed: int = 0) -> list[tuple[str, Callable[[], GradCheckReport]]]:
    return _op_cases(seed) + _ssn_cases(seed) + _baseline_cases(seed)


def run_gradient_suite(seeds=(0, 1, 2), tolerance: float = TOLERANCE, echo=print) -> tuple[bool, list[GradCheckReport]]:
    """Run every case for each seed; returns (all passed, reports)."""
    reports = []
    start = time.perf_counter()
    for seed in seeds:
        for name, case in gradient_suite(seed):
            rep = case()
            rep.label = f"{name}[seed={seed}]"
            rep.passed = rep.max_rel_err < tolerance
            reports.append(rep)
            if echo:
                echo(str(rep))
    if echo:
        echo(f"gradient suite: {sum(r.passed for r in reports)}/{len(reports)} passed in {time.perf_counter() - start:.1f}s")
    return all(r.passed for r in reports), reports
