"""Iterative pre-image baseline: optimize pixels to match target statistics.

This is the descriptive counterpart of the feed-forward generator: starting
from Gaussian noise around mid-gray, Adam adjusts the pixels of a single
image to minimize the same texture (or stylization) loss, so losses are
directly comparable between the two routes.  ``match_loss_time`` runs both
and reports how long the iterative route needs to reach the feed-forward
loss level.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .descriptor import (
    content_features,
    content_loss_from_features,
    descriptor_forward,
    gram_targets,
    texture_loss,
    texture_loss_from_features,
)
from .errors import NumericError
from .generator import generator_forward, sample_noise
from .tensor import Tensor, no_grad, zero_grad
from .training import AdamState, adam_step


@dataclass
class PreimageConfig:
    max_iters: int = 500
    lr: float = 0.05
    init_sigma: float = 0.25
    init_mean: float = 0.5
    target_loss: float | None = None
    seed: int = 0


@dataclass
class PreimageStep:
    iteration: int
    loss: float
    millis: float


def write_preimage_csv(trace, path):
    with open(path, "w") as fh:
        fh.write("iteration,loss,millis\n")
        for row in trace:
            fh.write(f"{row.iteration},{row.loss:.10g},{row.millis:.3f}\n")


def synthesize_iterative(prototype, net, loss_spec, cfg, content=None, init_image=None):
    """Gradient-descend pixels toward the prototype's statistics.

    With ``content`` the objective is the stylization loss, otherwise the
    texture loss.  Returns (best image Tensor, trace of PreimageStep); stops
    early once loss <= cfg.target_loss.  The loss is evaluated before each
    step, so a satisfied target returns at iteration 0 untouched.
    """
    targets = gram_targets(net, prototype, loss_spec)
    content_targets = None
    if content is not None and loss_spec.alpha > 0 and loss_spec.content_layers:
        content_targets = content_features(net, content, loss_spec)
    rng = np.random.default_rng(cfg.seed)
    if init_image is not None:
        x = Tensor(np.array(init_image.data, copy=True), requires_grad=True)
    else:
        shape = (1, 3, prototype.shape[2], prototype.shape[3])
        start = cfg.init_mean + cfg.init_sigma * rng.standard_normal(shape)
        x = Tensor(start.astype(prototype.dtype), requires_grad=True)

    opt = AdamState([x])
    trace = []
    best_loss = np.inf
    best = x.data.copy()
    t0 = time.perf_counter()
    for it in range(cfg.max_iters + 1):
        feats = descriptor_forward(net, x)
        loss = texture_loss_from_features(feats, targets, loss_spec)
        if content_targets is not None:
            loss = loss + content_loss_from_features(feats, content_targets, loss_spec).scale(
                loss_spec.alpha
            )
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"pre-image loss diverged at iteration {it}: {value}")
        if value < best_loss:
            best_loss = value
            best = x.data.copy()
        trace.append(PreimageStep(it, value, (time.perf_counter() - t0) * 1e3))
        if cfg.target_loss is not None and value <= cfg.target_loss:
            break
        if it == cfg.max_iters:
            break
        zero_grad([x])
        loss.backward()
        adam_step([x], [x.grad], opt, cfg.lr)
    return Tensor(best), trace


def match_loss_time(params, net, loss_spec, prototype, cfg, samples=8, seed=0):
    """Time the iterative route to the feed-forward loss level.

    Draws ``samples`` eval-mode samples in one graph-free batched forward,
    reporting the per-sample wall-clock time and the mean per-sample texture
    loss, then runs ``synthesize_iterative`` with that loss as the stopping
    target.  Reports both times and their ratio; ``matched`` is False when
    the budget ran out, in which case the ratio is only a lower bound.
    """
    if params.mode != "texture":
        raise ValueError("match_loss_time compares texture-mode generators")
    params.set_training(False)
    extent = (prototype.shape[2], prototype.shape[3])
    with no_grad():
        targets = gram_targets(net, prototype, loss_spec)
        z = sample_noise(extent, params.scales, batch=samples, seed=seed,
                         noise_channels=params.noise_channels)
        generator_forward(params, z)  # warmup: first call pays allocator costs
        t0 = time.perf_counter()
        batch = generator_forward(params, z)
        feedforward_ms = (time.perf_counter() - t0) * 1e3 / samples
        single = sample_noise(extent, params.scales, seed=seed,
                              noise_channels=params.noise_channels)
        t0 = time.perf_counter()
        generator_forward(params, single)
        latency_ms = (time.perf_counter() - t0) * 1e3
        losses = [
            texture_loss(Tensor(batch.data[i : i + 1]), targets, net, loss_spec).item()
            for i in range(samples)
        ]
    target = float(np.mean(losses))

    run_cfg = PreimageConfig(
        max_iters=cfg.max_iters, lr=cfg.lr, init_sigma=cfg.init_sigma,
        init_mean=cfg.init_mean, target_loss=target, seed=cfg.seed,
    )
    _, trace = synthesize_iterative(prototype, net, loss_spec, run_cfg)
    matched = trace[-1].loss <= target
    iterative_ms = trace[-1].millis
    return {
        "feedforward_millis": feedforward_ms,
        "feedforward_latency_millis": latency_ms,
        "feedforward_loss_mean": target,
        "samples": samples,
        "iterative_millis_to_match": iterative_ms,
        "iterative_iterations": trace[-1].iteration,
        "iterative_final_loss": trace[-1].loss,
        "matched": matched,
        "ratio": iterative_ms / feedforward_ms if feedforward_ms > 0 else float("inf"),
        "ratio_is_lower_bound": not matched,
    }


def write_benchmark_report(report, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
