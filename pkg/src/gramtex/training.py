"""Stochastic training of generator parameters against the statistics losses.

Each iteration draws a fresh mini-batch of noise stacks (and, in style mode,
content images from a small fixed pool), runs generator and descriptor
forward, backpropagates the loss into the generator parameters only, and
applies one Adam step under the step-decay learning-rate schedule (lr0 until
the drop point, then a 0.7 factor there and again every 200 iterations).

Gram targets of the prototype are computed once up front; in style mode the
content-feature targets of every pool image are also precomputed, since the
pool is tiny.  The loss trace is returned row by row and can be written as
``iteration,lr,texture_loss,content_loss,diversity`` CSV.

Sample diversity (mean RMS distance between batch samples) is logged
periodically as an overfitting diagnostic: a collapsing generator can keep
lowering the texture loss while emitting near-identical samples, and there is
no validation set to catch it, so a warning fires when diversity falls below
20% of its level at the baseline iteration.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .descriptor import (
    content_features,
    content_loss_from_features,
    descriptor_forward,
    gram_targets,
    texture_loss_from_features,
)
from .errors import NumericError, ShapeError
from .generator import generator_forward, sample_noise
from .tensor import Tensor, no_grad, zero_grad


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch: int = 16
    lr0: float = 0.1
    lr_drop_at: int = 1000
    lr_drop_every: int = 200
    lr_factor: float = 0.7
    noise_magnitude: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0
    checkpoint_path: str | None = None
    loss_log_path: str | None = None
    diversity_every: int = 100

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be > 0")


@dataclass
class TraceRow:
    iteration: int
    lr: float
    texture_loss: float
    content_loss: float | None = None
    diversity: float | None = None


def write_trace_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "lr", "texture_loss", "content_loss", "diversity"])
        for row in rows:
            writer.writerow(
                [
                    row.iteration,
                    f"{row.lr:.10g}",
                    f"{row.texture_loss:.10g}",
                    "" if row.content_loss is None else f"{row.content_loss:.10g}",
                    "" if row.diversity is None else f"{row.diversity:.10g}",
                ]
            )


class AdamState:
    """First/second moment slots plus the shared step counter."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update: theta -= lr * mhat / (sqrt(vhat) + eps)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_step: params, grads, and state lengths disagree")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad shaped {g.shape} for param {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def lr_at(iteration, lr0=0.1, drop_at=1000, drop_every=200, factor=0.7):
    """Step-decay schedule: lr0 before ``drop_at``, then factor^(1+k) steps."""
    if iteration < drop_at:
        return lr0
    return lr0 * factor ** (1 + (iteration - drop_at) // drop_every)


def train_texture(prototype, params, net, loss_spec, cfg):
    """Fit ``params`` so samples match the prototype's Gram statistics.

    Returns (params, trace).  The prototype targets are computed once; the
    descriptor stays frozen throughout.
    """
    _check_extent(prototype, params)
    targets = gram_targets(net, prototype, loss_spec)
    extent = (prototype.shape[2], prototype.shape[3])
    return _run(params, net, loss_spec, cfg, targets, pool=None, extent=extent)


def train_style(prototype, content_pool, params, net, loss_spec, cfg):
    """Fit a style-mode generator to combine prototype texture with pool content.

    ``content_pool`` is a small list of same-extent images; each iteration
    samples batch items from it with replacement.  Texture and content loss
    components are logged separately.
    """
    if params.mode != "style":
        raise ShapeError("train_style needs a style-mode generator")
    if not content_pool:
        raise ValueError("content pool is empty")
    if len(content_pool) > 16:
        warnings.warn(
            f"content pool of {len(content_pool)} images: local conv statistics "
            "match a fixed texture better from a small pool (~16); quality can "
            "degrade with more",
            stacklevel=2,
        )
    shapes = {tuple(y.shape) for y in content_pool}
    if len(shapes) != 1:
        raise ShapeError(f"content pool extents differ: {sorted(shapes)}")
    _check_extent(content_pool[0], params)
    targets = gram_targets(net, prototype, loss_spec)
    extent = (content_pool[0].shape[2], content_pool[0].shape[3])
    return _run(params, net, loss_spec, cfg, targets, pool=list(content_pool), extent=extent)


def _check_extent(image, params):
    step = 2 ** (params.scales - 1)
    H, W = image.shape[2], image.shape[3]
    if H % step or W % step:
        raise ShapeError(f"extent ({H},{W}) not divisible by 2^{params.scales - 1}")


def _run(params, net, loss_spec, cfg, targets, pool, extent):
    theta = params.parameters()
    opt = AdamState(theta)
    rng = np.random.default_rng(cfg.seed)
    alpha = loss_spec.alpha
    pool_feats = None
    if pool is not None:
        pool_feats = [content_features(net, y, loss_spec) for y in pool]
        pool_data = [y.data if isinstance(y, Tensor) else np.asarray(y) for y in pool]

    trace = []
    baseline_diversity = None
    params.set_training(True)
    for it in range(cfg.iterations):
        lr = lr_at(it, cfg.lr0, cfg.lr_drop_at, cfg.lr_drop_every, cfg.lr_factor)
        z = sample_noise(
            extent,
            params.scales,
            batch=cfg.batch,
            magnitude=cfg.noise_magnitude,
            seed=rng,
            noise_channels=params.noise_channels,
        )
        content_value = None
        if pool is None:
            x = generator_forward(params, z)
            feats = descriptor_forward(net, x)
            loss = texture_loss_from_features(feats, targets, loss_spec)
            texture_value = loss.item()
        else:
            picks = rng.integers(0, len(pool_data), size=cfg.batch)
            y = Tensor(np.concatenate([pool_data[i] for i in picks], axis=0))
            x = generator_forward(params, z, y=y)
            feats = descriptor_forward(net, x)
            tex = texture_loss_from_features(feats, targets, loss_spec)
            texture_value = tex.item()
            if loss_spec.content_layers:
                batched = {
                    l: np.concatenate([pool_feats[i][l] for i in picks], axis=0)
                    for l in loss_spec.content_layers
                }
                con = content_loss_from_features(feats, batched, loss_spec)
                content_value = con.item()
                loss = tex + con.scale(alpha)
            else:
                loss = tex
        if not np.isfinite(loss.item()):
            raise NumericError(f"loss diverged at iteration {it}: {loss.item()}")
        zero_grad(theta)
        loss.backward()
        adam_step(theta, [p.grad for p in theta], opt, lr)

        diversity = None
        if cfg.batch >= 2 and cfg.diversity_every and (it + 1) % cfg.diversity_every == 0:
            diversity = _batch_diversity(x.data)
            if baseline_diversity is None:
                baseline_diversity = diversity
            elif diversity < 0.2 * baseline_diversity:
                warnings.warn(
                    f"sample diversity {diversity:.3g} fell below 20% of its "
                    f"baseline {baseline_diversity:.3g} at iteration {it}: the "
                    "generator may be collapsing; consider more noise",
                    stacklevel=2,
                )
        trace.append(TraceRow(it, lr, texture_value, content_value, diversity))

        if cfg.checkpoint_every and cfg.checkpoint_path and (it + 1) % cfg.checkpoint_every == 0:
            from .generator import save_params

            save_params(params, cfg.checkpoint_path)

    params.set_training(False)
    if cfg.loss_log_path:
        write_trace_csv(trace, cfg.loss_log_path)
    return params, trace


def _batch_diversity(batch):
    n = batch.shape[0]
    total = 0.0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            total += float(np.sqrt(((batch[i] - batch[j]) ** 2).mean()))
            pairs += 1
    return total / pairs if pairs else 0.0


def diversity_metric(params, n_samples, seed, extent, magnitude=1.0, y=None):
    """Mean pairwise RMS distance between ``n_samples`` eval-mode samples."""
    if n_samples < 2:
        raise ValueError("diversity needs at least 2 samples")
    params.set_training(False)
    with no_grad():
        z = sample_noise(extent, params.scales, batch=n_samples, seed=seed,
                         magnitude=magnitude, noise_channels=params.noise_channels)
        if y is not None and y.shape[0] == 1:
            y = Tensor(np.repeat(y.data, n_samples, axis=0))
        out = generator_forward(params, z, y=y)
    return _batch_diversity(out.data)
