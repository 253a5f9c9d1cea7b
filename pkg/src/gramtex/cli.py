"""Command-line surface.

Subcommands: train-texture, train-style, sample, stylize, ablate, benchmark,
iterative.  Every command takes ``--config FILE`` plus flag overrides, is
deterministic for a fixed ``--seed``, and never mutates its inputs.  Exit
codes: 0 ok, 2 configuration error, 3 numeric failure.

The TXN_THREADS environment variable (and ``--deterministic``, which forces
one thread) caps the BLAS worker count; both are applied before numpy loads,
so heavy imports happen inside the command bodies on purpose.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import GramtexError, NumericError


def _cap_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _apply_thread_env(deterministic):
    cap = os.environ.get("TXN_THREADS")
    if deterministic:
        _cap_threads(1)
    elif cap:
        try:
            _cap_threads(max(1, int(cap)))
        except ValueError:
            raise GramtexError(f"TXN_THREADS must be an integer, got {cap!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="gramtex", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--seed", type=int, help="rng seed")
        p.add_argument("--out", help="output path")
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded, bytewise-reproducible mode")
        return p

    p = add("train-texture", "train a texture generator on one prototype image")
    p.add_argument("--prototype", help="prototype PPM")
    p.add_argument("--iters", type=int, help="training iterations")
    p.add_argument("--batch", type=int, help="mini-batch size")

    p = add("train-style", "train a stylizing generator on a prototype + content pool")
    p.add_argument("--prototype", help="style prototype PPM")
    p.add_argument("--iters", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--alpha", type=float, help="content loss weight")

    p = add("sample", "draw a texture sample from trained params")
    p.add_argument("--params", help="trained generator file")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--noise-scale", type=float, dest="noise_scale")

    p = add("stylize", "apply a trained stylizer to a content image")
    p.add_argument("--params")
    p.add_argument("--content", help="content PPM")
    p.add_argument("--noise-scale", type=float, dest="noise_scale")

    p = add("ablate", "sample with all noise scales zeroed except one")
    p.add_argument("--params")
    p.add_argument("--keep", type=int, help="scale to keep, 1 = coarsest")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)

    p = add("benchmark", "feed-forward vs iterative time-to-loss report")
    p.add_argument("--params")
    p.add_argument("--prototype")
    p.add_argument("--iters", type=int, help="iterative budget")

    p = add("iterative", "pre-image synthesis by pixel optimization")
    p.add_argument("--prototype")
    p.add_argument("--content", help="optional content PPM (stylization)")
    p.add_argument("--iters", type=int)
    p.add_argument("--alpha", type=float)

    return parser


# Per-command config schemas: key -> (kind, default, required).
_DESCRIPTOR_KEYS = {
    "descriptor": ("str", "tiny", False),
    "descriptor_weights": ("path_in", None, False),
    "descriptor_seed": ("int", 0, False),
    "texture_layers": ("str_list", None, False),
    "content_layers": ("str_list", None, False),
}
_COMMON = {
    "seed": ("int", 0, False),
    "deterministic": ("bool", False, False),
}


def _schemas():
    from .config import Schema

    train_common = {
        **_COMMON,
        **_DESCRIPTOR_KEYS,
        "out": ("path_out", None, True),
        "trace": ("path_out", None, False),
        "iterations": ("int", None, True),
        "batch": ("int", 16, False),
        "lr0": ("float", 0.1, False),
        "lr_drop_at": ("int", 1000, False),
        "lr_drop_every": ("int", 200, False),
        "lr_factor": ("float", 0.7, False),
        "noise_magnitude": ("float", 1.0, False),
        "schedule": ("int_list", None, False),
        "checkpoint_every": ("int", 0, False),
        "checkpoint": ("path_out", None, False),
    }
    return {
        "train-texture": Schema({
            **train_common,
            "prototype": ("path_in", None, True),
            "scales": ("int", 5, False),
        }),
        "train-style": Schema({
            **train_common,
            "prototype": ("path_in", None, True),
            "scales": ("int", 6, False),
            "alpha": ("float", None, True),
            "content_pool": ("path_in_list", None, True),
        }),
        "sample": Schema({
            **_COMMON,
            "params": ("path_in", None, True),
            "out": ("path_out", None, True),
            "width": ("int", 64, False),
            "height": ("int", 64, False),
            "noise_scale": ("float", 1.0, False),
        }),
        "stylize": Schema({
            **_COMMON,
            "params": ("path_in", None, True),
            "content": ("path_in", None, True),
            "out": ("path_out", None, True),
            "noise_scale": ("float", 1.0, False),
        }),
        "ablate": Schema({
            **_COMMON,
            "params": ("path_in", None, True),
            "out": ("path_out", None, True),
            "keep": ("int", None, True),
            "width": ("int", 64, False),
            "height": ("int", 64, False),
            "noise_scale": ("float", 1.0, False),
            "content": ("path_in", None, False),
        }),
        "benchmark": Schema({
            **_COMMON,
            **_DESCRIPTOR_KEYS,
            "params": ("path_in", None, True),
            "prototype": ("path_in", None, True),
            "out": ("path_out", None, True),
            "iterations": ("int", 500, False),
            "lr": ("float", 0.05, False),
            "samples": ("int", 8, False),
        }),
        "iterative": Schema({
            **_COMMON,
            **_DESCRIPTOR_KEYS,
            "prototype": ("path_in", None, True),
            "out": ("path_out", None, True),
            "trace": ("path_out", None, False),
            "content": ("path_in", None, False),
            "alpha": ("float", 0.0, False),
            "iterations": ("int", 500, False),
            "lr": ("float", 0.05, False),
            "init_sigma": ("float", 0.25, False),
            "target_loss": ("float", None, False),
        }),
    }


_OVERRIDE_NAMES = {
    "iters": "iterations",
}


def _resolve(args):
    from .config import parse_config_file

    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {}
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None or value is False:
            continue
        overrides[_OVERRIDE_NAMES.get(key, key)] = value
    return _schemas()[args.command].resolve(file_values, overrides)


def _build_descriptor(cfg):
    from .descriptor import (
        build_descriptor,
        load_weights,
        parse_descriptor_config,
        tiny_descriptor,
    )
    from .errors import ConfigError

    name = cfg["descriptor"]
    if name == "tiny":
        if cfg.get("descriptor_weights"):
            raise ConfigError("descriptor_weights requires an explicit descriptor config")
        return tiny_descriptor(seed=cfg["descriptor_seed"])
    if not os.path.isfile(name):
        raise ConfigError(f"descriptor config {name!r} does not exist")
    with open(name, "r", encoding="utf-8") as fh:
        parsed = parse_descriptor_config(fh.read())
    if cfg.get("descriptor_weights"):
        return load_weights(cfg["descriptor_weights"], config=parsed)
    return build_descriptor(parsed, seed=cfg["descriptor_seed"])


def _loss_spec(cfg, net, alpha=0.0):
    from .descriptor import LossSpec
    from .errors import ConfigError

    texture = cfg.get("texture_layers") or net.taps
    weighted = {}
    for entry in texture:
        name, _, weight = entry.partition(":")
        if name not in net.taps:
            raise ConfigError(f"texture layer {name!r} is not a descriptor tap {net.taps}")
        weighted[name] = float(weight) if weight else 1.0
    content = cfg.get("content_layers")
    if content is None:
        content = (net.taps[-1],)
    for name in content:
        if name not in net.taps:
            raise ConfigError(f"content layer {name!r} is not a descriptor tap {net.taps}")
    return LossSpec(weighted, content_layers=content, alpha=alpha)


def cmd_train_texture(cfg):
    from .config import check_extent_divisible
    from .generator import count_params, init_params, save_params
    from .image_io import load_image_tensor
    from .training import TrainConfig, train_texture

    x0 = load_image_tensor(cfg["prototype"])
    check_extent_divisible(x0.shape[3], x0.shape[2], cfg["scales"])
    net = _build_descriptor(cfg)
    spec = _loss_spec(cfg, net)
    params = init_params(mode="texture", scales=cfg["scales"], schedule=cfg["schedule"], seed=cfg["seed"])
    tc = TrainConfig(
        iterations=cfg["iterations"], batch=cfg["batch"], lr0=cfg["lr0"],
        lr_drop_at=cfg["lr_drop_at"], lr_drop_every=cfg["lr_drop_every"],
        lr_factor=cfg["lr_factor"], noise_magnitude=cfg["noise_magnitude"],
        seed=cfg["seed"], checkpoint_every=cfg["checkpoint_every"],
        checkpoint_path=cfg["checkpoint"], loss_log_path=cfg["trace"],
    )
    params, trace = train_texture(x0, params, net, spec, tc)
    save_params(params, cfg["out"])
    first = trace[0].texture_loss if trace else float("nan")
    last = trace[-1].texture_loss if trace else float("nan")
    print(f"trained {count_params(params)} params: loss {first:.4g} -> {last:.4g}; wrote {cfg['out']}")
    return 0


def cmd_train_style(cfg):
    from .config import check_extent_divisible
    from .generator import init_params, save_params
    from .image_io import load_image_tensor
    from .training import TrainConfig, train_style

    x0 = load_image_tensor(cfg["prototype"])
    pool = [load_image_tensor(p) for p in cfg["content_pool"]]
    check_extent_divisible(pool[0].shape[3], pool[0].shape[2], cfg["scales"])
    net = _build_descriptor(cfg)
    spec = _loss_spec(cfg, net, alpha=cfg["alpha"])
    params = init_params(mode="style", scales=cfg["scales"], schedule=cfg["schedule"], seed=cfg["seed"])
    tc = TrainConfig(
        iterations=cfg["iterations"], batch=cfg["batch"], lr0=cfg["lr0"],
        lr_drop_at=cfg["lr_drop_at"], lr_drop_every=cfg["lr_drop_every"],
        lr_factor=cfg["lr_factor"], noise_magnitude=cfg["noise_magnitude"],
        seed=cfg["seed"], checkpoint_every=cfg["checkpoint_every"],
        checkpoint_path=cfg["checkpoint"], loss_log_path=cfg["trace"],
    )
    params, trace = train_style(x0, pool, params, net, spec, tc)
    save_params(params, cfg["out"])
    last = trace[-1] if trace else None
    summary = f"texture {last.texture_loss:.4g}, content {last.content_loss:.4g}" if last else "no iterations"
    print(f"trained stylizer ({summary}); wrote {cfg['out']}")
    return 0


def cmd_sample(cfg):
    from .config import check_extent_divisible
    from .generator import generator_forward, load_params, sample_noise
    from .image_io import save_image_tensor
    from .tensor import no_grad

    params = load_params(cfg["params"], expect_mode="texture").set_training(False)
    check_extent_divisible(cfg["width"], cfg["height"], params.scales)
    with no_grad():
        z = sample_noise((cfg["height"], cfg["width"]), params.scales, magnitude=cfg["noise_scale"],
                         seed=cfg["seed"], noise_channels=params.noise_channels)
        out = generator_forward(params, z)
    save_image_tensor(out, cfg["out"])
    print(f"sampled {cfg['width']}x{cfg['height']} texture -> {cfg['out']}")
    return 0


def cmd_stylize(cfg):
    from .config import check_extent_divisible
    from .generator import generator_forward, load_params, sample_noise
    from .image_io import load_image_tensor, save_image_tensor
    from .tensor import no_grad

    params = load_params(cfg["params"], expect_mode="style").set_training(False)
    y = load_image_tensor(cfg["content"])
    check_extent_divisible(y.shape[3], y.shape[2], params.scales)
    with no_grad():
        z = sample_noise((y.shape[2], y.shape[3]), params.scales, magnitude=cfg["noise_scale"],
                         seed=cfg["seed"], noise_channels=params.noise_channels)
        out = generator_forward(params, z, y=y)
    save_image_tensor(out, cfg["out"])
    print(f"stylized {cfg['content']} -> {cfg['out']} (noise scale {cfg['noise_scale']})")
    return 0


def cmd_ablate(cfg):
    from .config import check_extent_divisible
    from .errors import ConfigError
    from .generator import ablate_scales, load_params, sample_noise
    from .image_io import load_image_tensor, save_image_tensor
    from .tensor import no_grad

    params = load_params(cfg["params"]).set_training(False)
    y = None
    if params.mode == "style":
        if not cfg.get("content"):
            raise ConfigError("style-mode params need a content image to ablate")
        y = load_image_tensor(cfg["content"])
        height, width = y.shape[2], y.shape[3]
    else:
        width, height = cfg["width"], cfg["height"]
    check_extent_divisible(width, height, params.scales)
    with no_grad():
        z = sample_noise((height, width), params.scales, magnitude=cfg["noise_scale"],
                         seed=cfg["seed"], noise_channels=params.noise_channels)
        out = ablate_scales(params, z, cfg["keep"], y=y)
    save_image_tensor(out, cfg["out"])
    print(f"kept scale {cfg['keep']}/{params.scales} -> {cfg['out']}")
    return 0


def cmd_benchmark(cfg):
    from .generator import load_params
    from .image_io import load_image_tensor
    from .preimage import PreimageConfig, match_loss_time, write_benchmark_report

    params = load_params(cfg["params"], expect_mode="texture")
    net = _build_descriptor(cfg)
    spec = _loss_spec(cfg, net)
    x0 = load_image_tensor(cfg["prototype"])
    run = PreimageConfig(max_iters=cfg["iterations"], lr=cfg["lr"], seed=cfg["seed"])
    report = match_loss_time(params, net, spec, x0, run, samples=cfg["samples"], seed=cfg["seed"])
    write_benchmark_report(report, cfg["out"])
    flag = "" if report["matched"] else " (lower bound)"
    print(
        f"feed-forward {report['feedforward_millis']:.2f} ms vs iterative "
        f"{report['iterative_millis_to_match']:.2f} ms: {report['ratio']:.1f}x{flag}; wrote {cfg['out']}"
    )
    return 0


def cmd_iterative(cfg):
    from .image_io import load_image_tensor, save_image_tensor
    from .preimage import PreimageConfig, synthesize_iterative, write_preimage_csv

    net = _build_descriptor(cfg)
    alpha = cfg["alpha"] if cfg.get("content") else 0.0
    spec = _loss_spec(cfg, net, alpha=alpha)
    x0 = load_image_tensor(cfg["prototype"])
    content = load_image_tensor(cfg["content"]) if cfg.get("content") else None
    run = PreimageConfig(
        max_iters=cfg["iterations"], lr=cfg["lr"], init_sigma=cfg["init_sigma"],
        target_loss=cfg["target_loss"], seed=cfg["seed"],
    )
    best, trace = synthesize_iterative(x0, net, spec, run, content=content)
    save_image_tensor(best, cfg["out"])
    if cfg.get("trace"):
        write_preimage_csv(trace, cfg["trace"])
    print(f"iterative loss {trace[0].loss:.4g} -> {min(r.loss for r in trace):.4g} "
          f"in {trace[-1].iteration} iterations; wrote {cfg['out']}")
    return 0


_COMMANDS = {
    "train-texture": cmd_train_texture,
    "train-style": cmd_train_style,
    "sample": cmd_sample,
    "stylize": cmd_stylize,
    "ablate": cmd_ablate,
    "benchmark": cmd_benchmark,
    "iterative": cmd_iterative,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        # Config resolution touches no numpy code, so thread caps set from the
        # merged settings still land before the heavy imports in the commands.
        cfg = _resolve(args)
        _apply_thread_env(cfg.get("deterministic", False))
        return _COMMANDS[args.command](cfg)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except GramtexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
