"""Compiled kernels vs the numpy fallback.

Times each hot kernel on network-sized shapes with both backends, then one
full training step per backend (the numpy one in a subprocess started with
PCGSCREEN_PURE=1, so the whole engine runs without the extension).

    python3 benchmarks/bench_kernels.py [--repeat 5] [--dtype float32]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from pcgscreen.autodiff import _fallback, kernels

# (batch, in channels, length, out channels, kernel) seen in the default and desk networks
CONV_SHAPES = [
    (16, 32, 12000, 32, 40),
    (16, 128, 12000, 32, 1),
    (16, 8, 4000, 8, 21),
    (16, 32, 4000, 8, 1),
]
POOL_SHAPES = [(16, 128, 12000), (16, 32, 4000)]


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_rows(dtype, repeat):
    try:
        from pcgscreen.autodiff import _kernels as compiled
    except ImportError:
        compiled = None
    rng = np.random.default_rng(0)
    rows = []
    for b, c, length, o, k in CONV_SHAPES:
        x = rng.standard_normal((b, c, length)).astype(dtype)
        w = rng.standard_normal((o, c, k)).astype(dtype)
        g = rng.standard_normal((b, o, length)).astype(dtype)
        label = f"B{b} C{c} L{length} O{o} K{k}"
        cases = {
            "conv forward": lambda impl: kernels.conv1d_forward(x, w, impl),
            "conv grad input": lambda impl: kernels.conv1d_grad_input(g, w, impl),
            "conv grad weight": lambda impl: kernels.conv1d_grad_weight(x, g, k, impl),
        }
        for name, fn in cases.items():
            rows.append(_row(name, label, fn, compiled, repeat))
    for b, c, length in POOL_SHAPES:
        x = rng.standard_normal((b, c, length)).astype(dtype)
        _, idx = kernels.maxpool1d_forward(x, 3, _fallback)
        label = f"B{b} C{c} L{length} W3"
        rows.append(_row("maxpool forward", label, lambda impl: kernels.maxpool1d_forward(x, 3, impl), compiled, repeat))
        rows.append(_row("maxpool backward", label, lambda impl: kernels.maxpool1d_backward(x, idx, impl), compiled, repeat))
    return rows


def _row(name, label, fn, compiled, repeat):
    numpy_s = best_of(lambda: fn(_fallback), repeat)
    compiled_s = best_of(lambda: fn(compiled), repeat) if compiled else float("nan")
    return name, label, numpy_s, compiled_s


def train_step_seconds(repeat):
    """One Adam step of the desk network on a batch of 16 five-second inputs."""
    from pcgscreen.model import InceptionModuleConfig, NetworkConfig, build_network
    from pcgscreen.train import AdamState, train_step

    cfg = NetworkConfig(depth=3, module=InceptionModuleConfig(8, (5, 11, 21), 8), input_length=4000)
    model = build_network(cfg, seed=0)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 1, 4000)).astype(np.float32)
    y = rng.integers(0, 2, 16)
    adam = AdamState.like([p.data for p in model.parameters()])
    w = np.ones(2)
    return best_of(lambda: train_step(model, x, y, w, adam, 1e-3), repeat)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    parser.add_argument("--train-step-only", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    if args.train_step_only:
        print(json.dumps({"backend": kernels.BACKEND, "seconds": train_step_seconds(args.repeat)}))
        return

    print(f"active backend: {kernels.BACKEND}, dtype {args.dtype}, best of {args.repeat}\n")
    print(f"{'kernel':<18}{'shape':<30}{'numpy ms':>10}{'compiled ms':>13}{'speedup':>9}")
    for name, label, numpy_s, compiled_s in kernel_rows(np.dtype(args.dtype), args.repeat):
        print(f"{name:<18}{label:<30}{numpy_s * 1e3:>10.1f}{compiled_s * 1e3:>13.1f}{numpy_s / compiled_s:>8.1f}x")

    print("\nfull train step, desk network, batch 16 x 4000 samples")
    results = {}
    for pure in (False, True):
        env = dict(os.environ)
        env.pop("PCGSCREEN_PURE", None)
        if pure:
            env["PCGSCREEN_PURE"] = "1"
        out = subprocess.run([sys.executable, __file__, "--train-step-only", "--repeat", str(args.repeat)],
                             env=env, capture_output=True, text=True, check=True)
        res = json.loads(out.stdout)
        results[res["backend"]] = res["seconds"]
        print(f"  {res['backend']:<9}{res['seconds'] * 1e3:>9.1f} ms")
    if len(results) == 2:
        print(f"  speedup  {results['numpy'] / results['compiled']:>8.1f}x")


if __name__ == "__main__":
    main()
