#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the NumPy reference.

Two views:

* per-kernel micro-benchmarks (both backends in-process via
  ``get_backend``), with a cross-backend max|delta| sanity column;
* end-to-end denoiser timings (forward-only and forward+backward), run
  in subprocesses so each backend is selected the same way users select
  it: through the AVAMO_KERNELS environment variable at import time.

Usage:
    python3 benchmarks/bench_kernels.py            # everything
    python3 benchmarks/bench_kernels.py --no-end-to-end
    python3 benchmarks/bench_kernels.py --repeats 500
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from avamo._kernels import available_backends, get_backend  # noqa: E402


def micro_cases(frames: int, hidden: int):
    """(name, args-builder) pairs covering every kernel, fwd and bwd."""
    rng = np.random.default_rng(0)
    scores = rng.standard_normal((4 * frames, frames))
    probs_dy = rng.standard_normal(scores.shape)
    x = rng.standard_normal((frames, hidden))
    dy = rng.standard_normal((frames, hidden))
    gain = rng.standard_normal(hidden)
    bias = rng.standard_normal(hidden)
    # The graph layer hands gelu flat, C-contiguous buffers.
    big = rng.standard_normal(frames * 4 * hidden)
    big_dy = rng.standard_normal(big.shape)
    w_dw = rng.standard_normal((5, hidden))
    b_dw = rng.standard_normal(hidden)
    w_gate = rng.standard_normal(3)

    def softmax_pair(mod):
        y = mod.softmax_fwd(scores)
        return y, mod.softmax_bwd(y, probs_dy)

    def layernorm_pair(mod):
        out, xhat, rstd = mod.layernorm_fwd(x, gain, bias, 1e-5)
        return out, mod.layernorm_bwd(xhat, rstd, gain, dy)

    def gelu_pair(mod):
        return mod.gelu_fwd(big), mod.gelu_bwd(big, big_dy)

    def dwconv_pair(mod):
        return mod.dwconv_fwd(x, w_dw, b_dw), mod.dwconv_bwd(x, w_dw, dy)

    def gateconv_pair(mod):
        return mod.gateconv_fwd(x, w_gate, 0.37), mod.gateconv_bwd(x, w_gate, dy)

    return [
        (f"softmax [{scores.shape[0]}x{scores.shape[1]}]", softmax_pair),
        (f"layernorm [{frames}x{hidden}]", layernorm_pair),
        (f"gelu [{frames * 4 * hidden} flat]", gelu_pair),
        (f"dwconv k=5 [{frames}x{hidden}]", dwconv_pair),
        (f"gateconv k=3 [{frames}x{hidden}]", gateconv_pair),
    ]


def flatten(result):
    """All arrays in a kernel-pair result, for cross-backend comparison."""
    out = []
    stack = [result]
    while stack:
        item = stack.pop()
        if isinstance(item, tuple):
            stack.extend(item)
        else:
            out.append(np.asarray(item, dtype=np.float64))
    return out


def time_call(fn, mod, repeats: int) -> float:
    for _ in range(5):
        fn(mod)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(mod)
    return (time.perf_counter() - t0) / repeats


def run_micro(frames: int, hidden: int, repeats: int) -> None:
    backends = available_backends()
    mods = {name: get_backend(name) for name in backends}
    print(f"per-kernel timings, fwd+bwd, mean of {repeats} calls "
          f"(backends: {', '.join(backends)})\n")
    header = f"{'kernel':<28}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10}{'max|delta|':>12}"
    print(header)
    for name, fn in micro_cases(frames, hidden):
        seconds = {b: time_call(fn, mods[b], repeats) for b in backends}
        row = f"{name:<28}" + "".join(
            f"{seconds[b] * 1e6:>10.1f}us" for b in backends)
        if len(backends) > 1:
            ref = flatten(fn(mods["numpy"]))
            other = flatten(fn(mods["cython"]))
            delta = max(float(np.max(np.abs(a - b)))
                        for a, b in zip(ref, other))
            row += (f"{seconds['numpy'] / seconds['cython']:>9.2f}x"
                    f"{delta:>12.2e}")
        print(row)


def end_to_end_child() -> None:
    """Runs inside a subprocess with AVAMO_KERNELS already set."""
    from avamo import autodiff as ad
    from avamo._kernels import BACKEND
    from avamo.conditioning import default_text_embedder, encode_instruction
    from avamo.core import TaskKind
    from avamo.denoiser import Denoiser, DenoiserConfig

    cfg = DenoiserConfig(
        d_mot=64, d_aud=16, d_txt=64, d_pose=6, d_hidden=128,
        n_blocks=4, n_heads=4, conv_kernel=5, gate_kernel=3, ffn_mult=2,
    )
    model = Denoiser.initialize(cfg, seed=0)
    embedder = default_text_embedder(cfg.d_txt, seed=0)
    rep = encode_instruction("Talk with happy emotion", TaskKind.EMOTION_TALK,
                             embedder, model.adapters())
    rng = np.random.default_rng(1)
    m_t = rng.standard_normal((100, cfg.d_mot))
    keyframe = rng.standard_normal((1, cfg.d_mot))

    for _ in range(3):
        model.predict(m_t, 500, rep, keyframe, TaskKind.EMOTION_TALK)
    n_fwd = 30
    t0 = time.perf_counter()
    for _ in range(n_fwd):
        model.predict(m_t, 500, rep, keyframe, TaskKind.EMOTION_TALK)
    fwd = (time.perf_counter() - t0) / n_fwd

    def loss():
        out = model.forward(m_t, 500, rep, keyframe, TaskKind.EMOTION_TALK)
        diff = out["m0_hat"] - ad.constant(m_t)
        return ad.tmean(diff * diff)

    for _ in range(2):
        loss().backward()
        for t in model.params.values():
            t.grad = None
    n_step = 10
    t0 = time.perf_counter()
    for _ in range(n_step):
        loss().backward()
        for t in model.params.values():
            t.grad = None
    bwd = (time.perf_counter() - t0) / n_step
    print(json.dumps({"backend": BACKEND, "forward_s": fwd,
                      "forward_backward_s": bwd}))


def run_end_to_end() -> None:
    print("\nend-to-end denoiser [100 frames x 64 dims, hidden 128, "
          "4 blocks], per call:\n")
    print(f"{'backend':<10}{'forward':>12}{'fwd+bwd':>12}")
    rows = {}
    for backend in available_backends():
        env = dict(os.environ, AVAMO_KERNELS=backend)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--child"],
            env=env, capture_output=True, text=True, check=True,
        )
        row = json.loads(out.stdout.strip().splitlines()[-1])
        if row["backend"] != backend:
            raise RuntimeError(
                f"asked for backend {backend!r}, got {row['backend']!r}")
        rows[backend] = row
        print(f"{backend:<10}{row['forward_s'] * 1e3:>10.2f}ms"
              f"{row['forward_backward_s'] * 1e3:>10.2f}ms")
    if {"numpy", "cython"} <= rows.keys():
        f = rows["numpy"]["forward_s"] / rows["cython"]["forward_s"]
        b = (rows["numpy"]["forward_backward_s"]
             / rows["cython"]["forward_backward_s"])
        print(f"\nspeedup cython vs numpy: forward {f:.2f}x, "
              f"forward+backward {b:.2f}x")


def main() -> None:
    parser = argparse.ArgumentParser(
        description="Benchmark compiled kernels against the NumPy reference.")
    parser.add_argument("--repeats", type=int, default=200,
                        help="calls per micro-benchmark timing (default 200)")
    parser.add_argument("--frames", type=int, default=100)
    parser.add_argument("--hidden", type=int, default=128)
    parser.add_argument("--no-end-to-end", action="store_true",
                        help="skip the subprocess end-to-end comparison")
    parser.add_argument("--child", action="store_true",
                        help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.child:
        end_to_end_child()
        return
    run_micro(args.frames, args.hidden, args.repeats)
    if not args.no_end_to_end:
        run_end_to_end()


if __name__ == "__main__":
    main()
