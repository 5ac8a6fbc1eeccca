"""Compiled vs pure-numpy kernels: per-kernel timings and one full training step.

    python benchmarks/bench_kernels.py [--repeat 20] [--dtype float32]
"""
import argparse
import time

import numpy as np

from ambikd import autograd as ag
from ambikd import kernels
from ambikd.encoder import EncoderConfig, build_model
from ambikd.nn import AdamW, ConstantLR


def timeit(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def kernel_cases(dtype):
    rng = np.random.default_rng(0)
    # shapes seen in the default model: attention scores and hidden states for batch 32
    scores = rng.standard_normal((32 * 4 * 25, 25)).astype(dtype)
    hidden = rng.standard_normal((32 * 25, 64)).astype(dtype)
    ffn = rng.standard_normal((32 * 25, 128)).astype(dtype)
    g, b = np.ones(64, dtype), np.zeros(64, dtype)

    def cases():
        y = kernels.softmax_rows(scores)
        ln = kernels.layernorm_rows(hidden, g, b, 1e-5)
        ge = kernels.gelu(ffn)
        return {
            "softmax": lambda: kernels.softmax_rows(scores),
            "softmax_backward": lambda: kernels.softmax_rows_backward(np.asarray(y), scores),
            "layernorm": lambda: kernels.layernorm_rows(hidden, g, b, 1e-5),
            "layernorm_backward": lambda: kernels.layernorm_rows_backward(
                hidden, np.asarray(ln[1]), np.asarray(ln[2]), g),
            "gelu": lambda: kernels.gelu(ffn),
            "gelu_backward": lambda: kernels.gelu_backward(ffn, np.asarray(ge[1]), ffn),
        }
    return cases


def train_step_case(dtype):
    model = build_model(EncoderConfig(dtype=dtype))
    model.params.only_trainable(model.main_network_groups())
    opt = AdamW(model.params, ConstantLR(1e-3), weight_decay=0.1)
    rng = np.random.default_rng(1)
    tok = rng.integers(0, 500, size=(32, 24))
    y = np.eye(3, dtype=dtype)[rng.integers(0, 3, 32)]
    L = model.config.num_layers

    def step():
        out = model.forward(tok, train=True, layers=[L])
        loss = ag.cross_entropy_logits(out[L], y)
        model.params.zero_grad()
        loss.backward()
        opt.step()
    return step


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled kernels not built; only the python backend is available")
    results = {}
    original = kernels.BACKEND
    try:
        for backend in backends:
            kernels.use_backend(backend)
            res = {name: timeit(fn, args.repeat) for name, fn in kernel_cases(args.dtype)().items()}
            res["train_step (6 layers, batch 32)"] = timeit(train_step_case(args.dtype), max(3, args.repeat // 4))
            results[backend] = res
    finally:
        kernels.use_backend(original)

    names = list(next(iter(results.values())))
    width = max(len(n) for n in names)
    head = f"{'kernel':<{width}}  " + "  ".join(f"{b:>12}" for b in results)
    if len(results) == 2:
        head += f"  {'speedup':>8}"
    print(f"dtype={args.dtype}, best of {args.repeat} (ms)")
    print(head)
    for n in names:
        row = f"{n:<{width}}  " + "  ".join(f"{results[b][n] * 1e3:12.3f}" for b in results)
        if len(results) == 2:
            row += f"  {results['python'][n] / results['compiled'][n]:7.2f}x"
        print(row)


if __name__ == "__main__":
    main()
