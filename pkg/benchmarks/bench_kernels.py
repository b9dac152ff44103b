"""Benchmark the numba kernels against the pure-numpy fallbacks on shapes
representative of training (batch 16, sequence ~128, width 64) and report
which side wins per kernel. The package's ``auto`` backend routing encodes
the outcome of exactly this comparison: without SVML, numpy's SIMD
transcendentals beat numba's scalar exp/tanh loops, while numba wins the
fused reduction-style kernels.

Run:  python3 benchmarks/bench_kernels.py [--repeats 30]
"""

import argparse
import time

import numpy as np

from dstlab import kernels as K

B, T, D, H, V, S = 16, 128, 64, 4, 256, 12


def make_inputs(dtype=np.float32):
    rng = np.random.default_rng(0)
    return {
        "scores": rng.standard_normal((B * H * T, T)).astype(dtype),
        "hidden": rng.standard_normal((B * T, D)).astype(dtype),
        "ff": rng.standard_normal((B * T, 4 * D)).astype(dtype),
        "gamma": np.ones(D, dtype=dtype),
        "beta": np.zeros(D, dtype=dtype),
        "logits": rng.standard_normal((B * 24, V)).astype(dtype),
        "targets": rng.integers(0, V, size=B * 24),
        "weights": np.full(B * 24, 1.0 / (B * 24)),
        "slot_logits": rng.standard_normal((B, S)).astype(dtype),
        "labels": (rng.random((B, S)) < 0.4).astype(dtype),
        "slot_weights": np.full(B, 1.0 / (B * S)),
        "param": rng.standard_normal(200_000),
        "grad": rng.standard_normal(200_000),
        "ids": rng.integers(0, V, size=B * T),
        "emb_grad": rng.standard_normal((B * T, D)).astype(dtype),
    }


def benchmarks(x):
    sm = None

    def softmax():
        nonlocal sm
        sm = K.softmax_last(x["scores"])

    cases = {
        "softmax": softmax,
        "softmax_backward": lambda: K.softmax_last_backward(x["scores"], sm),
        "layernorm_forward": lambda: K.layernorm_forward(x["hidden"], x["gamma"], x["beta"], 1e-5),
        "gelu_forward": lambda: K.gelu_forward(x["ff"]),
        "gelu_backward": lambda: K.gelu_backward(x["ff"], x["ff"]),
        "cross_entropy_forward": lambda: K.cross_entropy_forward(x["logits"], x["targets"], x["weights"]),
        "bce_forward": lambda: K.bce_forward(x["slot_logits"], x["labels"], x["slot_weights"]),
        "adamw_step": lambda: K.adamw_step(x["param"], x["grad"], np.zeros_like(x["param"]),
                                           np.zeros_like(x["param"]), 1, 1e-3, 0.9, 0.999, 1e-8, 0.01),
        "embedding_grad": lambda: K.embedding_grad(x["ids"], x["emb_grad"],
                                                   np.zeros((V, D), dtype=x["emb_grad"].dtype)),
    }
    mean, rstd = K.layernorm_forward(x["hidden"], x["gamma"], x["beta"], 1e-5)[1:]
    cases["layernorm_backward"] = lambda: K.layernorm_backward(
        x["hidden"], x["hidden"], x["gamma"], mean, rstd)
    return cases


def time_case(fn, repeats):
    fn()  # warm / compile
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()
    x = make_inputs()
    results = {}
    for backend in ("numpy", "numba"):
        effective = K.set_backend(backend)
        if effective != backend:
            print(f"backend {backend!r} unavailable (got {effective!r}); skipping")
            continue
        for name, fn in benchmarks(x).items():
            results.setdefault(name, {})[backend] = time_case(fn, args.repeats)
    K.set_backend("auto")
    print(f"\nshapes: scores {B*H*T}x{T}, hidden {B*T}x{D}, ff {B*T}x{4*D}, "
          f"logits {B*24}x{V}, params {len(x['param'])}")
    print(f"{'kernel':<22} {'numpy ms':>10} {'numba ms':>10} {'numba/numpy':>12}  winner")
    print("-" * 64)
    for name, times in results.items():
        np_ms = times.get("numpy", float("nan")) * 1e3
        nb_ms = times.get("numba", float("nan")) * 1e3
        ratio = nb_ms / np_ms if np_ms else float("nan")
        winner = "numba" if nb_ms < np_ms else "numpy"
        print(f"{name:<22} {np_ms:>10.3f} {nb_ms:>10.3f} {ratio:>12.2f}  {winner}")
    print("\nauto mode keeps numba for:", ", ".join(K._NUMBA_PREFERRED))


if __name__ == "__main__":
    main()
