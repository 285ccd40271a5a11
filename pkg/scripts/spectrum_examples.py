"""Spectra of the canonical example families, with timings."""
import argparse
import time

from dichotomia import make_example
from dichotomia.spectrum import dichotomy_spectrum

EXAMPLES = {
    "constant diag(0.5, 3)": ("constant", {"diag": [0.5, 3.0]}, 200),
    "period-2": ("periodic", {"matrices": [[[0.4, 0], [0, 2.0]], [[0.9, 0], [0, 4.5]]]}, 200),
    "nonuniform lam=0.7 eps=0.1": ("nonuniform-scalar", {"lam": 0.7, "eps": 0.1}, 400),
    "random base (0.5, 3)": ("random", {"base": [0.5, 3.0], "noise": 0.05, "seed": 1}, 200),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    for name, (kind, params, window) in EXAMPLES.items():
        lin = make_example(kind, params).linear
        t0 = time.perf_counter()
        res = dichotomy_spectrum(lin, window=window, threads=args.threads)
        dt = time.perf_counter() - t0
        ivs = "  ".join(f"[{iv.a:.5f}, {iv.b:.5f}] (dim {iv.bundle_dim})" for iv in res.intervals)
        print(f"{name:28s} {ivs}   {dt:.2f}s")


if __name__ == "__main__":
    main()
