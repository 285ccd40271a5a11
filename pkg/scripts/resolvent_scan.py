"""Smallest singular value of the truncated ``a Id - A`` against the window size.

Inside the resolvent the margin settles; at a spectral point it decays like
``1/N``.  Prints one row per ``(boundary, a, N)``.
"""
import argparse

import numpy as np

from dichotomia import LinearSystem
from dichotomia.sequence_space import build_truncated, invertibility_margin


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scales", default="1,3")
    ap.add_argument("--sizes", default="25,50,100,200,400")
    ap.add_argument("--boundaries", default="free,zero,periodic")
    args = ap.parse_args()
    lin = LinearSystem.constant(np.diag([0.5, 3.0]))
    print("boundary,a,N,sigma_min,N_times_sigma")
    for b in args.boundaries.split(","):
        for a in map(float, args.scales.split(",")):
            for N in map(int, args.sizes.split(",")):
                s = invertibility_margin(build_truncated(lin, N, a, b))
                print(f"{b},{a},{N},{s:.6g},{N * s:.4g}")


if __name__ == "__main__":
    main()
