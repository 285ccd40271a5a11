"""Extend a local conjugacy of F(x) = 2x + 0.1 tanh(x)^2 to the whole line."""
import argparse

import numpy as np

from dichotomia import make_example
from dichotomia.dichotomy import test_scaled_dichotomy
from dichotomia.linearize import ConjugacyEvaluator, extend_by_fundamental_domains


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--radius", type=float, default=0.5)
    ap.add_argument("--points", default="0.3,0.7,-0.7,2,-2,5,-5,20")
    args = ap.parse_args()
    s = make_example("constant", {"matrix": [[2.0]], "eta": 0.1})
    cert = test_scaled_dichotomy(s, 1.0, window=70, horizon=40)
    ev = ConjugacyEvaluator(s, cert)

    def psi(x):
        return ev.forward(0, np.atleast_1d(x))

    def finv(y):
        return s.inverse_step(0, y)

    print("x,j,psi(x),residual")
    for x in map(float, args.points.split(",")):
        val, j = extend_by_fundamental_domains(psi, finv, [[2.0]], x, args.radius)
        img, _ = extend_by_fundamental_domains(psi, finv, [[2.0]], s.step(0, np.array([x])),
                                               args.radius)
        print(f"{x},{j},{val[0]:.10g},{abs(img[0] - 2 * val[0]):.2e}")


if __name__ == "__main__":
    main()
