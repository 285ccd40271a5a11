"""Conjugacy residuals and a stable-foliation trace for diag(0.5, 3) with a tanh^2 term."""
import argparse
import math
from pathlib import Path

import numpy as np

from dichotomia import make_example
from dichotomia.dichotomy import test_scaled_dichotomy
from dichotomia.linearize import (
    ConjugacyEvaluator,
    ConjugacyOptions,
    solve_foliation_point,
    verify_conjugacy,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eta", type=float, default=0.05)
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--horizon", type=int, default=60)
    ap.add_argument("--out", default="out/conjugacy")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    s = make_example("constant", {"diag": [0.5, 3.0], "eta": args.eta, "nl_epsilon": args.eps})
    cert = test_scaled_dichotomy(s, 1.0, window=args.horizon + 7, horizon=40)
    ev = ConjugacyEvaluator(s, cert, ConjugacyOptions(horizon=args.horizon))
    g = np.linspace(-1, 1, 21)
    grid = np.array(np.meshgrid(g, g)).reshape(2, -1).T
    rep = verify_conjugacy(s, cert, range(-5, 6), grid, evaluator=ev)
    (out / "residuals.json").write_text(rep.to_json() + "\n")
    (out / "residuals.csv").write_text(rep.to_csv())
    print(f"max residual {rep.max_residual:.3e}, contraction factor {rep.contraction_factor:.3f}")

    fol = solve_foliation_point(s, cert, [0.3, 0.2], [0.1, 0.0], math.sqrt(0.5), math.sqrt(3.0))
    (out / "foliation_trace.csv").write_text(fol.trace_csv())
    print(f"foliation: {fol.iterations} sweeps, residual {fol.residual:.2e}, "
          f"update ratio {fol.contraction_ratio:.3g}")


if __name__ == "__main__":
    main()
