"""Write the Gauss-decomposition coefficients f+, f3, f- and the propagator
entries along a pulse for a few momenta, plus the Riccati residual summary.

    python scripts/dump_riccati.py --out riccati.csv --p -1 0 0.7 --t 1.1
"""

import argparse

import numpy as np

from dopplerfisher.model import K0, build_params
from dopplerfisher.propagators import integrate_trajectory, riccati_residual, write_trajectory_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="riccati.csv")
    ap.add_argument("--p", nargs="+", type=float, default=[-1.0, 0.0, 0.7])
    ap.add_argument("--t", type=float, default=1.1)
    ap.add_argument("--samples", type=int, default=4401)
    ap.add_argument("--omega", type=float, default=10.0)
    ap.add_argument("--delta0", type=float, default=1.5)
    ap.add_argument("--g", type=float, default=0.4)
    ap.add_argument("--chirp-rate", type=float, default=None, help="default: matched, k0 g")
    args = ap.parse_args()
    rate = K0 * args.g if args.chirp_rate is None else args.chirp_rate
    p = build_params(dict(omega_rabi=args.omega, delta0=args.delta0, phi=0.0, g=args.g, chirp_rate=rate,
                          sigma_p=1.0, omega_trap=1.0, t=args.t))
    traj = integrate_trajectory(p, None, args.p, np.linspace(0.0, args.t, args.samples), rtol=1e-12)
    write_trajectory_csv(traj, args.out)
    _, res, rhs = riccati_residual(traj)
    ok = np.isfinite(res)
    rel = np.abs(res[ok]) / (1.0 + np.abs(rhs[ok]))
    print(f"wrote {args.out}; Riccati residual max {rel.max():.2e} over {ok.mean():.0%} non-singular samples")


if __name__ == "__main__":
    main()
