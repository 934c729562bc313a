"""Compare the closed-form cycle and timeout models with their Monte-Carlo oracles.

The cycle oracle is run twice: with the drop position inside the loss round
following from i.i.d. losses, and with it drawn uniformly (the assumption
behind the closed form).
"""

import argparse

from rcclab.analytic import (
    SeriesMode,
    ca_series,
    e_dss,
    e_xss,
    expected_cycle,
    mc_cycle_oracle,
    mc_rto_cycle_oracle,
    mc_truncated_geometric,
    solve_ew,
    throughput_rto,
)

KEYS = ("e_alpha", "e_beta", "e_w", "e_x", "e_n")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=float, nargs="+", default=[0.05, 0.01, 0.001])
    ap.add_argument("--cycles", type=int, default=100_000)
    args = ap.parse_args()

    print("cycle model: oracle / model - 1")
    print(f"{'p':>8s} {'law':8s} " + " ".join(f"{k:>8s}" for k in KEYS))
    for p in args.p:
        model = expected_cycle(p, 1, solve_ew(p, 1))
        for law in ("iid", "uniform"):
            s = mc_cycle_oracle(p, 1, n_cycles=args.cycles, seed=0, beta_law=law)
            errs = " ".join(f"{getattr(s, k) / getattr(model, k) - 1:+8.4f}" for k in KEYS)
            print(f"{p:8.4g} {law:8s} {errs}")

    print("\nslow-start sums: Monte-Carlo / closed form - 1")
    for p in args.p:
        x, d = mc_truncated_geometric(p, 1_000_000, seed=1)
        print(f"{p:8.4g} E[X_SS] {x / e_xss(p) - 1:+.4f}  E[D_SS] {d / e_dss(p) - 1:+.4f}")

    print("\ntimeout model")
    for p in args.p:
        lit = throughput_rto(p, mode=SeriesMode.LITERAL)
        sur = throughput_rto(p, mode=SeriesMode.SURVIVAL)
        print(f"{p:8.4g} C literal={lit.c_exact:.4f} (diverged={lit.diverged}) "
              f"C survival={sur.c_exact:.4f} asymptote=0.49")
    p = 0.1
    x, d = mc_rto_cycle_oracle(p, 200_000, seed=2)
    series = ca_series(p, SeriesMode.SURVIVAL)
    print(f"\nRTO-cycle oracle at p={p}: E[D_CA] {d / series.e_dca - 1:+.4f}, E[X_CA] {x / series.e_xca - 1:+.4f}")


if __name__ == "__main__":
    main()
