"""Baseline rcc constant when outstanding data is capped at K / p segments.

The simulator has no receive window.  This script emulates one by wrapping
the sender's transmit step, to show how strongly the baseline constant
depends on such a cap while rcc+ does not.

    python3 scripts/rwnd_ablation.py --caps 2 4 --p 0.01 0.003
"""

import argparse
import warnings

from rcclab import engine
from rcclab.engine import Params
from rcclab.netsim import measure_constant_inputs, run_sim


def install_cap(k: float) -> None:
    original = engine.Sender._transmit

    def capped(self, now, budget):
        sb = self.scoreboard
        limit = k / self.params.p
        actions = []
        while sb.pipe + 1.0 <= self.cwnd and (budget is None or budget > 0):
            if not sb.lost_pending() and sb.nxt - sb.una >= limit:
                break
            step = original(self, now, 1)
            if not step:
                break
            actions += step
            if budget is not None:
                budget -= 1
        return actions

    engine.Sender._transmit = capped


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--caps", type=float, nargs="+", default=[2.0, 4.0])
    ap.add_argument("--p", type=float, nargs="+", default=[0.01, 0.003])
    ap.add_argument("--seeds", type=int, default=2)
    ap.add_argument("--rounds", type=int, default=2000)
    args = ap.parse_args()
    warnings.simplefilter("ignore", RuntimeWarning)

    original = engine.Sender._transmit
    for k in args.caps:
        install_cap(k)
        for variant in ("rcc", "rcc+"):
            for p in args.p:
                cs = []
                rtos = 0
                for seed in range(args.seeds):
                    prm = Params(p=p, seed=seed, variant=variant)
                    res = run_sim(prm, rounds=args.rounds, backend="reference")
                    cs.append(measure_constant_inputs(res, prm)["c"])
                    rtos += res.rto_count
                print(f"cap={k:g}/p {variant:5s} p={p:<7g} C={sum(cs) / len(cs):.3f} rto={rtos}")
        engine.Sender._transmit = original


if __name__ == "__main__":
    main()
