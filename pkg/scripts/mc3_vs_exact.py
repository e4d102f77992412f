"""MC3 convergence to exact enumeration as the chain lengthens.

    python scripts/mc3_vs_exact.py --K 12 --n 100 --seed 0
"""
import argparse

import numpy as np

from ivbma.bma import exact_bma, mc3_sample, model_frequencies, total_variation
from ivbma.config import SamplerConfig
from ivbma.synthetic import SyntheticConfig, generate_linear


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, default=12)
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    mask = np.zeros(args.K, dtype=bool)
    mask[rng.choice(args.K, size=min(4, args.K), replace=False)] = True
    coefs = tuple(rng.uniform(0.2, 1.0, mask.sum()))
    d = generate_linear(SyntheticConfig(args.n, args.K, tuple(mask), coefs, seed=args.seed))
    table, ex = exact_bma(d)
    exact = {int(c): float(p) for c, p in zip(table.codes, table.pmp)}
    print(f"{'draws':>9} {'max |PIP gap|':>14} {'TV':>8} {'accept':>7}")
    for draws in (10_000, 50_000, 200_000, 500_000):
        chain, mc = mc3_sample(d, config=SamplerConfig(draws + 10_000, 10_000, seed=args.seed))
        tv = total_variation(model_frequencies(chain.codes[chain.burn_in:]), exact)
        print(f"{draws:>9} {np.max(np.abs(mc.pip - ex.pip)):>14.4f} {tv:>8.4f} {chain.acceptance_rate:>7.3f}")


if __name__ == "__main__":
    main()
