"""Bermudan max-call prices for the two- or five-asset preset over several seeds.

Usage::

    python scripts/bermudan_prices.py --preset 2d --seeds 0 1 2 3 4
    python scripts/bermudan_prices.py --preset 5d --fixed-theta 1.0
"""

import argparse
import logging
from dataclasses import replace

import numpy as np

from ligp.bermudan import european_price, fit_chain, preset_2d, preset_5d, price, scenario_paths


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--preset", choices=("2d", "5d"), default="2d")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--n-paths", type=int, default=25000)
    parser.add_argument("--fixed-theta", type=float, default=None,
                        help="hold the lengthscale fixed (prescaled units)")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")

    prices = []
    for s in args.seeds:
        model, p, spec, cfg = (preset_2d if args.preset == "2d" else preset_5d)(s)
        cfg = replace(cfg, workers=args.workers)
        if args.fixed_theta is not None:
            cfg = replace(cfg, theta=args.fixed_theta)
        chain = fit_chain(model, p, spec, cfg, seed=s, log=logging.info)
        paths = scenario_paths(model, args.n_paths, s)
        res = price(chain, model, p, paths=paths)
        euro = european_price(model, p, paths=paths)
        prices.append(res.price)
        print(f"seed {s}: price {res.price:.4f} (se {res.stderr:.4f}), european "
              f"{euro.price:.4f}, fit {sum(res.fit_times.values()):.0f}s", flush=True)
    print(f"median {np.median(prices):.4f}")


if __name__ == "__main__":
    main()
