"""Run acceptance criteria and store the experiment records.

Usage::

    python scripts/run_acceptance.py              # all nine criteria
    python scripts/run_acceptance.py 5 7          # selected criteria
    python scripts/run_acceptance.py --out results/acceptance --workers 8

Criteria 5-8 are written to ``<out>/criterion_<n>_<name>.json``; the test
suite re-checks those files against the pinned tolerances.
"""

import argparse
import logging
import sys
from pathlib import Path

from ligp import acceptance

CHEAP = {1: acceptance.woodbury_suite, 2: acceptance.gradient_suite, 3: acceptance.tau2_suite,
         4: acceptance.wimse_suite, 9: acceptance.determinism}
HEAVY = {5: acceptance.bermudan_2d, 6: acceptance.bermudan_5d, 7: acceptance.herbie,
         8: acceptance.sir}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("criteria", nargs="*", type=int, default=list(range(1, 10)))
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1]
                                             / "results" / "acceptance"))
    parser.add_argument("--workers", type=int, default=None)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    log = logging.getLogger("acceptance").info

    ok = True
    for n in sorted(set(args.criteria)):
        if n in CHEAP:
            res = CHEAP[n]()
        elif n in HEAVY:
            res = HEAVY[n](workers=args.workers, log=log)
            path = acceptance.save_record(res, args.out)
            log(f"record written to {path}")
        else:
            parser.error(f"no criterion {n}")
        print(res.line(), flush=True)
        ok &= res.passed
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
