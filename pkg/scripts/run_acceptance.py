"""Run the acceptance criteria and print one PASS/FAIL line each.

Usage: python3 scripts/run_acceptance.py [--quick] [--seed N] [--only 1,5]
"""

import argparse
import sys

from rasp_evt import acceptance


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", help="comma separated criterion numbers")
    args = ap.parse_args()
    only = {int(t) for t in args.only.split(",")} if args.only else None
    results = acceptance.run_all(args.seed, args.quick, args.workers, only, report=lambda r: print(r.line(), flush=True))
    for r in results:
        for c in r.failures():
            print(f"  criterion {r.number}: {c.label} {c.detail}")
    return 0 if all(r.passed for r in results) else 4


if __name__ == "__main__":
    sys.exit(main())
