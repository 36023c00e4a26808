"""Command-line entry point.

    lab <kind> --config <path> [--seed N] [--out DIR]

Exit codes: 0 = all PASS criteria met, 2 = criteria failed, 1 = execution
error.  Worker count is controlled by the KPZLAB_WORKERS environment
variable only.
"""
from __future__ import annotations

import argparse
import sys

from .config import KINDS, RunConfig
from .errors import KPZLabError
from .harness import run_experiment


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="lab", description=__doc__)
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", required=True, help="path to key = value config file")
    ap.add_argument("--seed", type=int, default=None, help="override master seed")
    ap.add_argument("--out", default=None, help="override output directory")
    args = ap.parse_args(argv)
    try:
        config = RunConfig.from_file(args.config, args.kind, seed=args.seed, out=args.out)
        record = run_experiment(config)
    except (KPZLabError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for c in record.criteria:
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['id']}: {c['detail']}")
    print(f"record digest {record.digest()[:16]}  ({config.out}/run_record.json)")
    return 0 if record.all_passed else 2


if __name__ == "__main__":
    sys.exit(main())
