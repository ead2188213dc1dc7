#!/usr/bin/env python3
"""Run the full grouping grid and print the result table.

Equivalent to `groupmuon sweep --config configs/sweep_base.toml
--sweep configs/sweep_grid.toml`, with knobs for quick experimentation.
"""

import argparse
import sys
from pathlib import Path

from groupmuon.cli import main as cli_main

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(ROOT / "configs" / "sweep_base.toml"))
    parser.add_argument("--sweep", default=str(ROOT / "configs" / "sweep_grid.toml"))
    parser.add_argument("--out", default="runs/sweep")
    parser.add_argument("--parallel", type=int, default=1)
    args = parser.parse_args()
    return cli_main([
        "sweep",
        "--config", args.config,
        "--sweep", args.sweep,
        "--out", args.out,
        "--parallel", str(args.parallel),
    ])


if __name__ == "__main__":
    sys.exit(main())
