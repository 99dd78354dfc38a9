#!/usr/bin/env python3
"""Run all bundled demos through the command-line interface and collect their
artifacts under one output directory."""

import argparse
from pathlib import Path

from funcobs.cli import main as cli_main


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("demo_runs"))
    args = ap.parse_args(argv)

    worst = 0
    for name in ("batch", "cstr", "linear"):
        out = args.out / name
        print(f"=== demo {name} -> {out} ===")
        rc = cli_main(["demo", name, "--out", str(out)])
        print(f"=== demo {name} exited {rc} ===\n")
        worst = max(worst, rc)
    return worst


if __name__ == "__main__":
    raise SystemExit(main())
