#!/usr/bin/env python3
"""Rainfall bifurcation diagrams for slow (0.1) and fast (80) water diffusion.

Traces desert and vegetated branches for both non-local kernels and the
local model on the half-width-25 habitat, writes branch/fold CSVs, gallery
profiles, and gnuplot scripts.  Extra flags are forwarded to `vegpatch
bifurcate`.
"""
import sys

from vegpatch.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    if not any(a.startswith("--out") for a in args):
        args += ["--out", "runs/bifurcation"]
    sys.exit(main(["bifurcate", "--check"] + args))
