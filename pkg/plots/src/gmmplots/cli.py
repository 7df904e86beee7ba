"""Standalone renderer CLI.

Exit codes: 0 success, 2 bad arguments or input schema mismatch (the message
names the offending file/column).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .figures import DEFAULT_HIGHLIGHTS, KINDS, FigureRequest, render
from .io import SchemaError

__all__ = ["main"]


def _parse_means(raw: str) -> np.ndarray:
    try:
        return np.array([[float(v) for v in part.split()] for part in raw.split(";")])
    except ValueError:
        raise SchemaError("target means must be ';'-separated coordinate lists") from None


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gmmatch-plot",
        description="Render gmmatch surface CSV / trajectory NDJSON outputs into figures",
    )
    parser.add_argument("--input", nargs="+", required=True, help="input CSV/NDJSON file(s)")
    parser.add_argument("--kind", required=True, choices=KINDS, help="figure kind")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--colormap", default="viridis")
    parser.add_argument("--no-stars", action="store_true", help="omit global-minimum star markers")
    parser.add_argument("--frame-stride", type=int, default=1, help="render every Nth snapshot")
    parser.add_argument(
        "--frames",
        choices=("all", "key"),
        default="all",
        help="'all' snapshots (with stride) or only the key highlight iterations",
    )
    parser.add_argument(
        "--highlights",
        type=int,
        nargs="+",
        default=list(DEFAULT_HIGHLIGHTS),
        help="snapshot iterations to highlight in animations",
    )
    parser.add_argument("--dim", type=int, default=2, help="sample dimension of trajectory snapshots")
    parser.add_argument(
        "--target-means",
        default=None,
        help="target component means as 'x y; x y; ...' (default: the 25-component lattice)",
    )
    parser.add_argument("--target-sigma2", type=float, default=0.05, help="target component variance")
    parser.add_argument("--dpi", type=int, default=100)
    args = parser.parse_args(argv)
    try:
        req = FigureRequest(
            inputs=tuple(args.input),
            kind=args.kind,
            out_dir=args.out,
            colormap=args.colormap,
            stars=not args.no_stars,
            frame_stride=args.frame_stride,
            frames=args.frames,
            highlights=tuple(args.highlights),
            dim=args.dim,
            target_means=None if args.target_means is None else _parse_means(args.target_means),
            target_sigma2=args.target_sigma2,
            dpi=args.dpi,
        )
        written = render(req)
    except SchemaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print("\n".join(written))
    return 0


if __name__ == "__main__":
    sys.exit(main())
