#!/usr/bin/env python3
"""Compare rotary extrapolation strategies on a small 3-axis video setting.

Prints, for each strategy, the per-dim frequencies of one axis and the
wavelength of the slowest dim, i.e. how far the positional phases can
stretch before wrapping. Writes the full table as CSV when --out is given.
"""

from __future__ import annotations

import argparse

from flowdit import rope


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--base", type=float, default=5.0)
    ap.add_argument("--d-head", type=int, default=24, dest="d_head")
    ap.add_argument("--axes", type=int, default=3)
    ap.add_argument("--extent", type=float, default=16.0)
    ap.add_argument("--scale", type=float, default=2.0)
    ap.add_argument("--t", type=float, default=0.5)
    ap.add_argument("--convention", default="consistent", choices=rope.CONVENTIONS)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    base = rope.freq_matrix(args.base, args.d_head, args.axes, args.convention)
    pivot = rope.d_target(args.base, args.d_head, args.axes, args.extent, args.convention)
    print(
        f"base={args.base} d_head={args.d_head} axes={args.axes} "
        f"s={args.scale} t={args.t} ({args.convention}); d_target={pivot:.4f}"
    )
    rows = []
    for strategy in rope.STRATEGIES:
        spec = rope.ScaleSpec(strategy, s=args.scale, train_extent=args.extent, t=args.t)
        scaled = rope.scaled_freqs(base, spec)
        rows.extend(rope.freq_table_rows(scaled, strategy))
        lam = rope.wavelength(scaled)[0]
        theta = ", ".join(f"{v:.4f}" for v in scaled.theta[0])
        print(f"  {strategy:>12}: theta[0] = [{theta}], max wavelength {lam.max():.2f}")

    if args.out:
        lines = ["strategy,axis,d,theta,lambda"]
        lines += [",".join(map(str, r)) for r in rows]
        with open(args.out, "w") as f:
            f.write("\n".join(lines) + "\n")
        print(f"wrote {len(rows)} rows to {args.out}")


if __name__ == "__main__":
    main()
