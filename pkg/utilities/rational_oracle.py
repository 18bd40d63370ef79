#!/usr/bin/env python3
"""
Rational Method-of-Steps Oracle

Re-derives values of delay equations with constant history in exact rational
arithmetic, independently of the floating-point solvers:

1. Single delay: u'(t) = alpha * u(t - d)
2. Mixture of single-delay solutions: sum_i p_i u_{d_i}(t)
3. Distributed equation: v'(t) = alpha * sum_i p_i v(t - d_i)

History is u(t) = c for t <= 0. All inputs are parsed as fractions, so
"1/3" is exactly one third.

Usage:
    python rational_oracle.py                          # canonical constants
    python rational_oracle.py --delays 1 3 --probs 1/2 1/2 --at 3
    python rational_oracle.py --delays 1 1.5 --probs 1/2 1/2 --at 2 --float
"""

import argparse
from fractions import Fraction
from itertools import pairwise
from math import comb

# Polynomials are coefficient lists in powers of t, lowest degree first
Poly = list[Fraction]


def poly_eval(p: Poly, t: Fraction) -> Fraction:
    out = Fraction(0)
    for c in reversed(p):
        out = out * t + c
    return out


def poly_add(p: Poly, q: Poly, scale: Fraction = Fraction(1)) -> Poly:
    n = max(len(p), len(q))
    return [
        (p[k] if k < len(p) else Fraction(0)) + scale * (q[k] if k < len(q) else Fraction(0))
        for k in range(n)
    ]


def poly_shift(p: Poly, d: Fraction) -> Poly:
    """Return the coefficients of t -> p(t - d)."""
    out = [Fraction(0)] * len(p)
    for k, c in enumerate(p):
        for j in range(k + 1):
            out[j] += c * comb(k, j) * (-d) ** (k - j)
    return out


def poly_integ(p: Poly) -> Poly:
    return [Fraction(0)] + [c / (k + 1) for k, c in enumerate(p)]


def breakpoints(delays: list[Fraction], t_end: Fraction) -> list[Fraction]:
    """All sums of delays up to t_end, starting from 0."""
    points = {Fraction(0)}
    frontier = [Fraction(0)]
    while frontier:
        nxt = []
        for p in frontier:
            for d in delays:
                q = p + d
                if q < t_end and q not in points:
                    points.add(q)
                    nxt.append(q)
        frontier = nxt
    return sorted(points | {t_end})


def solve(
    alpha: Fraction,
    atoms: list[tuple[Fraction, Fraction]],
    history: Fraction,
    t_end: Fraction,
) -> list[tuple[Fraction, Fraction, Poly]]:
    """Method of steps for v'(t) = alpha * sum_i w_i v(t - d_i), v = history for t <= 0.

    Returns:
        Segments (left, right, polynomial in t).
    """
    bps = breakpoints([d for d, _ in atoms], t_end)
    segments: list[tuple[Fraction, Fraction, Poly]] = []

    def piece(s: Fraction) -> Poly:
        if s <= 0:
            return [history]
        for left, right, p in segments:
            if left < s <= right:
                return p
        raise ValueError(f"no solution piece covers t={s}")

    value = history
    for a, b in pairwise(bps):
        mid = (a + b) / 2
        rhs: Poly = [Fraction(0)]
        for d, w in atoms:
            rhs = poly_add(rhs, poly_shift(piece(mid - d), d), alpha * w)
        antideriv = poly_integ(rhs)
        p = poly_add(antideriv, [value - poly_eval(antideriv, a)])
        segments.append((a, b, p))
        value = poly_eval(p, b)
    return segments


def value_at(segments: list[tuple[Fraction, Fraction, Poly]], t: Fraction) -> Fraction:
    for left, right, p in segments:
        if left <= t <= right:
            return poly_eval(p, t)
    raise ValueError(f"t={t} is outside the solved interval")


def mixture_value(alpha, atoms, history, t) -> Fraction:
    return sum(
        (p * value_at(solve(alpha, [(d, Fraction(1))], history, t), t) for d, p in atoms),
        Fraction(0),
    )


def distributed_value(alpha, atoms, history, t) -> Fraction:
    return value_at(solve(alpha, atoms, history, t), t)


def main():
    parser = argparse.ArgumentParser(description="Exact rational values of delay equations")
    parser.add_argument("--alpha", type=Fraction, default=Fraction(1),
                        help="Growth coefficient (default: 1)")
    parser.add_argument("--delays", type=Fraction, nargs="+", default=[Fraction(1), Fraction(3)],
                        help="Delays (default: 1 3)")
    parser.add_argument("--probs", type=Fraction, nargs="+", default=None,
                        help="Probabilities (default: equal weights)")
    parser.add_argument("--history", type=Fraction, default=Fraction(1),
                        help="Constant history value (default: 1)")
    parser.add_argument("--at", type=Fraction, default=Fraction(3),
                        help="Evaluation time (default: 3)")
    parser.add_argument("--float", action="store_true",
                        help="Also print decimal values")
    args = parser.parse_args()

    probs = args.probs or [Fraction(1, len(args.delays))] * len(args.delays)
    if len(probs) != len(args.delays):
        parser.error("--probs needs one entry per delay")
    if sum(probs) != 1:
        parser.error(f"probabilities sum to {sum(probs)}, expected 1")
    atoms = sorted(zip(args.delays, probs, strict=True))

    rows = [
        (f"u_{d}({args.at})", distributed_value(args.alpha, [(d, Fraction(1))], args.history,
                                                args.at))
        for d, _ in atoms
    ]
    vr = mixture_value(args.alpha, atoms, args.history, args.at)
    vd = distributed_value(args.alpha, atoms, args.history, args.at)
    rows += [(f"v_R({args.at})", vr), (f"v_D({args.at})", vd), ("v_R - v_D", vr - vd)]

    for name, value in rows:
        line = f"{name:>16} = {value}"
        if args.float:
            line += f"  ({float(value):.15g})"
        print(line)


if __name__ == "__main__":
    main()
