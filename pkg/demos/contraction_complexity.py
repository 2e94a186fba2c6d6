"""Contraction-cost separation between circuit families.

Plans a tensor-network contraction for each (family, width) cell with a
greedy minimum-resulting-rank heuristic and prints the largest
intermediate tensor rank. Sparse families stay at constant rank no matter
the width; densely coupled families grow linearly, which is the cost
separation between easy and hard classical simulation.
"""

import argparse

from iqpforge.circuits import CircuitFamily
from iqpforge.tncomplexity import complexity_sweep


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--ns", type=int, nargs="+",
                        default=list(range(4, 41, 4)))
    parser.add_argument("--open", action="store_true",
                        help="leave output legs open instead of closing "
                             "onto the zero string")
    args = parser.parse_args()

    rows = complexity_sweep(list(CircuitFamily.ALL), args.ns,
                            closed=not args.open)
    by_family: dict[str, list] = {}
    for row in rows:
        by_family.setdefault(row.family, []).append(row)

    header = "family".ljust(16) + "".join(f"{n:>6}" for n in args.ns)
    print("max intermediate tensor rank (log2 of its size):")
    print(header)
    for family in CircuitFamily.ALL:
        cells = {r.n: r.max_rank for r in by_family.get(family, [])}
        line = family.ljust(16)
        line += "".join(f"{cells[n]:>6}" if n in cells else f"{'-':>6}"
                        for n in args.ns)
        print(line)
    print("\n(dashes mark widths the family does not support)")


if __name__ == "__main__":
    main()
