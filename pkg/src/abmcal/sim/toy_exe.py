"""The toy simulator behind the external-executable protocol.

Usage: ``python -m abmcal.sim.toy_exe input.csv output.csv``
"""
from __future__ import annotations

import sys

from ..design import ABM_SPACE, DesignPoint
from .toy import toy_simulator, write_series


def main(argv=None) -> int:
    from ..pool import read_input

    args = sys.argv[1:] if argv is None else argv
    if len(args) != 2:
        print("usage: python -m abmcal.sim.toy_exe INPUT OUTPUT", file=sys.stderr)
        return 2
    try:
        values, seed = read_input(args[0])
        missing = set(ABM_SPACE.names) - set(values)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        theta = DesignPoint([values[n] for n in ABM_SPACE.names], ABM_SPACE)
        write_series(args[1], toy_simulator(theta, seed))
    except (OSError, ValueError) as exc:
        print(f"toy_exe: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
