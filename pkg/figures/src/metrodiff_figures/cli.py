"""Command line entry point: render one figure spec.

    metrodiff-figures --spec specs/e0_weak_convergence.toml [--root DIR]

Exit code 0 on success; 1 with a message on stderr for any spec or input
problem (missing file, empty or odd-schema CSV, unknown kind).
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .render import make_figure
from .spec import FigureError, load_spec


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="metrodiff-figures",
        description="render a figure from experiment CSV outputs")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--spec", required=True,
                        help="path to a figure spec TOML file")
    parser.add_argument("--root", default=".",
                        help="directory input and output paths are "
                             "resolved against (default: current directory)")
    args = parser.parse_args(argv)

    try:
        spec = load_spec(args.spec)
        out = make_figure(spec, root=args.root)
    except FigureError as e:
        print(f"figure error: {e}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
