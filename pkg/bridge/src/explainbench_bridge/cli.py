"""Bridge CLI: serve one explainer over stdio.

Usage: explainbench-bridge <explainer_name>
Exit codes: 0 clean EOF, 1 protocol failure, 2 unknown explainer/usage.
"""

import sys

from .server import serve_explainer


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        sys.stderr.write("usage: explainbench-bridge <explainer_name>\n")
        return 2
    return serve_explainer(argv[0])


if __name__ == "__main__":
    sys.exit(main())
