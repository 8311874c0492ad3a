"""Entry point for the memgan command-line tools."""

import sys

from memgan.cli import main


if __name__ == "__main__":
    sys.exit(main())
