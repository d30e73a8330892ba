"""Allow running yoro as ``python -m yoro``."""

import sys

from yoro._cli import main

if __name__ == "__main__":
    sys.exit(main())
