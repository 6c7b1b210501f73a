"""Allow `python -m mqpool` alongside the installed `mqpool` script."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
