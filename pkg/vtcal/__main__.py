"""Allow running the command line as python -m vtcal."""
import sys

from vtcal.cli import main

if __name__ == "__main__":
    sys.exit(main())
