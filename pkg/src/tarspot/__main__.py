"""Allow ``python -m tarspot`` as an alternative to the console script."""

import sys

from tarspot.cli import main

if __name__ == "__main__":
    sys.exit(main())
