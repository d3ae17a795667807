"""Module execution shim so python -m masim_plots matches the console script."""
import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
