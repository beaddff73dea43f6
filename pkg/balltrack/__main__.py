"""
Main entry point for balltrack when run as a module.

This allows the package to be run with `python -m balltrack`.
"""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
