"""
Main entry point for the MEMS plate simulator
"""

import multiprocessing
import sys

from src.cli_io import main

if __name__ == "__main__":
    try:
        multiprocessing.set_start_method("spawn", force=True)
    except RuntimeError:
        pass

    sys.exit(main())
