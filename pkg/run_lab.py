#!/usr/bin/env python3
"""
Run the PDPM Lab
================
Quick launcher for the lab command line.

Usage:
    python run_lab.py train --config configs/ring8.yaml --lambda 1
    python run_lab.py compare --config configs/grid25.yaml --seeds 5
"""

import sys
from pathlib import Path

# Add repo root to path
sys.path.insert(0, str(Path(__file__).parent))

from pdpm_lab.cli import main

if __name__ == "__main__":
    sys.exit(main())
