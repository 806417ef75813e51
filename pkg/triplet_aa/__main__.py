"""Allow running as: python -m triplet_aa"""
import sys

from .cli import main

sys.exit(main())
