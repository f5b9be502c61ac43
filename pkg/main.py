"""Command-line entry point: python main.py <command> [flags]."""

from __future__ import annotations

import sys

from spkdlg.cli import main

if __name__ == "__main__":
    sys.exit(main())
