"""Command-line entry point: ``python main.py <command> [options]``."""

from __future__ import annotations

from smoothgev.cli import main


if __name__ == "__main__":
    raise SystemExit(main())
