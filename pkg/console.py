#!/usr/bin/env python3
"""
Status output for long-running commands.

Lines carry an emoji prefix so progress, warnings and failures can be
told apart at a glance. Numerics modules never print; only orchestration
code (dataset I/O, training, CLI commands) calls `say`.
"""

import sys

_quiet = False


def set_quiet(quiet: bool) -> None:
    global _quiet
    _quiet = bool(quiet)


def say(message: str) -> None:
    if not _quiet:
        print(message, flush=True)


def warn(message: str) -> None:
    if not _quiet:
        print(f"⚠️ {message}", flush=True)


def fail(message: str) -> None:
    """Failures always reach stderr, even with --quiet."""
    print(f"❌ {message}", file=sys.stderr, flush=True)
