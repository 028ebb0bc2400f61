"""Versioned data files: gazetteers, lexicons and synthetic-note templates.

``DEID_RESOURCES`` overrides the root directory; the layout under it must
match this package directory.
"""
from __future__ import annotations

import os
from pathlib import Path

_HERE = Path(__file__).resolve().parent


def resource_root() -> Path:
    env = os.environ.get("DEID_RESOURCES")
    return Path(env) if env else _HERE
