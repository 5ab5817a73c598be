"""Provenance blocks stamped into every output file.

No timestamps or host names are recorded so identical runs stay byte-identical.
"""
from __future__ import annotations

import hashlib
import json

from . import __version__

TOOL = "cardiacgen"


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def provenance(config=None, seed: int | None = None, **extra) -> dict:
    block = {"tool": TOOL, "version": __version__, "config_hash": config_hash(config or {}),
             "seed": seed}
    block.update(extra)
    return block


def csv_header(prov: dict) -> str:
    """One comment line for CSV outputs."""
    return "# " + json.dumps(prov, sort_keys=True) + "\n"


def read_csv_skipping_header(path) -> list[str]:
    with open(path) as fh:
        return [line for line in fh if not line.startswith("#")]
