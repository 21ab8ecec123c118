"""Deterministic artifact writers shared by the pipelines and the CLI.

Floats are rendered with ``repr`` (shortest round-trip form), keys are
sorted, and nothing time- or host-dependent is written except the explicit
version fields, so a fixed seed and config produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib

__all__ = ["fmt", "write_csv", "write_kv", "config_hash"]


def fmt(value) -> str:
    """Stable scalar rendering: shortest round-trip repr for floats."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_kv(path, mapping: dict) -> None:
    with open(path, "w") as fh:
        for key in sorted(mapping):
            fh.write(f"{key} = {fmt(mapping[key])}\n")


def config_hash(config: dict) -> str:
    """Hash of the canonicalized key-value mapping (order independent)."""
    canon = "\n".join(f"{k} = {fmt(config[k])}" for k in sorted(config))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
