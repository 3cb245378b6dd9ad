"""Writers for JSON results, CSV time series and the run manifest."""

import csv
import io
import json
import os
import tempfile
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from photon_collapse.core.utils import sha256_hex

SCHEMA_VERSION = "1.0"


@dataclass(frozen=True)
class OutputFile:
    """A written result file and its content hash."""

    name: str
    sha256: str
    size: int

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready entry."""
        return {"name": self.name, "sha256": self.sha256, "bytes": self.size}


def json_text(payload: Any) -> str:
    """Deterministic, human-readable JSON (sorted keys, no NaN)."""
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def csv_text(fieldnames: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> str:
    """CSV with a header row; floats are written with repr precision."""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(fieldnames), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({key: row.get(key, "") for key in fieldnames})
    return buffer.getvalue()


def write_atomic(path: str | Path, text: str) -> OutputFile:
    """
    Write text through a temporary file in the same directory, then rename it.

    Args:
        path: Destination file
        text: UTF-8 content

    Returns:
        OutputFile describing the written content
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    data = text.encode("utf-8")
    fd, temp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(temp_name, target)
    except BaseException:
        if os.path.exists(temp_name):
            os.unlink(temp_name)
        raise
    return OutputFile(name=target.name, sha256=sha256_hex(data), size=len(data))


def export_json(payload: Any, path: str | Path) -> OutputFile:
    """Export a JSON result with the schema version attached."""
    if isinstance(payload, dict):
        payload = {"schema_version": SCHEMA_VERSION, **payload}
    return write_atomic(path, json_text(payload))


def export_csv(
    fieldnames: Sequence[str], rows: Iterable[Mapping[str, Any]], path: str | Path
) -> OutputFile:
    """Export a time series as CSV."""
    return write_atomic(path, csv_text(fieldnames, rows))
