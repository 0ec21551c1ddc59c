"""Run records: raw rows plus summary, serialised as CSV and JSON."""

import csv
import hashlib
import io
import json
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
from pydantic import BaseModel, Field


def _plain(value: Any) -> Any:
    """Convert numpy scalars and tuples to JSON/CSV-friendly Python values."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_plain(v) for v in value]
    return value


def canonical_json(payload: Any) -> str:
    """Deterministic JSON text (sorted keys, no whitespace)."""
    return json.dumps(_plain(payload), sort_keys=True, separators=(",", ":"))


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class RunRecord(BaseModel):
    """Rows of one experiment run with the configuration that produced them."""

    name: str = Field(..., description="Record name, usually the command")
    columns: List[str] = Field(default_factory=list, description="Column order for CSV output")
    rows: List[Dict[str, Any]] = Field(default_factory=list)
    config: Dict[str, Any] = Field(default_factory=dict, description="Resolved configuration")
    summary: Dict[str, Any] = Field(default_factory=dict)

    def add(self, **values: Any) -> None:
        """Append a row; unseen keys extend the column list."""
        for key in values:
            if key not in self.columns:
                self.columns.append(key)
        self.rows.append({k: _plain(v) for k, v in values.items()})

    def column(self, name: str) -> List[Any]:
        return [row.get(name) for row in self.rows]

    def config_hash(self) -> str:
        return content_hash(canonical_json(self.config))

    def to_csv_text(self) -> str:
        """CSV with two leading comment lines carrying the config and its hash."""
        buffer = io.StringIO()
        buffer.write(f"# config={canonical_json(self.config)}\n")
        buffer.write(f"# config_hash={self.config_hash()}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([row.get(col, "") for col in self.columns])
        return buffer.getvalue()

    def summary_payload(self, csv_text: str) -> Dict[str, Any]:
        return {
            "name": self.name,
            "config": _plain(self.config),
            "config_hash": self.config_hash(),
            "raw_sha256": content_hash(csv_text),
            "rows": len(self.rows),
            "summary": _plain(self.summary),
        }

    def write(self, out_dir: Path) -> Dict[str, Path]:
        """Write ``raw.csv`` and ``summary.json`` under ``out_dir``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_text = self.to_csv_text()
        raw_path = out_dir / "raw.csv"
        summary_path = out_dir / "summary.json"
        raw_path.write_text(csv_text, encoding="utf-8")
        summary_path.write_text(
            json.dumps(self.summary_payload(csv_text), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        return {"raw": raw_path, "summary": summary_path}
