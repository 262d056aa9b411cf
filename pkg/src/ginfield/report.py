"""Shared report container produced by checks and experiment drivers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from . import __version__


@dataclass
class ExperimentReport:
    """Outcome of one named check or experiment run.

    Attributes:
        name: experiment identifier (kebab-case).
        config: echo of the configuration the run used.
        results: per-dimension or per-case numbers, JSON-serializable.
        passes: named boolean flags, one per criterion evaluated.
        notes: free-form remarks (tolerances hit, caveats).
        wall_clock_s: elapsed seconds; serialized separately from results
            so that report files stay byte-reproducible.
    """

    name: str
    config: dict[str, Any]
    results: dict[str, Any]
    passes: dict[str, bool]
    notes: list[str] = field(default_factory=list)
    wall_clock_s: float | None = None
    version: str = __version__

    @property
    def passed(self) -> bool:
        return all(self.passes.values())

    def to_json_dict(self) -> dict[str, Any]:
        """Deterministic dict for report.json (no wall clock)."""
        return {
            "name": self.name,
            "version": self.version,
            "config": self.config,
            "results": self.results,
            "passes": self.passes,
            "passed": self.passed,
            "notes": list(self.notes),
        }
