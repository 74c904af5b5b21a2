"""Serialized grasp records."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import ContactAssignment, EnergyBreakdown
from .kinematics import HandConfiguration
from .metrics import QualityReport


class RecordError(ValueError):
    """A record is malformed or holds non-finite numbers."""


def _check_finite(obj, where: str = "record") -> None:
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise RecordError(f"non-finite value in {where}")
    elif isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{where}.{k}")
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            _check_finite(v, where)


@dataclass(frozen=True, eq=False)
class GraspRecord:
    """One grasp with its scene, energy, quality and provenance.

    ``scene`` is either an inline scene dictionary or a path string.
    ``provenance`` holds at least ``seed``, ``chain`` and ``iterations``.
    """

    scene: dict | str
    cfg: HandConfiguration
    contacts: ContactAssignment
    energy: EnergyBreakdown
    quality: QualityReport | None = None
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "scene": self.scene,
            "cfg": self.cfg.to_dict(),
            "contacts": self.contacts.to_list(),
            "energy": self.energy.to_dict(),
            "quality": self.quality.to_dict() if self.quality is not None else None,
            "provenance": dict(self.provenance),
        }
        _check_finite(out)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GraspRecord":
        try:
            contacts = np.asarray(data["contacts"], dtype=np.int64)
            if contacts.ndim != 2:
                contacts = contacts.reshape(len(data["contacts"]), -1)
            rec = cls(
                data["scene"],
                HandConfiguration.from_dict(data["cfg"]),
                ContactAssignment(contacts),
                EnergyBreakdown.from_dict(data["energy"]),
                QualityReport.from_dict(data["quality"]) if data.get("quality") is not None else None,
                dict(data.get("provenance", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise RecordError(f"malformed record: {exc}") from exc
        _check_finite(rec.to_dict())
        return rec

    def replace(self, **changes) -> "GraspRecord":
        vals = {k: getattr(self, k) for k in ("scene", "cfg", "contacts", "energy", "quality", "provenance")}
        vals.update(changes)
        return GraspRecord(**vals)

    def same_as(self, other: "GraspRecord") -> bool:
        return self.to_dict() == other.to_dict()
