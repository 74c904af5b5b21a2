"""Run configuration loaded from TOML or JSON.

Sections map one-to-one onto the parameter dataclasses::

    [energy]    EnergyWeights      [refine]    RefineParams
    [mala]      MalaParams         [plan]      PlanParams
    [filter]    FilterThresholds   [friction]  FrictionModel

plus top-level ``seed`` and a ``[paths]`` table of free-form strings.
Unknown sections or keys raise :class:`ConfigError`.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .energy import EnergyWeights
from .metrics import FilterThresholds, FrictionModel
from .refine import PlanParams, RefineParams
from .sampler import MalaParams

SECTIONS = {
    "energy": EnergyWeights,
    "mala": MalaParams,
    "refine": RefineParams,
    "filter": FilterThresholds,
    "friction": FrictionModel,
    "plan": PlanParams,
}


class ConfigError(ValueError):
    """Invalid configuration content."""


def _to_dict(obj) -> dict:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of a run; all fields default to the library defaults."""

    energy: EnergyWeights = field(default_factory=EnergyWeights)
    mala: MalaParams = field(default_factory=MalaParams)
    refine: RefineParams = field(default_factory=RefineParams)
    filter: FilterThresholds = field(default_factory=FilterThresholds)
    friction: FrictionModel = field(default_factory=FrictionModel)
    plan: PlanParams = field(default_factory=PlanParams)
    paths: dict = field(default_factory=dict)
    seed: int | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        kwargs = {}
        for name, kind in SECTIONS.items():
            section = data.pop(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"[{name}] must be a table")
            known = {f.name for f in fields(kind)}
            unknown = sorted(set(section) - known)
            if unknown:
                raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
            try:
                kwargs[name] = kind(**{k: tuple(v) if isinstance(v, list) else v for k, v in section.items()})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{name}]: {exc}") from exc
        paths = data.pop("paths", {})
        if not isinstance(paths, dict) or not all(isinstance(v, str) for v in paths.values()):
            raise ConfigError("[paths] must map names to strings")
        seed = data.pop("seed", None)
        if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool) or seed < 0):
            raise ConfigError("seed must be a non-negative integer")
        if data:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(data))}")
        return cls(paths=dict(paths), seed=seed, **kwargs)

    def to_dict(self) -> dict:
        out = {name: _to_dict(getattr(self, name)) for name in SECTIONS}
        out["paths"] = dict(self.paths)
        if self.seed is not None:
            out["seed"] = self.seed
        return out

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, mala=replace(self.mala, seed=seed))


def load_config(path=None) -> RunConfig:
    """Read a ``.toml`` or ``.json`` file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    raw = path.read_bytes()
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(raw)
        else:
            data = tomllib.loads(raw.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table")
    return RunConfig.from_dict(data)
