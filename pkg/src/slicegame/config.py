"""Scenario file loading: TOML or JSON, one schema.

Top-level keys: ``base_stations`` (list of ids), ``slices`` (array of
tables), ``users`` (array of tables), optional ``weight_floor_delta``.

Slice: ``id``, ``guaranteed_shares`` (BS id -> share), ``excess_share``,
optional ``overall_share`` (computed when absent), optional ``alpha``.

User: ``id``, ``slice``, ``bs``, ``achievable_rate``, optional ``min_rate``,
``priority``, ``weight`` (starting bid used by the allocate command).

Unknown keys are rejected; domain invariants are checked separately by
``validate_scenario``.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .model import ScenarioSpec, SliceProfile, UserRecord

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


_SLICE_KEYS = {"id", "guaranteed_shares", "excess_share", "overall_share", "alpha"}
_USER_KEYS = {"id", "slice", "bs", "achievable_rate", "min_rate", "priority", "weight"}
_TOP_KEYS = {"base_stations", "slices", "users", "weight_floor_delta"}


def _reject_unknown(table: dict, allowed: set, where: str):
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def load_raw(path) -> dict:
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text.decode())
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def scenario_from_dict(raw: dict):
    """Compile a parsed config into (ScenarioSpec, starting weights or None)."""
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a table")
    _reject_unknown(raw, _TOP_KEYS, "top level")
    for key in ("base_stations", "slices", "users"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")

    slices = []
    for t in raw["slices"]:
        _reject_unknown(t, _SLICE_KEYS, f"slice {t.get('id', '?')!r}")
        if "id" not in t:
            raise ConfigError("slice without id")
        guarantees = {str(k): float(v)
                      for k, v in t.get("guaranteed_shares", {}).items()}
        excess = float(t.get("excess_share", 0.0))
        overall = float(t.get("overall_share",
                              sum(guarantees.values()) + excess))
        slices.append(SliceProfile(
            id=str(t["id"]), guaranteed_shares=guarantees, excess_share=excess,
            overall_share=overall, alpha=float(t.get("alpha", 1.0))))

    users = []
    weights = []
    for t in raw["users"]:
        _reject_unknown(t, _USER_KEYS, f"user {t.get('id', '?')!r}")
        for key in ("id", "slice", "bs", "achievable_rate"):
            if key not in t:
                raise ConfigError(f"user missing required key {key!r}")
        users.append(UserRecord(
            id=str(t["id"]), slice_id=str(t["slice"]), bs_id=str(t["bs"]),
            achievable_rate=float(t["achievable_rate"]),
            min_rate=float(t.get("min_rate", 0.0)),
            priority=float(t.get("priority", 0.0))))
        weights.append(t.get("weight"))

    spec = ScenarioSpec(
        base_stations=[str(b) for b in raw["base_stations"]],
        slices=slices, users=users,
        weight_floor_delta=float(raw.get("weight_floor_delta", 0.0)))

    if all(w is None for w in weights):
        return spec, None
    if any(w is None for w in weights):
        raise ConfigError("either every user or no user carries a weight")
    return spec, np.array([float(w) for w in weights])


def load_scenario(path):
    """Load a scenario file; returns (ScenarioSpec, user weights or None).

    Weights follow the file's user order, which ``validate_scenario``
    preserves.
    """
    return scenario_from_dict(load_raw(path))
