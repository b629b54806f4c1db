"""Pipeline configuration: JSON schema, validation, defaults.

A config file is a single JSON object.  Minimal example::

    {
      "datasets": [{"name": "demo", "kind": "LAR", "path": "names.csv"}],
      "maskers": [{"id": "rules", "kind": "rules"}],
      "output_dir": "out"
    }

See README for the full field reference.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

from .corpus import DATASET_KINDS, GROUP_LABELS
from .maskers import AdapterConfig, Rule, load_rules
from .sampler import (
    DEFAULT_EXPONENTIAL_RATE,
    DEFAULT_MAX_COUNT,
    DEFAULT_MIN_COUNT,
    MatchConfig,
)

MASKER_KINDS = ("lexicon", "rules", "oracle", "identity", "adapter")
FNED_CONVENTIONS = ("include_low_support", "exclude_low_support")

DEFAULT_RACE_THRESHOLD = 0.75
DEFAULT_GENDER_THRESHOLD = 0.90
DEFAULT_ALPHA = 0.05
DEFAULT_MIN_GROUP_NAMES = 20


class ConfigError(ValueError):
    """A configuration fails validation; the message names the field."""


@dataclass(frozen=True)
class DatasetConfig:
    name: str
    kind: str
    path: Path
    label_overrides: dict[str, str] = field(default_factory=dict)
    groups: tuple[str, ...] = ()  # optional canonical-group subset
    matching: Optional[MatchConfig] = None


@dataclass(frozen=True)
class MaskerConfig:
    id: str
    kind: str
    abbrev: str
    version: str = ""
    names: tuple[str, ...] = ()  # lexicon kind
    rules: tuple[Rule, ...] = ()  # rules kind
    adapter: Optional[AdapterConfig] = None  # adapter kind


@dataclass(frozen=True)
class PipelineConfig:
    datasets: tuple[DatasetConfig, ...]
    maskers: tuple[MaskerConfig, ...]
    output_dir: Path
    race_threshold: float = DEFAULT_RACE_THRESHOLD
    gender_threshold: float = DEFAULT_GENDER_THRESHOLD
    min_group_names: int = DEFAULT_MIN_GROUP_NAMES
    frequency_table: Optional[Path] = None
    matching: MatchConfig = field(default_factory=MatchConfig)
    matching_enabled: bool = False
    template_path: Optional[Path] = None  # None -> bundled corpus
    alpha: float = DEFAULT_ALPHA
    num_comparisons: Optional[int] = None  # None -> count the run's tests
    fned_convention: dict[str, str] = field(
        default_factory=lambda: {
            "race": "exclude_low_support",
            "gender": "include_low_support",
        }
    )
    lexicon_path: Optional[Path] = None  # ambiguity word list
    extreme_names_k: int = 5
    seed: int = 0
    workers: int = 4

    def to_dict(self) -> dict:
        """JSON-ready echo of the normalized configuration."""
        return {
            "datasets": [
                {
                    "name": d.name,
                    "kind": d.kind,
                    "path": str(d.path),
                    "label_overrides": dict(d.label_overrides),
                    "groups": list(d.groups),
                    "matching": _match_to_dict(d.matching) if d.matching else None,
                }
                for d in self.datasets
            ],
            "maskers": [
                {
                    "id": m.id,
                    "kind": m.kind,
                    "abbrev": m.abbrev,
                    "version": m.version,
                    "names": list(m.names),
                    "rules": [{"name": r.name, "pattern": r.pattern} for r in m.rules],
                    "adapter": (
                        {
                            "command": list(m.adapter.command),
                            "timeout": m.adapter.timeout,
                            "retries": m.adapter.retries,
                        }
                        if m.adapter
                        else None
                    ),
                }
                for m in self.maskers
            ],
            "output_dir": str(self.output_dir),
            "race_threshold": self.race_threshold,
            "gender_threshold": self.gender_threshold,
            "min_group_names": self.min_group_names,
            "frequency_table": str(self.frequency_table) if self.frequency_table else None,
            "matching": _match_to_dict(self.matching),
            "matching_enabled": self.matching_enabled,
            "template_path": str(self.template_path) if self.template_path else None,
            "alpha": self.alpha,
            "num_comparisons": self.num_comparisons,
            "fned_convention": dict(self.fned_convention),
            "lexicon_path": str(self.lexicon_path) if self.lexicon_path else None,
            "extreme_names_k": self.extreme_names_k,
            "seed": self.seed,
            "workers": self.workers,
        }


def _match_to_dict(m: MatchConfig) -> dict:
    return {
        "min_count": m.min_count,
        "max_count": m.max_count,
        "exponential_rate": m.exponential_rate,
        "scale": m.scale,
        "target_group": m.target_group,
        "seed": m.seed,
        "alpha": m.alpha,
    }


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


def _as_path(value: Any, field_name: str, base: Path, must_exist: bool = True) -> Path:
    _require(isinstance(value, str) and value, f"{field_name}: expected a non-empty path string")
    path = Path(value)
    if not path.is_absolute():
        path = base / path
    if must_exist:
        _require(path.exists(), f"{field_name}: path does not exist: {path}")
    return path


def _parse_matching(raw: Mapping[str, Any], field_name: str, base_seed: int) -> MatchConfig:
    allowed = {"min_count", "max_count", "exponential_rate", "scale", "target_group", "seed", "alpha"}
    unknown = set(raw) - allowed
    _require(not unknown, f"{field_name}: unknown keys {sorted(unknown)}")
    target = raw.get("target_group")
    if target is not None:
        _require(target in GROUP_LABELS, f"{field_name}.target_group: unknown group {target!r}")
    try:
        return MatchConfig(
            min_count=raw.get("min_count", DEFAULT_MIN_COUNT),
            max_count=raw.get("max_count", DEFAULT_MAX_COUNT),
            exponential_rate=raw.get("exponential_rate"),
            scale=raw.get("scale", 1.0),
            target_group=target,
            seed=raw.get("seed", base_seed),
            alpha=raw.get("alpha", DEFAULT_ALPHA),
        )
    except ValueError as exc:
        raise ConfigError(f"{field_name}: {exc}") from exc


def _parse_dataset(raw: Mapping[str, Any], index: int, base: Path, seed: int) -> DatasetConfig:
    where = f"datasets[{index}]"
    _require(isinstance(raw, Mapping), f"{where}: expected an object")
    kind = raw.get("kind")
    _require(kind in DATASET_KINDS, f"{where}.kind: expected one of {DATASET_KINDS}, got {kind!r}")
    name = raw.get("name") or f"dataset{index}"
    path = _as_path(raw.get("path"), f"{where}.path", base)
    overrides = raw.get("label_map", {})
    _require(isinstance(overrides, Mapping), f"{where}.label_map: expected an object")
    for raw_label, canonical in overrides.items():
        _require(
            canonical in GROUP_LABELS,
            f"{where}.label_map[{raw_label!r}]: {canonical!r} is not a canonical group",
        )
    groups = tuple(raw.get("groups", ()))
    for label in groups:
        _require(label in GROUP_LABELS, f"{where}.groups: unknown group {label!r}")
    matching = None
    if raw.get("matching") is not None:
        matching = _parse_matching(raw["matching"], f"{where}.matching", seed)
    return DatasetConfig(
        name=str(name),
        kind=str(kind),
        path=path,
        label_overrides={str(k): str(v) for k, v in overrides.items()},
        groups=groups,
        matching=matching,
    )


def _parse_masker(raw: Mapping[str, Any], index: int, base: Path) -> MaskerConfig:
    where = f"maskers[{index}]"
    _require(isinstance(raw, Mapping), f"{where}: expected an object")
    kind = raw.get("kind")
    _require(kind in MASKER_KINDS, f"{where}.kind: expected one of {MASKER_KINDS}, got {kind!r}")
    masker_id = raw.get("id") or str(kind)
    abbrev = str(raw.get("abbrev") or str(masker_id)[0].upper())
    version = str(raw.get("version", ""))

    names: tuple[str, ...] = ()
    rules: tuple[Rule, ...] = ()
    adapter = None
    if kind == "lexicon":
        if "names_path" in raw:
            path = _as_path(raw["names_path"], f"{where}.names_path", base)
            names = tuple(
                line.strip() for line in path.read_text("utf-8").splitlines() if line.strip()
            )
        else:
            listed = raw.get("names", ())
            _require(
                isinstance(listed, Sequence) and not isinstance(listed, str),
                f"{where}.names: expected a list of names",
            )
            names = tuple(str(n) for n in listed)
        _require(bool(names), f"{where}: lexicon masker needs 'names' or 'names_path'")
    elif kind == "rules":
        if "rules" in raw:
            try:
                rules = tuple(load_rules(raw["rules"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"{where}.rules: {exc}") from exc
    elif kind == "adapter":
        command = raw.get("command")
        _require(
            isinstance(command, Sequence) and not isinstance(command, str) and command,
            f"{where}.command: expected a non-empty argv list",
        )
        argv = tuple(str(part) for part in command)
        executable = argv[0]
        resolved = shutil.which(executable) or (
            executable if Path(executable).exists() else None
        )
        _require(resolved is not None, f"{where}.command: executable not found: {executable}")
        try:
            adapter = AdapterConfig(
                command=argv,
                timeout=float(raw.get("timeout", 10.0)),
                retries=int(raw.get("retries", 1)),
            )
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    return MaskerConfig(
        id=str(masker_id), kind=str(kind), abbrev=abbrev, version=version,
        names=names, rules=rules, adapter=adapter,
    )


def _parse_convention(raw: Any) -> dict[str, str]:
    default = {"race": "exclude_low_support", "gender": "include_low_support"}
    if raw is None:
        return default
    if isinstance(raw, str):
        _require(raw in FNED_CONVENTIONS, f"fned_convention: expected one of {FNED_CONVENTIONS}")
        return {"race": raw, "gender": raw}
    _require(isinstance(raw, Mapping), "fned_convention: expected a string or an object")
    out = dict(default)
    for dim, value in raw.items():
        _require(dim in ("race", "gender"), f"fned_convention: unknown dimension {dim!r}")
        _require(value in FNED_CONVENTIONS, f"fned_convention.{dim}: expected one of {FNED_CONVENTIONS}")
        out[dim] = value
    return out


def validate_config(source: Union[str, Path, Mapping[str, Any]], base_dir: Optional[Path] = None) -> PipelineConfig:
    """Parse, validate, and normalize a pipeline config.

    Relative paths are resolved against the config file's directory (or
    ``base_dir`` when the config is passed as a mapping).
    """
    if isinstance(source, Mapping):
        raw = dict(source)
        base = base_dir or Path.cwd()
    else:
        path = Path(source)
        _require(path.exists(), f"config file does not exist: {path}")
        try:
            raw = json.loads(path.read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        _require(isinstance(raw, dict), "config root must be a JSON object")
        base = base_dir or path.parent

    seed = raw.get("seed", 0)
    _require(isinstance(seed, int), "seed: expected an integer")

    datasets_raw = raw.get("datasets")
    _require(
        isinstance(datasets_raw, Sequence) and len(datasets_raw) >= 1,
        "datasets: at least one dataset is required",
    )
    datasets = tuple(
        _parse_dataset(d, i, base, seed) for i, d in enumerate(datasets_raw)
    )
    names_seen = [d.name for d in datasets]
    _require(len(set(names_seen)) == len(names_seen), "datasets: names must be unique")

    maskers_raw = raw.get("maskers")
    _require(
        isinstance(maskers_raw, Sequence) and len(maskers_raw) >= 1,
        "maskers: at least one masker is required",
    )
    maskers = tuple(_parse_masker(m, i, base) for i, m in enumerate(maskers_raw))
    ids_seen = [m.id for m in maskers]
    _require(len(set(ids_seen)) == len(ids_seen), "maskers: ids must be unique")

    race_threshold = raw.get("race_threshold", DEFAULT_RACE_THRESHOLD)
    gender_threshold = raw.get("gender_threshold", DEFAULT_GENDER_THRESHOLD)
    for label, value in (("race_threshold", race_threshold), ("gender_threshold", gender_threshold)):
        _require(
            isinstance(value, (int, float)) and 0.5 < value <= 1.0,
            f"{label}: expected a fraction in (0.5, 1.0], got {value!r}",
        )

    alpha = raw.get("alpha", DEFAULT_ALPHA)
    _require(isinstance(alpha, (int, float)) and 0.0 < alpha < 1.0, "alpha: expected a value in (0, 1)")
    num_comparisons = raw.get("num_comparisons")
    if num_comparisons is not None:
        _require(
            isinstance(num_comparisons, int) and num_comparisons >= 1,
            "num_comparisons: expected an integer >= 1",
        )

    min_group_names = raw.get("min_group_names", DEFAULT_MIN_GROUP_NAMES)
    _require(
        isinstance(min_group_names, int) and min_group_names >= 1,
        "min_group_names: expected an integer >= 1",
    )

    matching_raw = raw.get("matching")
    matching_enabled = matching_raw is not None
    matching = _parse_matching(matching_raw or {}, "matching", seed)
    if matching.exponential_rate is None and matching_raw is not None and "exponential_rate" not in matching_raw:
        pass  # rate stays None: bounds-only matching
    if not matching_enabled:
        # Normalized configs still echo the documented defaults.
        matching = MatchConfig(
            min_count=DEFAULT_MIN_COUNT,
            max_count=DEFAULT_MAX_COUNT,
            exponential_rate=DEFAULT_EXPONENTIAL_RATE,
            seed=seed,
            alpha=DEFAULT_ALPHA,
        )

    frequency_table = None
    if raw.get("frequency_table"):
        frequency_table = _as_path(raw["frequency_table"], "frequency_table", base)
    template_path = None
    if raw.get("templates"):
        template_path = _as_path(raw["templates"], "templates", base)
    lexicon_path = None
    if raw.get("lexicon"):
        lexicon_path = _as_path(raw["lexicon"], "lexicon", base)

    output_dir = raw.get("output_dir", "maskaudit-out")
    _require(isinstance(output_dir, str) and output_dir, "output_dir: expected a path string")
    out = Path(output_dir)
    if not out.is_absolute():
        out = base / out

    workers = raw.get("workers", 4)
    _require(isinstance(workers, int) and workers >= 1, "workers: expected an integer >= 1")
    extreme_k = raw.get("extreme_names_k", 5)
    _require(isinstance(extreme_k, int) and extreme_k >= 1, "extreme_names_k: expected an integer >= 1")

    return PipelineConfig(
        datasets=datasets,
        maskers=maskers,
        output_dir=out,
        race_threshold=float(race_threshold),
        gender_threshold=float(gender_threshold),
        min_group_names=min_group_names,
        frequency_table=frequency_table,
        matching=matching,
        matching_enabled=matching_enabled,
        template_path=template_path,
        alpha=float(alpha),
        num_comparisons=num_comparisons,
        fned_convention=_parse_convention(raw.get("fned_convention")),
        lexicon_path=lexicon_path,
        extreme_names_k=extreme_k,
        seed=seed,
        workers=workers,
    )
