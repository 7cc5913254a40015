"""Taxonomy, pattern registry and pipeline configuration.

All defaults live in ``data/defaults.toml``. A user config is merged over them
table by table; ``XIDLENS_*`` environment variables override the analysis
scalars last (useful in CI).
"""

from __future__ import annotations

import copy
import functools
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .records import CATEGORIES, FleetConfig

ENV_PREFIX = "XIDLENS_"


@dataclass(frozen=True)
class TaxonomyEntry:
    label: str
    abbreviation: str
    category: str
    description: str
    recovery_action: str
    requires_reset: bool
    xids: tuple[int, ...] = ()
    inferred: bool = False
    excluded: bool = False


class ErrorTaxonomy:
    """Error types keyed by label (``"48"``, ``"119/120"``, ``"consecutive-SBE"``...)."""

    def __init__(self, entries: Mapping[str, TaxonomyEntry]):
        self.entries = dict(entries)
        self._by_xid: dict[int, str] = {}
        for label, entry in self.entries.items():
            if entry.category not in CATEGORIES:
                raise ConfigError(f"taxonomy {label!r}: unknown category {entry.category!r}")
            for xid in entry.xids:
                if xid in self._by_xid:
                    raise ConfigError(f"XID {xid} listed under both {self._by_xid[xid]!r} and {label!r}")
                self._by_xid[xid] = label

    @classmethod
    def from_dict(cls, table: Mapping[str, Mapping]) -> "ErrorTaxonomy":
        entries = {}
        for label, row in table.items():
            try:
                entries[label] = TaxonomyEntry(
                    label=label,
                    abbreviation=row["abbreviation"],
                    category=row["category"],
                    description=row.get("description", ""),
                    recovery_action=row.get("recovery_action", ""),
                    requires_reset=bool(row.get("requires_reset", False)),
                    xids=tuple(int(x) for x in row.get("xids", ())),
                    inferred=bool(row.get("inferred", False)),
                    excluded=bool(row.get("excluded", False)),
                )
            except KeyError as exc:
                raise ConfigError(f"taxonomy {label!r}: missing field {exc.args[0]!r}") from None
        return cls(entries)

    def __getitem__(self, label: str) -> TaxonomyEntry:
        return self.entries[label]

    def __contains__(self, label) -> bool:
        return label in self.entries

    def __iter__(self):
        return iter(self.entries.values())

    @property
    def xids(self) -> set[int]:
        return set(self._by_xid)

    def label_for_xid(self, xid: int | None) -> str | None:
        return self._by_xid.get(xid) if xid is not None else None

    def is_excluded(self, label: str) -> bool:
        entry = self.entries.get(label)
        return bool(entry and entry.excluded)


@dataclass(frozen=True)
class Pattern:
    pattern_id: str
    regex: re.Pattern
    xid: int | None
    label: str
    category: str


class PatternSet:
    """Ordered regex registry; the first matching pattern wins."""

    def __init__(self, patterns: list[Pattern], normalize: list[tuple[re.Pattern, str]] = ()):
        self.patterns = list(patterns)
        self.normalize = list(normalize)

    @classmethod
    def from_config(cls, rows: list[Mapping], taxonomy: ErrorTaxonomy,
                    normalize: list | None = None) -> "PatternSet":
        patterns = []
        seen: set[str] = set()
        for row in rows:
            pid = row.get("id")
            if not pid:
                raise ConfigError("pattern without id")
            if pid in seen:
                raise ConfigError(f"duplicate pattern id {pid!r}")
            seen.add(pid)
            try:
                rx = re.compile(row["regex"])
            except KeyError:
                raise ConfigError(f"pattern {pid!r}: missing regex") from None
            except re.error as exc:
                raise ConfigError(f"pattern {pid!r}: invalid regex: {exc}") from None
            xid = row.get("xid")
            if xid == "inferred":
                xid = None
            if xid is not None:
                xid = int(xid)
                label = taxonomy.label_for_xid(xid)
                if label is None:
                    raise ConfigError(f"pattern {pid!r}: XID {xid} not in taxonomy")
            else:
                label = row.get("label")
                if label not in taxonomy:
                    raise ConfigError(f"pattern {pid!r}: needs an xid or a taxonomy label")
            patterns.append(Pattern(pid, rx, xid, label, taxonomy[label].category))
        covered = {p.xid for p in patterns if p.xid is not None}
        missing = sorted(taxonomy.xids - covered)
        if missing:
            raise ConfigError(f"taxonomy XIDs without a pattern: {missing}")
        rules = []
        for item in normalize or ():
            try:
                rules.append((re.compile(item[0]), item[1]))
            except re.error as exc:
                raise ConfigError(f"normalize rule {item[0]!r}: {exc}") from None
        return cls(patterns, rules)

    def normalize_message(self, text: str) -> str:
        for rx, repl in self.normalize:
            text = rx.sub(repl, text)
        return " ".join(text.split())

    def match(self, body: str):
        for pattern in self.patterns:
            m = pattern.regex.search(body)
            if m:
                return pattern, m
        return None, None


# -- loading -----------------------------------------------------------------

def _deep_merge(base: dict, override: Mapping) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@functools.lru_cache(maxsize=1)
def _default_table() -> dict:
    text = resources.files("xidlens").joinpath("data/defaults.toml").read_text(encoding="utf-8")
    return tomllib.loads(text)


def load_table(path: str | Path | None = None) -> dict:
    table = copy.deepcopy(_default_table())
    if path is not None:
        try:
            with open(path, "rb") as fh:
                user = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if "patterns" in user:
            table.pop("patterns", None)
        table = _deep_merge(table, user)
    return table


@functools.lru_cache(maxsize=1)
def default_taxonomy() -> ErrorTaxonomy:
    return ErrorTaxonomy.from_dict(_default_table()["taxonomy"])


@functools.lru_cache(maxsize=1)
def default_patterns() -> PatternSet:
    table = _default_table()
    return PatternSet.from_config(table["patterns"], default_taxonomy(), table["ingest"].get("normalize"))


def error_type(record, taxonomy: ErrorTaxonomy | None = None) -> str:
    """Taxonomy label of a record; falls back to its pattern id."""
    taxonomy = taxonomy or default_taxonomy()
    return taxonomy.label_for_xid(record.xid) or record.pattern_id


def fleet_from_dict(name: str, row: Mapping) -> FleetConfig:
    try:
        return FleetConfig(
            fleet_name=name,
            node_count=int(row["node_count"]),
            gpus_total=int(row["gpus_total"]),
            gb_per_gpu=float(row["gb_per_gpu"]),
            observation_hours=float(row["observation_hours"]),
            nodes=row.get("nodes"),
        )
    except KeyError as exc:
        raise ConfigError(f"fleet {name!r}: missing {exc.args[0]!r}") from None


@dataclass
class PipelineConfig:
    fleets: dict[str, FleetConfig]
    fleet: str
    taxonomy: ErrorTaxonomy
    patterns: PatternSet
    line_regex: re.Pattern
    delta_t: float
    window: float
    buckets: list[str]
    ml_keywords: list[str]
    out: Path
    simulate: dict = field(default_factory=dict)

    @property
    def fleet_config(self) -> FleetConfig:
        return self.fleets[self.fleet]


def load_config(path: str | Path | None = None, *, fleet: str | None = None,
                env: Mapping[str, str] | None = None, **overrides) -> PipelineConfig:
    """Build a :class:`PipelineConfig`.

    Precedence, lowest first: packaged defaults, the config file, ``XIDLENS_*``
    environment variables, then explicit keyword overrides (CLI flags).
    """
    table = load_table(path)
    env = os.environ if env is None else env
    analysis = table.get("analysis", {})
    settings = {
        "delta_t": analysis.get("delta_t", 5),
        "window": analysis.get("window", 20),
        "fleet": table.get("fleet"),
        "out": table.get("out", "out"),
    }
    for key in settings:
        raw = env.get(ENV_PREFIX + key.upper())
        if raw is not None:
            settings[key] = raw
    if fleet is not None:
        settings["fleet"] = fleet
    for key, value in overrides.items():
        if value is not None:
            settings[key] = value

    fleets = {name: fleet_from_dict(name, row) for name, row in table.get("fleets", {}).items()}
    chosen = settings["fleet"] or (next(iter(fleets)) if len(fleets) == 1 else None)
    if chosen is None:
        chosen = "h100" if "h100" in fleets else next(iter(fleets), None)
    if chosen not in fleets:
        raise ConfigError(f"unknown fleet {chosen!r}; known: {sorted(fleets)}")

    taxonomy = ErrorTaxonomy.from_dict(table["taxonomy"])
    ingest = table.get("ingest", {})
    patterns = PatternSet.from_config(table.get("patterns", []), taxonomy, ingest.get("normalize"))
    try:
        line_regex = re.compile(ingest.get("line_regex", r"^(?P<ts>\S+)\s+(?P<node>\S+)\s+(?P<body>.*)$"))
    except re.error as exc:
        raise ConfigError(f"ingest.line_regex: {exc}") from None
    try:
        delta_t = float(settings["delta_t"])
        window = float(settings["window"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if delta_t <= 0 or window <= 0:
        raise ConfigError("delta_t and window must be positive")
    return PipelineConfig(
        fleets=fleets,
        fleet=chosen,
        taxonomy=taxonomy,
        patterns=patterns,
        line_regex=line_regex,
        delta_t=delta_t,
        window=window,
        buckets=list(analysis.get("buckets", [])),
        ml_keywords=list(analysis.get("ml_keywords", [])),
        out=Path(settings["out"]),
        simulate=dict(table.get("simulate", {})),
    )
