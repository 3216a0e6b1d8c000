"""RunConfig: every module config in one place, loadable from ``key=value`` files.

Keys are ``section.field`` (e.g. ``builder.epsilon_px=1500``, ``train.lr=5e-4``).
Unknown keys are rejected. Command-line flags are applied on top.
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .gnn_core import ModelConfig, TrainConfig
from .graph_builder import BuilderConfig
from .labels import code_of


@dataclass(frozen=True)
class EvalConfig:
    k: int = 8
    seed: int = 0
    ablation: str = "LIS"
    threads: int = 1


@dataclass(frozen=True)
class RunConfig:
    builder: BuilderConfig = field(default_factory=BuilderConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def flat(self):
        out = {}
        for section in fields(self):
            obj = getattr(self, section.name)
            for f in fields(obj):
                value = getattr(obj, f.name)
                if isinstance(value, frozenset):
                    value = ",".join(str(v) for v in sorted(value))
                elif isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                out[f"{section.name}.{f.name}"] = value
        return out

    def with_values(self, values):
        """Copy with ``{"section.field": raw_string_or_value}`` applied."""
        sections = {s.name: getattr(self, s.name) for s in fields(self)}
        updates = {name: {} for name in sections}
        for key, raw in values.items():
            section, _, name = key.partition(".")
            if section not in sections:
                raise KeyError(f"unknown config key {key!r}")
            known = {f.name: f for f in fields(sections[section])}
            if name not in known:
                raise KeyError(f"unknown config key {key!r}")
            current = getattr(sections[section], name)
            updates[section][name] = _coerce(raw, current, key)
        return RunConfig(**{name: replace(obj, **updates[name]) for name, obj in sections.items()})


def _coerce(raw, current, key):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(current, bool):
            if text.lower() in ("1", "true", "yes"):
                return True
            if text.lower() in ("0", "false", "no"):
                return False
            raise ValueError(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float) or current is None:
            return None if text.lower() == "none" else float(text)
        if isinstance(current, frozenset):
            return frozenset(code_of(t) for t in text.split(",") if t.strip())
        if isinstance(current, tuple):
            return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise ValueError(f"bad value {raw!r} for {key}") from None
    return text


def parse_config_text(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"config line {lineno}: expected key=value")
        values[key.strip()] = value.strip()
    return values


def load_config(path=None, overrides=None):
    cfg = RunConfig()
    if path is not None:
        cfg = cfg.with_values(parse_config_text(Path(path).read_text(encoding="utf-8")))
    if overrides:
        cfg = cfg.with_values({k: v for k, v in overrides.items() if v is not None})
    return cfg
