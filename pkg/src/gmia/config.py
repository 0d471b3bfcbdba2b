"""Run configuration: one JSON file describing data, protocol settings, output and master seed."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .datasets import DataError, Dataset, Schema, generate_toy, load_csv, make_cancer_like
from .evaluation import ProtocolConfig
from .model import ConfigurationError

OUTPUT_ROOT_ENV = "GMIA_OUTPUT_ROOT"
GENERATORS = {"cancer": make_cancer_like, "toy": generate_toy}

DEFAULTS = {
    "seed": 0,
    "output": "gmia-run",
    "data": {"generator": "cancer", "seed": 0},
    "protocol": {},
}


@dataclass(frozen=True)
class RunConfig:
    data: dict
    protocol: ProtocolConfig
    output: str
    seed: int
    base_dir: Path = Path(".")

    def __post_init__(self):
        d = self.data
        if "generator" in d:
            if d["generator"] not in GENERATORS:
                raise ConfigurationError(f"unknown generator {d['generator']!r}; choose from {sorted(GENERATORS)}")
        elif "path" in d and "schema" in d:
            for key in ("path", "schema"):
                if not self.resolve(d[key]).exists():
                    raise ConfigurationError(f"{key} file not found: {self.resolve(d[key])}")
        else:
            raise ConfigurationError("data needs either 'generator' or both 'path' and 'schema'")

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    def output_dir(self, override: str | None = None) -> Path:
        out = Path(override or self.output)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            return Path(root) / out
        return out if out.is_absolute() else self.base_dir / out

    def load_dataset(self) -> Dataset:
        d = self.data
        if "generator" in d:
            kwargs = {"n": int(d["n"])} if "n" in d else {}
            return GENERATORS[d["generator"]](int(d.get("seed", 0)), **kwargs)
        return load_csv(self.resolve(d["path"]), Schema.load(self.resolve(d["schema"])),
                        name=Path(d["path"]).stem)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "output": self.output, "data": dict(self.data),
                "protocol": {k: v for k, v in self.protocol.to_dict().items() if k != "seed"}}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def apply_override(raw: dict, assignment: str) -> dict:
    """Apply ``dotted.key=value``; the value is parsed as JSON when possible."""
    key, sep, text = assignment.partition("=")
    if not sep or not key:
        raise ConfigurationError(f"override must look like key=value, got {assignment!r}")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    out = copy.deepcopy(raw)
    node = out
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"cannot set {key}: {p} is not a section")
    node[parts[-1]] = value
    return out


def build_config(raw: dict, base_dir: Path = Path(".")) -> RunConfig:
    user_data = raw.get("data", {})
    raw = _merge(DEFAULTS, raw)
    if "path" in user_data or "schema" in user_data:
        # a file-backed dataset replaces the default generator entirely
        raw["data"] = copy.deepcopy(user_data)
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    try:
        protocol = ProtocolConfig.from_dict({**raw["protocol"], "seed": int(raw["seed"])})
    except TypeError as exc:
        raise ConfigurationError(f"bad protocol settings: {exc}") from None
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    return RunConfig(dict(raw["data"]), protocol, str(raw["output"]), int(raw["seed"]), base_dir)


def load_config(path: str | Path | None, overrides: list[str] = ()) -> RunConfig:
    raw: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        base = path.parent
    for o in overrides:
        raw = apply_override(raw, o)
    try:
        return build_config(raw, base)
    except DataError as exc:
        raise ConfigurationError(str(exc)) from None
