"""Run configuration: INI-style file with sections, merged over defaults.

Sections and their keys mirror the dataclasses they populate::

    [env]        EnvConfig fields
    [ddpg]       Hyperparams fields
    [adversary]  AdversaryConfig fields
    [campaign]   CampaignOptions fields
    [run]        seed, out_root

Pair-valued keys accept ``17, 40`` or ``[17, 40]``.
"""
from __future__ import annotations

import ast
import configparser
import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from safecage.adversary import AdversaryConfig
from safecage.ddpg import Hyperparams
from safecage.env import ConfigError, EnvConfig

OUT_ROOT_ENV = "SAFECAGE_OUT"


@dataclass
class CampaignOptions:
    episodes: int = 120
    episode_steps: int = 7500
    cage_enabled: bool = False
    smoothing: int = 50
    adversary_runs: int = 3


@dataclass
class RunOptions:
    seed: int = 0
    out_root: str = ""


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    ddpg: Hyperparams = field(default_factory=Hyperparams)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    campaign: CampaignOptions = field(default_factory=CampaignOptions)
    run: RunOptions = field(default_factory=RunOptions)

    @property
    def seed(self) -> int:
        return self.run.seed

    def to_dict(self) -> dict:
        return {s: asdict(getattr(self, s)) for s in SECTIONS}

    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode()).hexdigest()

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for section, values in self.to_dict().items():
            cp[section] = {k: _format(v) for k, v in values.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


SECTIONS = {
    "env": EnvConfig,
    "ddpg": Hyperparams,
    "adversary": AdversaryConfig,
    "campaign": CampaignOptions,
    "run": RunOptions,
}


def _format(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def _coerce(raw: str, default, where: str):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, tuple):
            if text.isidentifier():
                return text  # named preset, validated by the owning dataclass
            value = ast.literal_eval(text if text.startswith(("[", "(")) else f"({text})")
            return tuple(float(v) for v in value)
        if isinstance(default, int):
            value = ast.literal_eval(text)
            if float(value) != int(value):
                raise ValueError(text)
            return int(value)
        if isinstance(default, float):
            return float(text)
        return text
    except (ValueError, SyntaxError, TypeError):
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def parse_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> RunConfig:
    """Resolve defaults, then the config file, then ``overrides``.

    ``overrides`` maps ``"section.key"`` to already-typed values.
    """
    values: dict[str, dict] = {s: asdict(cls()) for s, cls in SECTIONS.items()}
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        cp.optionxform = str
        try:
            with open(path) as fh:
                cp.read_file(fh, source=str(path))
        except configparser.MissingSectionHeaderError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: expected a [section] header, got {exc.line.strip()!r}") from None
        except configparser.ParsingError as exc:
            where = "; ".join(f"line {n}: {line.strip()!r}" for n, line in exc.errors)
            raise ConfigError(f"{path}: parse error at {where}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc.message}") from None
        for section in cp.sections():
            if section not in SECTIONS:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, raw in cp.items(section):
                if key not in values[section]:
                    raise ConfigError(f"{path}: unknown key '{key}' in [{section}]")
                values[section][key] = _coerce(raw, values[section][key], f"[{section}] {key}")
    for dotted, v in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in values or key not in values[section]:
            raise ConfigError(f"unknown override '{dotted}'")
        values[section][key] = v
    try:
        return RunConfig(**{s: SECTIONS[s](**values[s]) for s in SECTIONS})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ROOT_ENV, "runs"))


def section_fields(section: str) -> list[str]:
    return [f.name for f in fields(SECTIONS[section])]
