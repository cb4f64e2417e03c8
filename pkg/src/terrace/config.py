"""Run configuration: one JSON document with a section per component.

Unknown sections or keys are rejected. ``--set section.key=value`` overrides
are applied on top of the file; values parse as JSON when they can and fall
back to plain strings.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .augment import AugmentConfig
from .errors import ConfigError
from .loss import LossConfig
from .network import NetworkConfig
from .postprocess import PostprocessConfig
from .synthdata import SceneConfig
from .train import TrainConfig

SECTIONS = {
    "scene": SceneConfig,
    "network": NetworkConfig,
    "loss": LossConfig,
    "augment": AugmentConfig,
    "train": TrainConfig,
    "postprocess": PostprocessConfig,
}


def _default_augment():
    return AugmentConfig(crop_size=None)


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=_default_augment)
    train: TrainConfig = field(default_factory=TrainConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(doc) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
        base = RunConfig().to_dict()
        built = {}
        for name, kind in SECTIONS.items():
            values = dict(base[name])
            given = doc.get(name, {})
            if not isinstance(given, dict):
                raise ConfigError(f"section {name!r} must be an object")
            known = {f.name for f in fields(kind)}
            bad = sorted(set(given) - known)
            if bad:
                raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(bad)}")
            values.update(given)
            if name == "network" and "encoder_widths" in given and "decoder_widths" not in given:
                values["decoder_widths"] = None  # re-derive from the new encoder widths
            try:
                built[name] = kind(**values)
            except TypeError as exc:
                raise ConfigError(f"section {name!r}: {exc}") from exc
        built["network"].validate()
        return cls(**built)


def parse_override(text: str) -> tuple[str, str, object]:
    key, sep, raw = text.partition("=")
    section, dot, name = key.strip().partition(".")
    if not sep or not dot or not name:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return section, name, value


def load_config(path: str | None = None, overrides: list[str] | None = None) -> RunConfig:
    doc: dict = {}
    if path:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    for item in overrides or []:
        section, name, value = parse_override(item)
        doc.setdefault(section, {})
        if not isinstance(doc[section], dict):
            raise ConfigError(f"section {section!r} must be an object")
        doc[section][name] = value
    return RunConfig.from_dict(doc)


def write_echo(cfg: RunConfig, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(cfg.to_json())
