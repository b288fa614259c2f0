"""Named hyper-parameter presets shipped as JSON config fragments.

Each preset fixes the model kind plus the tuned reservoir, thresholding and
training settings for one benchmark pairing (GardensPoint, SPEDTest,
ESSEX3IN1, Corridor, Nordland, Oxford RobotCar) or for the synthetic
desk-scale task. Presets never reference data locations: merge one with a
config that points at a manifest, or pass --preset on the command line.
"""

from __future__ import annotations

import json
from importlib import resources

from .errors import ConfigError


def list_presets() -> list[str]:
    names = []
    for entry in resources.files("esnplace").joinpath("presets").iterdir():
        if entry.name.endswith(".json"):
            names.append(entry.name[: -len(".json")])
    return sorted(names)


def load_preset(name: str) -> dict:
    path = resources.files("esnplace").joinpath("presets", f"{name}.json")
    try:
        text = path.read_text()
    except FileNotFoundError:
        known = ", ".join(list_presets())
        raise ConfigError(f"unknown preset {name!r}; available: {known}") from None
    return json.loads(text)
