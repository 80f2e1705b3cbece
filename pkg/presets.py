import importlib
import logging
import os
import sys
from typing import Any, Dict, Mapping, Optional

import constants as const
from errors import ParameterError
from haze_physics import SynthesisConfig
from map_net import NetworkConfig

logger = logging.getLogger(__name__)

DEFAULT_PRESET = "default"

# Used when config_defs/ is missing or yields nothing.
BUILTIN_PRESETS: Dict[str, Dict[str, Any]] = {
    DEFAULT_PRESET: {
        "name": DEFAULT_PRESET,
        "description": "Full network at desk scale",
        "network": {},
    },
}


def load_presets() -> Dict[str, Dict[str, Any]]:
    """Load named configurations from the modules in config_defs/.

    Each module defines a CONFIG_DEF dict with keys: name, description and
    network (NetworkConfig overrides), optionally synthesis.
    """
    root = os.path.dirname(os.path.abspath(__file__))
    defs_dir = os.path.join(root, "config_defs")
    if not os.path.isdir(defs_dir):
        return dict(BUILTIN_PRESETS)
    if root not in sys.path:
        sys.path.append(root)
    package_name = "config_defs"
    files = sorted(f for f in os.listdir(defs_dir) if f.endswith(".py") and not f.startswith("_"))
    presets: Dict[str, Dict[str, Any]] = {}
    for fname in files:
        mod_name = f"{package_name}.{fname[:-3]}"
        try:
            mod = importlib.import_module(mod_name)
        except ImportError as e:
            logger.warning("failed to load preset from %s: %s", mod_name, e)
            continue
        config_def = getattr(mod, "CONFIG_DEF", None)
        if isinstance(config_def, dict):
            presets[config_def.get("name", fname[:-3])] = config_def
    return presets or dict(BUILTIN_PRESETS)


def preset_names():
    return sorted(load_presets())


def resolve(preset: Optional[str] = None,
            file_values: Optional[Mapping[str, Any]] = None,
            overrides: Optional[Mapping[str, Any]] = None):
    """Merge preset < config file < flags into (NetworkConfig, SynthesisConfig)."""
    presets = load_presets()
    name = preset or DEFAULT_PRESET
    if name not in presets:
        raise ParameterError(f"unknown preset {name!r}; choose from {', '.join(sorted(presets))}")
    chosen = presets[name]
    values: Dict[str, Any] = {}
    values.update(chosen.get("network", {}))
    values.update(chosen.get("synthesis", {}))
    values.update(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    known = {"beta_choices", "airlight_range"} | set(NetworkConfig().to_mapping())
    unknown = sorted(set(values) - known)
    if unknown:
        raise ParameterError(f"unknown configuration keys: {', '.join(unknown)}")
    synthesis = SynthesisConfig.from_mapping(values)
    network = NetworkConfig.from_mapping(values)
    logger.debug("resolved preset %s (seed %s)", name, values.get("seed", const.DEFAULT_SEED))
    return network, synthesis
