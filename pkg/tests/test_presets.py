import pytest

from constants import RangeMode
from errors import ParameterError
from presets import DEFAULT_PRESET, load_presets, preset_names, resolve


def test_every_preset_builds_a_valid_config():
    presets = load_presets()
    assert DEFAULT_PRESET in presets
    for name in presets:
        network, synthesis = resolve(name)
        assert network.scales >= 2 and synthesis.beta_choices


def test_ablation_axes_are_available():
    names = set(preset_names())
    assert {"mpg_off", "msr_off", "ranges_1", "ranges_2", "ranges_3", "ranges_4",
            "single_set", "frame_by_frame", "no_memory", "toy"} <= names
    assert not resolve("mpg_off")[0].use_mpg
    assert not resolve("msr_off")[0].use_msr
    assert resolve("ranges_4")[0].ranges == 4
    assert resolve("single_set")[0].range_mode is RangeMode.SINGLE_SET
    assert resolve("frame_by_frame")[0].range_mode is RangeMode.FRAME_BY_FRAME


def test_precedence_preset_then_file_then_flags():
    network, _ = resolve("ranges_4", {"ranges": "2", "memory": "3"}, {"memory": 5, "seed": None})
    assert network.ranges == 2 and network.memory == 5
    assert network.rng_seed == 0


def test_synthesis_values_from_file():
    _, synthesis = resolve(None, {"beta_choices": "0.01, 0.02", "airlight_range": "0.8, 0.9", "seed": "4"})
    assert synthesis.beta_choices == (0.01, 0.02)
    assert synthesis.airlight_range == (0.8, 0.9) and synthesis.rng_seed == 4


def test_seed_reaches_both_configs():
    network, synthesis = resolve("default", overrides={"seed": 11})
    assert network.rng_seed == 11 and synthesis.rng_seed == 11


def test_unknown_preset_and_key():
    with pytest.raises(ParameterError, match="unknown preset"):
        resolve("nope")
    with pytest.raises(ParameterError, match="colour"):
        resolve(None, {"colour": "red"})


def test_invalid_value():
    with pytest.raises(ParameterError):
        resolve(None, {"ranges": "0"})
