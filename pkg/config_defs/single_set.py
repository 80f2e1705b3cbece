import constants as const

CONFIG_DEF = {
    "name": "single_set",
    "description": "All past frames aligned as one set",
    "network": {"range_mode": const.RangeMode.SINGLE_SET},
}
