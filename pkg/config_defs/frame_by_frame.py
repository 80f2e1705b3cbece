import constants as const

CONFIG_DEF = {
    "name": "frame_by_frame",
    "description": "Each past frame aligned on its own",
    "network": {"range_mode": const.RangeMode.FRAME_BY_FRAME},
}
