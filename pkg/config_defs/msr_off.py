CONFIG_DEF = {
    "name": "msr_off",
    "description": "No temporal alignment: every frame is dehazed on its own features",
    "network": {"use_msr": False},
}
