CONFIG_DEF = {
    "name": "mpg_off",
    "description": "No prior guidance: the scene branch never sees the prior",
    "network": {"use_mpg": False},
}
