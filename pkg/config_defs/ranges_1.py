CONFIG_DEF = {
    "name": "ranges_1",
    "description": "Alignment over 1 nested range set(s)",
    "network": {"ranges": 1},
}
