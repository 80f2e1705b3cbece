CONFIG_DEF = {
    "name": "ranges_4",
    "description": "Alignment over 4 nested range set(s)",
    "network": {"ranges": 4},
}
