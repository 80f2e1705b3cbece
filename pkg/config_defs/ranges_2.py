CONFIG_DEF = {
    "name": "ranges_2",
    "description": "Alignment over 2 nested range set(s)",
    "network": {"ranges": 2},
}
