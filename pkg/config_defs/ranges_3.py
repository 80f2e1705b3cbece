CONFIG_DEF = {
    "name": "ranges_3",
    "description": "Alignment over 3 nested range set(s)",
    "network": {"ranges": 3},
}
