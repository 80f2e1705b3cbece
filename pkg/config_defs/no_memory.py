CONFIG_DEF = {
    "name": "no_memory",
    "description": "Prior guidance without the token memory",
    "network": {"use_memory": False},
}
