CONFIG_DEF = {
    "name": "default",
    "description": "Full network: token memory, guided alignment over three ranges",
    "network": {},
}
