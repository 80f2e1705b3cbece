CONFIG_DEF = {
    "name": "no_stda_guidance",
    "description": "Alignment queries use the unguided scene feature",
    "network": {"guide_stda": False},
}
