CONFIG_DEF = {
    "name": "no_gmra_guidance",
    "description": "Range weights from scene affinity only",
    "network": {"guide_gmra": False},
}
