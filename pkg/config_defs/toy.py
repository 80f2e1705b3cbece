import constants as const

CONFIG_DEF = {
    "name": "toy",
    "description": "Acceptance run: 32x32 clip, 300 steps",
    "network": {
        "scales": 4,
        "channels": (8, 16, 32, 64),
        "ranges": 3,
        "d_bins": 32,
        "memory": 4,
        "learning_rate": const.LEARNING_RATE,
        "lambda_phy": const.LAMBDA_PHY,
        "lambda_flow": const.LAMBDA_FLOW,
        "total_steps": 300,
    },
    "synthesis": {
        "beta_choices": const.BETA_CHOICES,
        "airlight_range": const.A_RANGE,
    },
}
