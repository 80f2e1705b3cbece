"""Named network and synthesis configurations, one CONFIG_DEF per module."""
