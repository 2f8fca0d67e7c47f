"""Density-estimation ranking risks with MF and LightGCN backbones."""

from ._pderank import *  # noqa: F401,F403
from ._pderank import oracle  # noqa: F401


def train_config(**fields):
    """TrainConfig with fields set by keyword; enum fields also accept strings."""
    parsers = {"risk": parse_risk, "backbone": parse_backbone, "optimizer": parse_optimizer}  # noqa: F405
    cfg = TrainConfig()  # noqa: F405
    for key, value in fields.items():
        if key == "lambda":
            key = "lambda_"
        if key in parsers and isinstance(value, str):
            value = parsers[key](value)
        if not hasattr(cfg, key):
            raise AttributeError(f"unknown TrainConfig field: {key}")
        setattr(cfg, key, value)
    cfg.validate()
    return cfg
