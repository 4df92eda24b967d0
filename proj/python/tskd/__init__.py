"""Python front end to the tskd C++ library."""

import json

from ._tskd import (
    DiffusionSchedule,
    dice,
    distillation_presets,
    evaluate_csv,
    hd95,
    make_shapes_sample,
    miou,
    psnr_from_mse,
    run_cli,
)
from . import _tskd


def config(desk: bool = False) -> dict:
    return json.loads(_tskd.config_json(desk))


def distillation(name: str) -> dict:
    return json.loads(_tskd.distillation_json(name))


def main() -> int:
    import sys

    return run_cli(sys.argv[1:])


__all__ = [
    "DiffusionSchedule",
    "config",
    "dice",
    "distillation",
    "distillation_presets",
    "evaluate_csv",
    "hd95",
    "main",
    "make_shapes_sample",
    "miou",
    "psnr_from_mse",
    "run_cli",
]
