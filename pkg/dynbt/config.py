"""
Run settings for the CLI.

Values are layered, lowest to highest precedence:
DEFAULT_SETTINGS < YAML file given with --config < DYNBT_* environment < flags.
"""

import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Union

import yaml
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, field_validator

from .errors import UsageError
from .kernel import KernelFamily
from .solver import DEFAULT_MAX_ITER, DEFAULT_TOL, Method

ENV_PREFIX = "DYNBT_"

DEFAULT_SETTINGS: Dict[str, Any] = {
    # smoothing
    "kernel": "gaussian",
    "bandwidth": "loocv",
    "h_grid": None,
    # solver
    "tol": DEFAULT_TOL,
    "max_iter": DEFAULT_MAX_ITER,
    "method": "mm",
    "warm_start": True,
    # connectivity thresholds
    "eps_raw": 0.0,
    "eps_smoothed": 1e-12,
    # cross-validation
    "cv_subsample": None,
    # execution
    "jobs": 1,
    "seed": None,
    # theory constants
    "c_s": 1.0,
    "eta": 0.1,
    "p_min": None,
}


class Settings(BaseModel):
    """Every knob the subcommands read."""
    model_config = ConfigDict(extra="forbid")

    kernel: KernelFamily = Field(default=KernelFamily.GAUSSIAN, description="Kernel family: gaussian or epanechnikov")
    bandwidth: Union[float, Literal["loocv"]] = Field(default="loocv", description="Fixed bandwidth h > 0, or loocv to select it")
    h_grid: Optional[List[float]] = Field(default=None, description="Candidate bandwidths for loocv (default: 20 geometric points in [0.005, 1])")
    tol: float = Field(default=DEFAULT_TOL, gt=0, description="Sup-norm tolerance on the stationarity residual")
    max_iter: int = Field(default=DEFAULT_MAX_ITER, ge=1, description="Iteration cap per fit")
    method: Method = Field(default=Method.MM, description="mm, gradient or newton")
    warm_start: bool = Field(default=True, description="Start each grid point from the previous solution")
    eps_raw: float = Field(default=0.0, ge=0, description="Edge threshold for raw count matrices")
    eps_smoothed: float = Field(default=1e-12, ge=0, description="Edge threshold for smoothed count matrices")
    cv_subsample: Optional[int] = Field(default=None, ge=2, description="Hold out only this many games in loocv")
    jobs: int = Field(default=1, ge=1, description="Worker processes")
    seed: Optional[int] = Field(default=None, ge=0, description="RNG seed")
    c_s: float = Field(default=1.0, gt=0, description="Smoothing constant of the bandwidth schedules")
    eta: float = Field(default=0.1, gt=0, description="Slack exponent of the bandwidth schedules")
    p_min: Optional[float] = Field(default=None, gt=0, le=1, description="Lower bound on winning probabilities")

    @field_validator("bandwidth")
    @classmethod
    def _positive_bandwidth(cls, value):
        if value != "loocv" and not value > 0:
            raise ValueError("bandwidth must be positive")
        return value

    @field_validator("h_grid", mode="before")
    @classmethod
    def _split_grid(cls, value):
        if isinstance(value, str):
            return [float(v) for v in value.split(",") if v.strip()]
        return value


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except yaml.YAMLError as e:
        raise UsageError(f"config file {path} is not valid YAML: {e}")
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a mapping of settings")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def read_environment(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    environ = os.environ if environ is None else environ
    values = {}
    for key, value in environ.items():
        if key.startswith(ENV_PREFIX):
            name = key[len(ENV_PREFIX):].lower()
            if name in DEFAULT_SETTINGS:
                values[name] = value
    return values


def load_settings(
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> Settings:
    """Merge the layers; `overrides` with value None are treated as unset."""
    merged: Dict[str, Any] = dict(DEFAULT_SETTINGS)
    if config_path is not None:
        merged.update(read_config_file(config_path))
    merged.update(read_environment(environ))
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        settings = Settings(**merged)
    except PydanticValidationError as e:
        problems = [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]
        raise UsageError("invalid settings", {"problems": problems})
    logger.debug(f"Settings: {settings.model_dump(mode='json')}")
    return settings
