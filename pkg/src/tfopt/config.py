"""Run configuration: one JSON file, documented defaults, flag overrides.

The file is a nested object; absent keys take defaults, unknown keys are
rejected so typos fail loudly. `--set section.key=value` overrides win over
the file. The fully merged dict is written next to the run artifacts so a
run can be replayed from it exactly.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, VolumeFormatError
from .objective import ObjectiveConfig
from .optimizer import SamplingSettings
from .render import RenderConfig
from .volume import DTYPES, VolumeMeta, resolve_meta

DEFAULTS = {
    "volume": {"path": None, "dims": None, "dtype": None, "spacing": None},
    "prompt": {"positive": "", "negatives": [], "pool": None,
               "k_negatives": 128, "per_view": False},
    "tf": {"control_points": 32, "rho": 0.05},
    "render": {"width": 224, "height": 224, "step_size": None, "fov_y_deg": 60.0,
               "max_steps": 4096, "ray_chunk": 4096},
    "objective": {"w_density": 0.02, "lambda_density": 2e-5, "lambda_color": 8e-4,
                  "beta_shape": 0.5, "eps_t": 1e-4, "gray_steps": 25, "prior_start": 100},
    "optimizer": {"lr": 10.0, "momentum": 0.75, "steps": 300, "views_per_step": 3},
    "scorer": {"reference_image": None, "endpoint": None},
    "sampling": {"seed": 0, "fixed_pose": False, "fixed_gray": None},
    "output": {"dir": "runs", "run_name": None, "snapshot_every": 0},
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}", field=here)
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here} must be an object", field=here)
            out[key] = _merge(base[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path) -> dict:
    """Read a JSON config file and merge it over the defaults."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return _merge(DEFAULTS, data)


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply `section.key=value` strings; values parse as JSON, falling back
    to bare strings so `--set volume.path=foo.raw` works unquoted."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value", field=key)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key {key!r}", field=key)
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}", field=key)
        node[parts[-1]] = value
    return cfg


def _require(cond: bool, message: str, field: str):
    if not cond:
        raise ConfigError(message, field=field)


@dataclass
class RunConfig:
    """Validated view over the merged config dict (kept in `raw`)."""

    raw: dict

    @classmethod
    def from_dict(cls, cfg: dict) -> "RunConfig":
        c = cls(raw=copy.deepcopy(cfg))
        c.validate()
        return c

    def validate(self) -> None:
        cfg = self.raw
        vol = cfg["volume"]
        _require(bool(vol["path"]), "volume.path is required", "volume.path")
        _require(os.path.exists(vol["path"]),
                 f"volume file not found: {vol['path']}", "volume.path")
        if vol["dims"] is not None:
            _require(isinstance(vol["dims"], (list, tuple)) and len(vol["dims"]) == 3
                     and all(int(d) >= 1 for d in vol["dims"]),
                     "volume.dims must be three positive integers", "volume.dims")
        if vol["dtype"] is not None:
            _require(vol["dtype"] in DTYPES,
                     f"volume.dtype must be one of {sorted(DTYPES)}", "volume.dtype")
        if vol["spacing"] is not None:
            _require(isinstance(vol["spacing"], (list, tuple)) and len(vol["spacing"]) == 3
                     and all(float(s) > 0 for s in vol["spacing"]),
                     "volume.spacing must be three positive numbers", "volume.spacing")

        tf = cfg["tf"]
        _require(int(tf["control_points"]) >= 2,
                 "tf.control_points must be at least 2", "tf.control_points")
        _require(0.0 < float(tf["rho"]) < 1.0, "tf.rho must be in (0, 1)", "tf.rho")

        ren = cfg["render"]
        _require(int(ren["width"]) >= 1 and int(ren["height"]) >= 1,
                 "render.width and render.height must be positive", "render.width")
        if ren["step_size"] is not None:
            _require(float(ren["step_size"]) > 0,
                     "render.step_size must be positive", "render.step_size")
        _require(float(ren["fov_y_deg"]) > 0 and float(ren["fov_y_deg"]) < 180,
                 "render.fov_y_deg must be in (0, 180)", "render.fov_y_deg")
        _require(int(ren["max_steps"]) >= 1, "render.max_steps must be positive",
                 "render.max_steps")
        _require(int(ren["ray_chunk"]) >= 1, "render.ray_chunk must be positive",
                 "render.ray_chunk")

        obj = cfg["objective"]
        _require(0.0 < float(obj["beta_shape"]) < 1.0,
                 "objective.beta_shape must be in (0, 1)", "objective.beta_shape")
        _require(0.0 < float(obj["eps_t"]) < 0.5,
                 "objective.eps_t must be in (0, 0.5)", "objective.eps_t")
        _require(int(obj["gray_steps"]) >= 0, "objective.gray_steps must be >= 0",
                 "objective.gray_steps")
        _require(int(obj["prior_start"]) >= 1, "objective.prior_start must be >= 1",
                 "objective.prior_start")

        opt = cfg["optimizer"]
        _require(float(opt["lr"]) > 0, "optimizer.lr must be positive", "optimizer.lr")
        _require(0.0 <= float(opt["momentum"]) < 1.0,
                 "optimizer.momentum must be in [0, 1)", "optimizer.momentum")
        _require(int(opt["steps"]) >= 1, "optimizer.steps must be >= 1", "optimizer.steps")
        _require(int(opt["views_per_step"]) >= 1,
                 "optimizer.views_per_step must be >= 1", "optimizer.views_per_step")

        sc = cfg["scorer"]
        has_ref = sc["reference_image"] is not None
        has_remote = sc["endpoint"] is not None
        _require(has_ref != has_remote,
                 "configure exactly one scorer: scorer.reference_image or scorer.endpoint",
                 "scorer")
        if has_ref:
            _require(os.path.exists(sc["reference_image"]),
                     f"reference image not found: {sc['reference_image']}",
                     "scorer.reference_image")
        if has_remote:
            _require(bool(cfg["prompt"]["positive"]),
                     "prompt.positive is required with a remote scorer", "prompt.positive")

        pr = cfg["prompt"]
        if pr["pool"] is not None:
            _require(os.path.exists(pr["pool"]),
                     f"prompt pool not found: {pr['pool']}", "prompt.pool")
        _require(int(pr["k_negatives"]) >= 1,
                 "prompt.k_negatives must be >= 1", "prompt.k_negatives")

        sa = cfg["sampling"]
        if sa["fixed_gray"] is not None:
            _require(0.0 <= float(sa["fixed_gray"]) <= 1.0,
                     "sampling.fixed_gray must be in [0, 1]", "sampling.fixed_gray")

        out = cfg["output"]
        _require(int(out["snapshot_every"]) >= 0,
                 "output.snapshot_every must be >= 0", "output.snapshot_every")

    # builders for the engine objects

    def volume_meta(self) -> VolumeMeta:
        vol = self.raw["volume"]
        dims = tuple(int(d) for d in vol["dims"]) if vol["dims"] else None
        spacing = tuple(float(s) for s in vol["spacing"]) if vol["spacing"] else None
        try:
            return resolve_meta(vol["path"], dims=dims, dtype=vol["dtype"], spacing=spacing)
        except VolumeFormatError as exc:
            raise ConfigError(str(exc), field="volume") from exc

    def render_config(self) -> RenderConfig:
        ren = self.raw["render"]
        return RenderConfig(width=int(ren["width"]), height=int(ren["height"]),
                            step_size=None if ren["step_size"] is None
                            else float(ren["step_size"]),
                            fov_y=float(np.deg2rad(float(ren["fov_y_deg"]))),
                            max_steps=int(ren["max_steps"]),
                            ray_chunk=int(ren["ray_chunk"]))

    def objective_config(self) -> ObjectiveConfig:
        obj = self.raw["objective"]
        return ObjectiveConfig(w_density=float(obj["w_density"]),
                               lambda_density=float(obj["lambda_density"]),
                               lambda_color=float(obj["lambda_color"]),
                               beta_shape=float(obj["beta_shape"]),
                               eps_t=float(obj["eps_t"]),
                               gray_steps=int(obj["gray_steps"]),
                               prior_start=int(obj["prior_start"]))

    def sampling_settings(self) -> SamplingSettings:
        sa = self.raw["sampling"]
        pr = self.raw["prompt"]
        return SamplingSettings(seed=int(sa["seed"]),
                                fixed_pose=bool(sa["fixed_pose"]),
                                fixed_gray=None if sa["fixed_gray"] is None
                                else float(sa["fixed_gray"]),
                                pool_path=pr["pool"],
                                k_negatives=int(pr["k_negatives"]),
                                negatives_per_view=bool(pr["per_view"]))

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True) + "\n"
