"""Run and benchmark configuration: YAML schema, validation, round-trip."""

import os
from dataclasses import asdict, dataclass, field

import yaml

from .bench import DEFAULT_BOUND_MARGIN, RegionSpec, SceneSpec
from .errors import ConfigurationError
from .features import DEFAULT_ALPHA, WeightFunction
from .geometry import CameraModel
from .solver import SolverConfig

NORMALS_NONE = "none"
NORMALS_ESTIMATE = "estimate"
NORMALS_INPUT = "input"


@dataclass
class RunConfig:
    """Everything one upsampling run needs; mirrors the YAML schema."""

    camera: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    weights: dict = field(default_factory=lambda: {
        "kind": "exponential", "alpha": DEFAULT_ALPHA, "tau": 0.0})
    w_data: float = 1.0
    regularizer: str = "planar"
    normals: str = NORMALS_NONE
    normal_radius: float = 0.5
    bound_margin: float = DEFAULT_BOUND_MARGIN
    variance_threshold: float = None
    solver: dict = field(default_factory=dict)
    seed: int = 0

    def build_camera(self):
        cam = dict(self.camera)
        kind = cam.pop("kind", "pinhole")
        quat = cam.pop("rotation_wxyz", (1.0, 0.0, 0.0, 0.0))
        trans = cam.pop("translation", (0.0, 0.0, 0.0))
        try:
            return CameraModel.from_quaternion(
                kind=kind, fx=cam.pop("fx"), fy=cam.pop("fy"),
                cx=cam.pop("cx"), cy=cam.pop("cy"),
                quaternion_wxyz=quat, translation=trans)
        except KeyError as exc:
            raise ConfigurationError(f"camera config missing {exc}") from exc

    def build_weight_function(self):
        w = dict(self.weights)
        try:
            return WeightFunction(kind=w.get("kind", "exponential"),
                                  alpha=w.get("alpha", DEFAULT_ALPHA),
                                  tau=w.get("tau", 0.0))
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc

    def build_solver_config(self):
        try:
            return SolverConfig(**self.solver)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad solver config: {exc}") from exc

    def validate(self, base_dir="."):
        if self.regularizer not in ("planar", "baseline"):
            raise ConfigurationError(
                f"regularizer must be planar or baseline, "
                f"got {self.regularizer!r}")
        if self.normals not in (NORMALS_NONE, NORMALS_ESTIMATE,
                                NORMALS_INPUT):
            raise ConfigurationError(f"bad normals mode {self.normals!r}")
        if self.w_data <= 0:
            raise ConfigurationError("w_data must be positive")
        if self.normal_radius <= 0:
            raise ConfigurationError("normal_radius must be positive")
        if self.bound_margin < 0:
            raise ConfigurationError("bound_margin must be non-negative")
        if self.variance_threshold is not None \
                and self.variance_threshold < 0:
            raise ConfigurationError(
                "variance_threshold must be non-negative")
        self.build_camera()
        self.build_weight_function()
        self.build_solver_config()
        if "image" not in self.inputs:
            raise ConfigurationError("inputs.image is required")
        if ("sparse_depth" in self.inputs) == ("cloud" in self.inputs):
            raise ConfigurationError(
                "exactly one of inputs.sparse_depth or inputs.cloud "
                "is required")
        if "depth" not in self.outputs:
            raise ConfigurationError("outputs.depth is required")
        for key, rel in self.inputs.items():
            path = os.path.join(base_dir, rel)
            if not os.path.exists(path):
                raise ConfigurationError(
                    f"input {key} not found: {path}")
        return self

    def input_path(self, key, base_dir="."):
        rel = self.inputs.get(key)
        return None if rel is None else os.path.join(base_dir, rel)

    def output_path(self, key, base_dir="."):
        rel = self.outputs.get(key)
        if rel is None and key == "summary":
            depth = self.outputs.get("depth")
            if depth is not None:
                rel = depth + ".summary.json"
        return None if rel is None else os.path.join(base_dir, rel)


def run_config_from_dict(data):
    known = {f for f in RunConfig.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(
            f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**data)


def _load_yaml_mapping(path):
    with open(path) as f:
        try:
            data = yaml.safe_load(f) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: config must be a mapping")
    return data


def load_run_config(path, validate=True):
    data = _load_yaml_mapping(path)
    cfg = run_config_from_dict(data)
    if validate:
        cfg.validate(base_dir=os.path.dirname(os.path.abspath(path)))
    return cfg


def save_run_config(cfg, path):
    with open(path, "w") as f:
        yaml.safe_dump(asdict(cfg), f, sort_keys=False)


@dataclass
class BenchmarkConfig:
    """Sweep definition for the benchmark command."""

    output: str = "results.csv"
    scenes: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    modes: list = field(default_factory=lambda: ["equidistant"])
    seeds: list = field(default_factory=lambda: [0])
    weights: dict = field(default_factory=lambda: {
        "kind": "exponential", "alpha": DEFAULT_ALPHA, "tau": 0.0})
    w_data: float = 1.0
    bound_margin: float = DEFAULT_BOUND_MARGIN
    solver: dict = field(default_factory=dict)

    def validate(self):
        if not self.scenes:
            raise ConfigurationError("benchmark needs at least one scene")
        if not self.ratios:
            raise ConfigurationError("benchmark needs at least one ratio")
        if not self.modes:
            raise ConfigurationError("benchmark needs at least one mode")
        if not self.seeds:
            raise ConfigurationError("benchmark needs at least one seed")
        for r in self.ratios:
            if not 0 < r <= 1:
                raise ConfigurationError(f"ratio {r} outside (0, 1]")
        for s in self.scenes:
            self.build_scene_spec(s)
        return self

    @staticmethod
    def build_scene_spec(data):
        data = dict(data)
        cam = dict(data.pop("camera", {}))
        kind = cam.pop("kind", "pinhole")
        quat = cam.pop("rotation_wxyz", (1.0, 0.0, 0.0, 0.0))
        trans = cam.pop("translation", (0.0, 0.0, 0.0))
        try:
            camera = CameraModel.from_quaternion(
                kind=kind, fx=cam.pop("fx"), fy=cam.pop("fy"),
                cx=cam.pop("cx"), cy=cam.pop("cy"),
                quaternion_wxyz=quat, translation=trans)
        except KeyError as exc:
            raise ConfigurationError(
                f"scene camera missing {exc}") from exc
        regions = []
        for reg in data.pop("regions", []):
            reg = dict(reg)
            rect = reg.get("rect")
            regions.append(RegionSpec(
                normal=tuple(reg["normal"]),
                rgb=tuple(reg.get("rgb", (0.5, 0.5, 0.5))),
                center_depth=reg.get("center_depth"),
                offset=reg.get("offset"),
                rect=tuple(rect) if rect is not None else None))
        if not regions:
            raise ConfigurationError("scene needs at least one region")
        try:
            return SceneSpec(name=data.pop("name", "scene"),
                             width=data.pop("width"),
                             height=data.pop("height"),
                             camera=camera, regions=regions,
                             sigma_noise=data.pop("sigma_noise", 0.0),
                             normal_sigma_deg=data.pop(
                                 "normal_sigma_deg", 0.0),
                             with_normals=data.pop("with_normals", True))
        except KeyError as exc:
            raise ConfigurationError(f"scene config missing {exc}") from exc


def load_benchmark_config(path, validate=True):
    data = _load_yaml_mapping(path)
    known = {f for f in BenchmarkConfig.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    cfg = BenchmarkConfig(**data)
    if validate:
        cfg.validate()
    return cfg
