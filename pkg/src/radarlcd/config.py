"""Pipeline configuration: nested dataclasses read from and written to INI."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
from dataclasses import dataclass, field, fields

from .errors import ConfigError


@dataclass
class SimulateConfig:
    n_scans: int = 140
    revisits: int = 4
    revisit_length: int = 10
    step: float = 2.0
    lateral_offset: float = 2.0
    heading_jitter_deg: float = 5.0
    landmark_density: float = 0.008  # landmarks per square metre
    segment_density: float = 0.004  # wall segments per square metre
    district_size: float = 0.0  # mean district side in metres; 0 disables districts
    azimuths: int = 400
    range_bins: int = 200
    range_resolution: float = 0.4
    noise_sigma: float = 0.05


@dataclass
class ImageConfig:
    size: int = 640
    meters_per_pixel: float = 0.25


@dataclass
class FeaturesConfig:
    encoder: str = "reference"
    external_dir: str = ""


@dataclass
class KeypointsConfig:
    budget: int = 256
    window: int = 9
    iterations: int = 10
    step_tolerance: float = 1e-3
    min_separation: float = 1.0
    mask_quantile: float = 0.7


@dataclass
class LabelsConfig:
    loop_radius: float = 4.0
    exclusion_window: int = 50


@dataclass
class NetVladConfig:
    clusters: int = 8
    temperature: float = 1.0
    normalize_input: bool = False  # unit-normalise local descriptors before pooling
    init_sharpness: float = 0.0  # 0 picks it from the data
    margin: float = 0.5
    lr: float = 1e-4
    epochs: int = 100
    triplets: int = 400
    kmeans_sample: int = 4000


@dataclass
class RegistrationConfig:
    ratio: float = 0.8
    ransac_iterations: int = 500
    inlier_tol: float = 0.5
    icp_max_iterations: int = 50
    correspondence_radius: float = 2.0
    convergence_tol: float = 1e-4
    residual_threshold: float = 0.5


@dataclass
class ScanContextConfig:
    rings: int = 20
    sectors: int = 60
    max_range: float = 80.0
    candidate_k: int = 10


@dataclass
class EvaluationConfig:
    t_start: float = 0.25
    t_step: float = 0.05
    t_count: int = 13
    detect_threshold: float = 0.5


@dataclass
class RunConfig:
    seed: int = 0
    dataset_dir: str = ""


@dataclass
class PipelineConfig:
    run: RunConfig = field(default_factory=RunConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    image: ImageConfig = field(default_factory=ImageConfig)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    keypoints: KeypointsConfig = field(default_factory=KeypointsConfig)
    labels: LabelsConfig = field(default_factory=LabelsConfig)
    netvlad: NetVladConfig = field(default_factory=NetVladConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    scancontext: ScanContextConfig = field(default_factory=ScanContextConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def validate(self) -> PipelineConfig:
        s, k, n, r, e = self.simulate, self.keypoints, self.netvlad, self.registration, self.evaluation
        checks = [
            (s.n_scans >= 2, "simulate.n_scans >= 2"),
            (s.revisits >= 0 and s.revisit_length >= 1, "simulate revisits/revisit_length"),
            (s.step > 0 and s.lateral_offset >= 0, "simulate.step > 0, lateral_offset >= 0"),
            (s.landmark_density > 0, "simulate.landmark_density > 0"),
            (s.azimuths >= 4 and s.range_bins >= 4, "simulate azimuths/range_bins >= 4"),
            (s.range_resolution > 0 and s.noise_sigma >= 0, "simulate range_resolution/noise_sigma"),
            (self.image.size >= 16 and self.image.meters_per_pixel > 0, "image size/meters_per_pixel"),
            (self.features.encoder in ("reference", "external"), "features.encoder"),
            (k.budget >= 1, "keypoints.budget >= 1"),
            (k.window >= 3 and k.window % 2 == 1, "keypoints.window odd >= 3"),
            (k.iterations >= 0 and k.step_tolerance > 0, "keypoints iterations/step_tolerance"),
            (0 <= k.mask_quantile < 1, "keypoints.mask_quantile in [0, 1)"),
            (self.labels.loop_radius > 0 and self.labels.exclusion_window >= 1, "labels"),
            (n.clusters >= 1 and n.temperature > 0, "netvlad clusters/temperature"),
            (n.margin >= 0 and n.lr >= 0 and n.epochs >= 1, "netvlad margin/lr/epochs"),
            (n.triplets >= 1 and n.kmeans_sample >= n.clusters, "netvlad triplets/kmeans_sample"),
            (0 < r.ratio <= 1 and r.ransac_iterations >= 1 and r.inlier_tol > 0, "registration ransac"),
            (r.icp_max_iterations >= 1 and r.correspondence_radius > 0 and r.convergence_tol > 0,
             "registration icp"),
            (self.scancontext.rings >= 2 and self.scancontext.sectors >= 2
             and self.scancontext.max_range > 0 and self.scancontext.candidate_k >= 1, "scancontext"),
            (e.t_count >= 1 and 0 < e.detect_threshold < 2, "evaluation"),
        ]
        for ok, what in checks:
            if not ok:
                raise ConfigError(f"invalid configuration: {what}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Hash of every setting except where the dataset lives."""
        d = self.to_dict()
        d["run"] = {k: v for k, v in d["run"].items() if k != "dataset_dir"}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _coerce(raw: str, typ, where: str):
    try:
        if typ is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {typ.__name__}") from exc


def _type_of(f) -> type:
    return {"int": int, "float": float, "str": str, "bool": bool}[f.type] \
        if isinstance(f.type, str) else f.type


def parse_config(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = PipelineConfig()
    sections = {f.name: f for f in fields(cfg)}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"unknown section [{name}]")
        sub = getattr(cfg, name)
        known = {f.name: f for f in fields(sub)}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}")
            setattr(sub, key, _coerce(raw, _type_of(known[key]), f"{name}.{key}"))
    return cfg.validate()


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def dump_config(cfg: PipelineConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for sec in fields(cfg):
        sub = getattr(cfg, sec.name)
        parser[sec.name] = {f.name: repr(getattr(sub, f.name)) if _type_of(f) is float
                            else str(getattr(sub, f.name)) for f in fields(sub)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
