"""In-memory composition of the pipeline stages.

The CLI wraps these functions with file persistence; scripts and the
acceptance tests call them directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .dataset import DatasetManifest, LoopLabel, ManifestEntry, balance_pairs, label_loops, \
    sample_triplets
from .evaluation import ScoredPair, descriptor_similarity, map_over_thresholds, \
    scancontext_similarity
from .features import EncoderConfig, FeatureMap, GuidanceMap, extract_features, guidance_map
from .keypoints import KeypointSet, LocalDescriptorSet, cell_center_origin, collapse_duplicates, \
    filter_by_mask, init_keypoints, keypoints_to_points, refine_keypoints, sample_descriptors
from .losses import cosine_distance
from .netvlad import GlobalDescriptor, NetVladParams, TrainResult, TripletBatch, init_netvlad, l2_normalize_rows, \
    netvlad_forward, train_netvlad
from .radar import CartesianImage, PolarScan, polar_to_cartesian
from .registration import ClosureConfig, ProcessedScan
from .scancontext import ScanContextDescriptor, make_scan_context, sc_distance
from .simulation import make_trajectory, render_scan, scene_extent_for, simulate_scene

SCAN_PERIOD_US = 250_000


@dataclass
class SyntheticDataset:
    manifest: DatasetManifest
    scans: list[PolarScan]


def simulate_dataset(cfg: PipelineConfig, seed: int) -> SyntheticDataset:
    s = cfg.simulate
    poses = make_trajectory(seed, s.n_scans, s.revisits, s.revisit_length, s.step,
                            s.lateral_offset, s.heading_jitter_deg)
    extent = scene_extent_for(poses, s.range_bins * s.range_resolution)
    scene = simulate_scene(seed, max(1, int(round(s.landmark_density * extent ** 2))), extent,
                           segments=int(round(s.segment_density * extent ** 2)),
                           districts=int(round((extent / s.district_size) ** 2))
                           if s.district_size > 0 else 0)
    entries, scans = [], []
    for k, pose in enumerate(poses):
        sid = f"scan_{k:05d}"
        ts = k * SCAN_PERIOD_US
        scans.append(render_scan(scene, pose, s.azimuths, s.range_bins, s.range_resolution,
                                 s.noise_sigma, rng_seed=seed * 1_000_003 + k, scan_id=sid,
                                 timestamp=ts))
        entries.append(ManifestEntry(sid, f"scans/{sid}.json", ts, pose))
    return SyntheticDataset(DatasetManifest(entries), scans)


@dataclass
class ScanArtifacts:
    scan_id: str
    image: CartesianImage
    features: FeatureMap
    guidance: GuidanceMap
    keypoints: KeypointSet
    descriptors: LocalDescriptorSet
    points: np.ndarray

    def processed(self) -> ProcessedScan:
        return ProcessedScan(self.points, self.descriptors, self.scan_id)


def to_image(scan: PolarScan, cfg: PipelineConfig) -> CartesianImage:
    return polar_to_cartesian(scan, cfg.image.size, cfg.image.size, cfg.image.meters_per_pixel)


def select_keypoints(fmap: FeatureMap, g: GuidanceMap, cfg: PipelineConfig) -> KeypointSet:
    k = cfg.keypoints
    kp = init_keypoints(k.budget, fmap.height, fmap.width, cfg.run.seed)
    kp = refine_keypoints(kp, g, k.iterations, k.window, k.step_tolerance)
    kp = collapse_duplicates(kp, k.min_separation)
    return filter_by_mask(kp, g, k.mask_quantile)


def describe_keypoints(fmap: FeatureMap, kp: KeypointSet, cfg: PipelineConfig):
    """Local descriptors (optionally unit-normalised) and metric sensor-frame points."""
    desc = sample_descriptors(fmap, kp)
    if cfg.netvlad.normalize_input:
        desc = l2_normalize_rows(desc)
    c = (cfg.image.size - 1) / 2.0
    origin = cell_center_origin((c, c), fmap.stride)
    return desc, keypoints_to_points(kp, fmap.stride, cfg.image.meters_per_pixel, origin)


def process_scan(scan: PolarScan, cfg: PipelineConfig) -> ScanArtifacts:
    image = to_image(scan, cfg)
    enc = EncoderConfig(cfg.features.encoder, cfg.features.external_dir or None)
    fmap = extract_features(image, enc, scan.scan_id)
    g = guidance_map(fmap)
    kp = select_keypoints(fmap, g, cfg)
    desc, pts = describe_keypoints(fmap, kp, cfg)
    return ScanArtifacts(scan.scan_id, image, fmap, g, kp, desc, pts)


def make_labels(manifest: DatasetManifest, cfg: PipelineConfig) -> list[LoopLabel]:
    return label_loops(manifest, cfg.labels.loop_radius, cfg.labels.exclusion_window)


def evaluation_pairs(labels: list[LoopLabel], cfg: PipelineConfig) -> list[LoopLabel]:
    return balance_pairs(labels, cfg.run.seed)


def initial_params(descriptors: dict[str, LocalDescriptorSet], cfg: PipelineConfig) -> NetVladParams:
    allrows = np.concatenate([d.descriptors for _, d in sorted(descriptors.items())])
    rng = np.random.default_rng(cfg.run.seed)
    n = min(cfg.netvlad.kmeans_sample, len(allrows))
    sample = allrows[np.sort(rng.choice(len(allrows), size=n, replace=False))]
    return init_netvlad(sample, cfg.netvlad.clusters, cfg.netvlad.temperature, cfg.run.seed,
                        cfg.netvlad.init_sharpness or None)


def train_model(descriptors: dict[str, LocalDescriptorSet], labels: list[LoopLabel],
                cfg: PipelineConfig, params0: NetVladParams | None = None) -> TrainResult:
    n = cfg.netvlad
    if params0 is None:
        params0 = initial_params(descriptors, cfg)
    triples = sample_triplets(labels, cfg.run.seed, n.triplets)
    batches = [TripletBatch(descriptors[a], descriptors[p], descriptors[q]) for a, p, q in triples]
    return train_netvlad(batches, params0, n.lr, n.epochs, cfg.run.seed, n.margin)


def global_descriptors(descriptors: dict[str, LocalDescriptorSet],
                       params: NetVladParams) -> dict[str, GlobalDescriptor]:
    return {sid: netvlad_forward(d, params) for sid, d in descriptors.items()}


def descriptor_distances(pairs: list[LoopLabel],
                         globals_: dict[str, GlobalDescriptor]) -> list[float]:
    """Cosine distance per pair; a degenerate descriptor counts as maximally far."""
    out = []
    for lb in pairs:
        ga, gb = globals_[lb.id_i], globals_[lb.id_j]
        out.append(2.0 if ga.degenerate or gb.degenerate else cosine_distance(ga.values, gb.values))
    return out


def score_descriptor_pairs(pairs: list[LoopLabel],
                           globals_: dict[str, GlobalDescriptor]) -> list[ScoredPair]:
    return [ScoredPair(lb.id_i, lb.id_j, descriptor_similarity(d), lb.is_loop)
            for lb, d in zip(pairs, descriptor_distances(pairs, globals_))]


def scan_context_of(image: CartesianImage, cfg: PipelineConfig) -> ScanContextDescriptor:
    sc = cfg.scancontext
    return make_scan_context(image, sc.rings, sc.sectors, sc.max_range)


def score_scancontext_pairs(pairs: list[LoopLabel],
                            contexts: dict[str, ScanContextDescriptor]) -> list[ScoredPair]:
    out = []
    for lb in pairs:
        d, _ = sc_distance(contexts[lb.id_i], contexts[lb.id_j])
        out.append(ScoredPair(lb.id_i, lb.id_j, scancontext_similarity(d), lb.is_loop))
    return out


def closure_config(cfg: PipelineConfig) -> ClosureConfig:
    r = cfg.registration
    return ClosureConfig(r.ratio, r.ransac_iterations, r.inlier_tol, r.icp_max_iterations,
                         r.correspondence_radius, r.convergence_tol, r.residual_threshold,
                         cfg.run.seed)


def mean_average_precision(scored: list[ScoredPair], cfg: PipelineConfig) -> float:
    e = cfg.evaluation
    return map_over_thresholds(scored, e.t_start, e.t_step, e.t_count)[0]
