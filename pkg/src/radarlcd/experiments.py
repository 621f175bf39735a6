"""Seeded experiment drivers shared by the scripts and the acceptance tests."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import pipeline as P
from .config import PipelineConfig
from .evaluation import ScoredPair
from .geometry import Pose2, wrap_angle
from .keypoints import LocalDescriptorSet
from .registration import ClosureConfig, ProcessedScan, close_loop


# -- registration recovery ----------------------------------------------------

@dataclass
class RegistrationTrial:
    truth: Pose2
    estimate: Pose2
    converged: bool

    @property
    def translation_error(self) -> float:
        return math.hypot(self.estimate.x - self.truth.x, self.estimate.y - self.truth.y)

    @property
    def rotation_error_deg(self) -> float:
        return math.degrees(abs(wrap_angle(self.estimate.theta - self.truth.theta)))


def synthetic_scan_pair(seed: int, n_points: int = 150, extent: float = 40.0,
                        max_translation: float = 3.0, max_rotation_deg: float = 30.0,
                        outlier_fraction: float = 0.2, descriptor_dim: int = 16,
                        point_noise: float = 0.0) -> tuple[ProcessedScan, ProcessedScan, Pose2]:
    """Two keypoint clouds related by a random rigid pose.

    Returns ``(scan_a, scan_b, truth)`` where ``truth`` is the pose of scan b in
    scan a's frame. A fraction of scan b's descriptors is shuffled among
    themselves so that their nearest-neighbour matches point to the wrong
    landmarks.
    """
    rng = np.random.default_rng(seed)
    r = max_translation * math.sqrt(rng.uniform())
    phi = rng.uniform(-math.pi, math.pi)
    truth = Pose2(r * math.cos(phi), r * math.sin(phi),
                  math.radians(rng.uniform(-max_rotation_deg, max_rotation_deg)))
    pts_a = rng.uniform(-extent / 2, extent / 2, size=(n_points, 2))
    desc_a = rng.normal(size=(n_points, descriptor_dim))
    pts_b = truth.inverse().transform(pts_a) + rng.normal(0.0, point_noise, size=(n_points, 2))
    desc_b = desc_a + rng.normal(0.0, 0.05, size=desc_a.shape)
    n_out = int(round(outlier_fraction * n_points))
    if n_out >= 2:
        idx = rng.choice(n_points, size=n_out, replace=False)
        desc_b[idx] = desc_b[np.roll(idx, 1)]
    order = rng.permutation(n_points)
    scan_a = ProcessedScan(pts_a, LocalDescriptorSet(desc_a), "a")
    scan_b = ProcessedScan(pts_b[order], LocalDescriptorSet(desc_b[order]), "b")
    return scan_a, scan_b, truth


def registration_trials(count: int = 50, config: ClosureConfig = ClosureConfig(),
                        **scene) -> list[RegistrationTrial]:
    out = []
    for seed in range(count):
        a, b, truth = synthetic_scan_pair(seed, **scene)
        res = close_loop(a, b, config).result
        out.append(RegistrationTrial(truth, res.pose, res.converged))
    return out


# -- end-to-end directional check -----------------------------------------------

def _auc(scored: list[ScoredPair]) -> float:
    pos = np.array([s.score for s in scored if s.label])
    neg = np.array([s.score for s in scored if not s.label])
    if len(pos) == 0 or len(neg) == 0:
        return float("nan")
    gt = (pos[:, None] > neg[None, :]).mean()
    eq = (pos[:, None] == neg[None, :]).mean()
    return float(gt + 0.5 * eq)


@dataclass
class DirectionalResult:
    true_loops: int
    pair_count: int
    untrained_map: float
    trained_map: float
    scancontext_map: float
    untrained_auc: float
    trained_auc: float
    scancontext_auc: float
    train_seconds: float
    total_seconds: float
    loss_trace: list[float] = field(default_factory=list)

    def summary(self) -> str:
        return (f"loops={self.true_loops} pairs={self.pair_count} "
                f"mAP untrained={self.untrained_map:.3f} trained={self.trained_map:.3f} "
                f"scancontext={self.scancontext_map:.3f} | AUC untrained={self.untrained_auc:.3f} "
                f"trained={self.trained_auc:.3f} scancontext={self.scancontext_auc:.3f} | "
                f"train {self.train_seconds:.1f}s total {self.total_seconds:.1f}s")


def directional_check(cfg: PipelineConfig) -> DirectionalResult:
    """Untrained NetVLAD, trained NetVLAD and Scan Context on the same balanced pairs."""
    t0 = time.perf_counter()
    ds = P.simulate_dataset(cfg, cfg.run.seed)
    descriptors, contexts = {}, {}
    for scan in ds.scans:
        art = P.process_scan(scan, cfg)
        descriptors[scan.scan_id] = art.descriptors
        contexts[scan.scan_id] = P.scan_context_of(art.image, cfg)
    labels = P.make_labels(ds.manifest, cfg)
    pairs = P.evaluation_pairs(labels, cfg)
    params0 = P.initial_params(descriptors, cfg)
    t1 = time.perf_counter()
    trained = P.train_model(descriptors, labels, cfg, params0)
    train_seconds = time.perf_counter() - t1
    untrained = P.score_descriptor_pairs(pairs, P.global_descriptors(descriptors, params0))
    learned = P.score_descriptor_pairs(pairs, P.global_descriptors(descriptors, trained.params))
    sc = P.score_scancontext_pairs(pairs, contexts)
    return DirectionalResult(
        true_loops=sum(lb.is_loop for lb in labels), pair_count=len(pairs),
        untrained_map=P.mean_average_precision(untrained, cfg),
        trained_map=P.mean_average_precision(learned, cfg),
        scancontext_map=P.mean_average_precision(sc, cfg),
        untrained_auc=_auc(untrained), trained_auc=_auc(learned), scancontext_auc=_auc(sc),
        train_seconds=train_seconds, total_seconds=time.perf_counter() - t0,
        loss_trace=list(trained.loss_trace))


# -- Scan Context rotation property --------------------------------------------

def scancontext_rotation_check(yaw_deg: float, seed: int = 0, landmarks: int | None = None,
                               cfg: PipelineConfig | None = None) -> tuple[float, float]:
    """Render one scene from the same position at headings 0 and ``yaw_deg``, without noise.

    With ``landmarks`` the scene is that many uniform point returns; otherwise
    it uses the configured point and wall densities. Returns the Scan Context
    distance and the estimated yaw in degrees.
    """
    from .scancontext import sc_distance, shift_to_yaw
    from .simulation import render_scan, simulate_scene

    cfg = cfg or PipelineConfig()
    s = cfg.simulate
    max_range = s.range_bins * s.range_resolution
    extent = 2 * max_range
    if landmarks is not None:
        scene = simulate_scene(seed, landmarks, extent)
    else:
        scene = simulate_scene(seed, max(1, int(round(s.landmark_density * extent ** 2))), extent,
                               segments=int(round(s.segment_density * extent ** 2)))
    scans = [render_scan(scene, Pose2(0, 0, math.radians(h)), s.azimuths, s.range_bins,
                         s.range_resolution, 0.0, 0) for h in (yaw_deg, 0.0)]
    rotated, base = (P.scan_context_of(P.to_image(sc, cfg), cfg) for sc in scans)
    dist, shift = sc_distance(rotated, base)
    return dist, math.degrees(shift_to_yaw(shift, rotated.sectors))
