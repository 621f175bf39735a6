"""Dataset manifests, ground-truth loop labels, and pair/triplet sampling.

Manifest CSV header: ``scan_id,path,timestamp_us,x_m,y_m,theta_rad``.
Label CSV header: ``id_i,id_j,is_loop,dx_m,dy_m,dtheta_rad`` with the pose
fields left empty for negatives.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidInputError, SingleClassError
from .geometry import Pose2, planar_distance

MANIFEST_HEADER = ["scan_id", "path", "timestamp_us", "x_m", "y_m", "theta_rad"]
LABEL_HEADER = ["id_i", "id_j", "is_loop", "dx_m", "dy_m", "dtheta_rad"]

DEFAULT_LOOP_RADIUS = 4.0
DEFAULT_EXCLUSION_WINDOW = 50


@dataclass(frozen=True)
class ManifestEntry:
    scan_id: str
    path: str
    timestamp: int
    pose: Pose2


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]

    def __post_init__(self):
        ids = [e.scan_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("scan_ids must be unique")
        ts = [e.timestamp for e in self.entries]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise InvalidInputError("timestamps must be non-decreasing")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def by_id(self) -> dict[str, ManifestEntry]:
        return {e.scan_id: e for e in self.entries}


@dataclass(frozen=True)
class LoopLabel:
    id_i: str
    id_j: str
    is_loop: bool
    relative_pose: Optional[Pose2] = None  # pose of scan j in the frame of scan i

    def __post_init__(self):
        if self.id_i == self.id_j:
            raise InvalidInputError("a label needs two distinct scans")


def label_pair(a: ManifestEntry, b: ManifestEntry,
               loop_radius: float = DEFAULT_LOOP_RADIUS) -> LoopLabel:
    is_loop = planar_distance(a.pose, b.pose) <= loop_radius
    return LoopLabel(a.scan_id, b.scan_id, is_loop, a.pose.between(b.pose) if is_loop else None)


def label_loops(manifest: DatasetManifest, loop_radius: float = DEFAULT_LOOP_RADIUS,
                exclusion_window: int = DEFAULT_EXCLUSION_WINDOW) -> list[LoopLabel]:
    """Label every pair whose index gap exceeds ``exclusion_window``."""
    if len(manifest) == 0:
        raise InvalidInputError("manifest is empty")
    if exclusion_window < 1:
        raise InvalidInputError("exclusion_window must be >= 1")
    entries = manifest.entries
    xy = np.array([[e.pose.x, e.pose.y] for e in entries])
    labels = []
    for i in range(len(entries)):
        j0 = i + exclusion_window + 1
        if j0 >= len(entries):
            break
        dist = np.hypot(*(xy[j0:] - xy[i]).T)
        for j, d in zip(range(j0, len(entries)), dist):
            if d <= loop_radius:
                labels.append(LoopLabel(entries[i].scan_id, entries[j].scan_id, True,
                                        entries[i].pose.between(entries[j].pose)))
            else:
                labels.append(LoopLabel(entries[i].scan_id, entries[j].scan_id, False))
    return labels


def _split(labels):
    pos = [lb for lb in labels if lb.is_loop]
    neg = [lb for lb in labels if not lb.is_loop]
    return pos, neg


def balance_pairs(labels: list[LoopLabel], seed: int) -> list[LoopLabel]:
    """Down-sample the majority class so both classes have equal counts.

    The result keeps the input order.
    """
    pos, neg = _split(labels)
    if not pos or not neg:
        raise SingleClassError("balancing needs at least one positive and one negative label")
    rng = np.random.default_rng(seed)
    n = min(len(pos), len(neg))
    keep_pos = set(rng.choice(len(pos), size=n, replace=False).tolist()) if len(pos) > n else None
    keep_neg = set(rng.choice(len(neg), size=n, replace=False).tolist()) if len(neg) > n else None
    out, ip, ineg = [], 0, 0
    for lb in labels:
        if lb.is_loop:
            if keep_pos is None or ip in keep_pos:
                out.append(lb)
            ip += 1
        else:
            if keep_neg is None or ineg in keep_neg:
                out.append(lb)
            ineg += 1
    return out


def sample_triplets(labels: list[LoopLabel], seed: int,
                    count: int) -> list[tuple[str, str, str]]:
    """Draw (anchor, positive, negative) scan-id triples from labelled pairs.

    Both orientations of a positive pair may serve as (anchor, positive) as
    long as the anchor also appears in some negative pair.
    """
    pos, neg = _split(labels)
    if not pos:
        raise InvalidInputError("no positive pairs to build triplets from")
    if not neg:
        raise SingleClassError("no negative pairs to build triplets from")
    if count <= 0:
        return []
    negatives: dict[str, list[str]] = {}
    for lb in neg:
        negatives.setdefault(lb.id_i, []).append(lb.id_j)
        negatives.setdefault(lb.id_j, []).append(lb.id_i)
    anchors = [(a, p) for lb in pos for a, p in ((lb.id_i, lb.id_j), (lb.id_j, lb.id_i))
               if a in negatives]
    if not anchors:
        raise InvalidInputError("no positive pair shares an anchor with a negative pair")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        a, p = anchors[int(rng.integers(len(anchors)))]
        cands = negatives[a]
        out.append((a, p, cands[int(rng.integers(len(cands)))]))
    return out


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for e in manifest:
            w.writerow([e.scan_id, e.path, e.timestamp, repr(e.pose.x), repr(e.pose.y),
                        repr(e.pose.theta)])


def read_manifest(path) -> DatasetManifest:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise InvalidInputError(f"unexpected manifest header {reader.fieldnames}")
        entries = [ManifestEntry(r["scan_id"], r["path"], int(r["timestamp_us"]),
                                 Pose2(float(r["x_m"]), float(r["y_m"]), float(r["theta_rad"])))
                   for r in reader]
    return DatasetManifest(entries)


def resolve_scan_path(manifest_path, entry: ManifestEntry) -> Path:
    p = Path(entry.path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def write_labels(labels: list[LoopLabel], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_HEADER)
        for lb in labels:
            if lb.is_loop:
                rp = lb.relative_pose
                w.writerow([lb.id_i, lb.id_j, 1, repr(rp.x), repr(rp.y), repr(rp.theta)])
            else:
                w.writerow([lb.id_i, lb.id_j, 0, "", "", ""])


def read_labels(path) -> list[LoopLabel]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != LABEL_HEADER:
            raise InvalidInputError(f"unexpected label header {reader.fieldnames}")
        for r in reader:
            is_loop = r["is_loop"].strip() in ("1", "true", "True")
            rp = (Pose2(float(r["dx_m"]), float(r["dy_m"]), float(r["dtheta_rad"]))
                  if is_loop else None)
            out.append(LoopLabel(r["id_i"], r["id_j"], is_loop, rp))
    return out
