"""Command-line front end.

Every stage reads and writes fixed names under ``--run-dir``::

    dataset/        manifest.csv, scans/<id>.json + .bin      (simulate)
    features/       <id>.rfm                                   (features)
    keypoints/      <id>.csv                                   (keypoints)
    describe/       <id>.csv  x_m,y_m,d0..                     (describe)
    train/          labels.csv, model.rvl, loss.csv            (train)
    detect/         scores.csv                                 (detect)
    close/          results.csv                                (close)
    scancontext/    <id>.rsc, scores.csv                       (scancontext)
    evaluate/       report.json, report.csv                    (evaluate)

Each stage directory also holds ``STAMP.json`` with the configuration hash;
downstream stages refuse inputs stamped with a different hash unless
``--force`` is given.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline as P
from .config import PipelineConfig, dump_config, load_config
from .dataset import DatasetManifest, read_labels, read_manifest, resolve_scan_path, write_labels, \
    write_manifest
from .errors import BadMagicError, ConfigError, ConfigHashMismatchError, MissingArtifactError, \
    RadarLCDError
from .evaluation import ClosureRecord, ScoredPair, build_report, descriptor_similarity, \
    map_over_thresholds
from .features import EncoderConfig, extract_features, guidance_map, load_feature_map, \
    save_feature_map
from .keypoints import LocalDescriptorSet, read_keypoints_csv, write_keypoints_csv
from .netvlad import load_model, netvlad_forward, save_model
from .radar import read_polar_scan, write_polar_scan
from .registration import ProcessedScan, close_loop, read_results_csv, write_results_csv
from .scancontext import load_scan_context, save_scan_context

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class Run:
    def __init__(self, run_dir: Path, cfg: PipelineConfig, force: bool):
        self.dir = Path(run_dir)
        self.cfg = cfg
        self.force = force
        self.hash = cfg.hash()

    def stage_dir(self, stage: str) -> Path:
        if stage == "dataset" and self.cfg.run.dataset_dir:
            return Path(self.cfg.run.dataset_dir)
        return self.dir / stage

    def manifest_path(self) -> Path:
        return self.stage_dir("dataset") / "manifest.csv"

    def require(self, stage: str, name: str | None = None) -> Path:
        """Path of an upstream artifact, checking it exists and its stamp matches."""
        d = self.stage_dir(stage)
        target = d / name if name else d
        if not target.exists():
            raise MissingArtifactError(stage, target)
        external = stage == "dataset" and bool(self.cfg.run.dataset_dir)
        stamp = d / "STAMP.json"
        if not external and not self.force:
            if not stamp.exists():
                raise MissingArtifactError(stage, stamp)
            got = json.loads(stamp.read_text()).get("config_hash")
            if got != self.hash:
                raise ConfigHashMismatchError(
                    f"stage '{stage}' was produced with config {got}, current is {self.hash}"
                    " (use --force to override)")
        return target

    def output(self, stage: str) -> Path:
        d = self.stage_dir(stage)
        d.mkdir(parents=True, exist_ok=True)
        return d

    def stamp(self, stage: str, **info) -> None:
        body = {"stage": stage, "config_hash": self.hash, **info}
        (self.stage_dir(stage) / "STAMP.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")

    def manifest(self) -> DatasetManifest:
        return read_manifest(self.require("dataset", "manifest.csv"))


def _write_descriptor_csv(path: Path, points: np.ndarray, desc: LocalDescriptorSet) -> None:
    D = desc.descriptors
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_m", "y_m"] + [f"d{i}" for i in range(D.shape[1])])
        for p, d in zip(points, D):
            w.writerow([repr(float(v)) for v in (*p, *d)])


def _read_descriptor_csv(path: Path) -> ProcessedScan:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    width = len(rows[0])
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, width)
    return ProcessedScan(data[:, :2], LocalDescriptorSet(data[:, 2:]), Path(path).stem)


def _processed(run: Run, manifest: DatasetManifest) -> dict[str, ProcessedScan]:
    d = run.require("describe")
    out = {}
    for e in manifest:
        p = d / f"{e.scan_id}.csv"
        if not p.exists():
            raise MissingArtifactError("describe", p)
        out[e.scan_id] = _read_descriptor_csv(p)
    return out


def _write_scores(path: Path, scored: list[ScoredPair], extra: dict[tuple[str, str], list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id_i", "id_j", "is_loop", "score", "distance", "detected"])
        for s in scored:
            w.writerow([s.id_i, s.id_j, int(s.label), repr(float(s.score)),
                        *extra[(s.id_i, s.id_j)]])


def _read_scores(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _to_scored(rows: list[dict]) -> list[ScoredPair]:
    return [ScoredPair(r["id_i"], r["id_j"], float(r["score"]), r["is_loop"] == "1") for r in rows]


# stages ---------------------------------------------------------------------

def cmd_simulate(run: Run) -> str:
    if run.cfg.run.dataset_dir:
        raise ConfigError("simulate writes into the run directory; unset run.dataset_dir")
    ds = P.simulate_dataset(run.cfg, run.cfg.run.seed)
    out = run.output("dataset")
    (out / "scans").mkdir(exist_ok=True)
    for entry, scan in zip(ds.manifest, ds.scans):
        write_polar_scan(scan, resolve_scan_path(out / "manifest.csv", entry))
    write_manifest(ds.manifest, out / "manifest.csv")
    labels = P.make_labels(ds.manifest, run.cfg)
    n_pos = sum(lb.is_loop for lb in labels)
    run.stamp("dataset", scans=len(ds.scans), loops=n_pos)
    return f"simulate: {len(ds.scans)} scans, {n_pos} loop pairs"


def cmd_features(run: Run) -> str:
    manifest = run.manifest()
    out = run.output("features")
    enc = EncoderConfig(run.cfg.features.encoder, run.cfg.features.external_dir or None)
    for e in manifest:
        scan = read_polar_scan(resolve_scan_path(run.manifest_path(), e))
        fmap = extract_features(P.to_image(scan, run.cfg), enc, e.scan_id)
        save_feature_map(fmap, out / f"{e.scan_id}.rfm")
    run.stamp("features", scans=len(manifest))
    return f"features: {len(manifest)} feature maps"


def cmd_keypoints(run: Run) -> str:
    manifest = run.manifest()
    src = run.require("features")
    out = run.output("keypoints")
    total = 0
    for e in manifest:
        fmap = load_feature_map(src / f"{e.scan_id}.rfm")
        kp = P.select_keypoints(fmap, guidance_map(fmap), run.cfg)
        write_keypoints_csv(kp, out / f"{e.scan_id}.csv")
        total += len(kp)
    run.stamp("keypoints", keypoints=total)
    return f"keypoints: {total} keypoints over {len(manifest)} scans"


def cmd_describe(run: Run) -> str:
    manifest = run.manifest()
    fdir, kdir = run.require("features"), run.require("keypoints")
    out = run.output("describe")
    for e in manifest:
        fmap = load_feature_map(fdir / f"{e.scan_id}.rfm")
        kp_path = kdir / f"{e.scan_id}.csv"
        if not kp_path.exists():
            raise MissingArtifactError("keypoints", kp_path)
        desc, pts = P.describe_keypoints(fmap, read_keypoints_csv(kp_path), run.cfg)
        _write_descriptor_csv(out / f"{e.scan_id}.csv", pts, desc)
    run.stamp("describe", scans=len(manifest))
    return f"describe: {len(manifest)} descriptor sets"


def cmd_train(run: Run) -> str:
    manifest = run.manifest()
    scans = _processed(run, manifest)
    desc = {k: v.descriptors for k, v in scans.items()}
    labels = P.make_labels(manifest, run.cfg)
    out = run.output("train")
    write_labels(labels, out / "labels.csv")
    result = P.train_model(desc, labels, run.cfg)
    save_model(result.params, out / "model.rvl", {"config_hash": run.hash})
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(result.loss_trace):
            w.writerow([i, repr(float(v))])
    run.stamp("train", epochs=len(result.loss_trace))
    trace = result.loss_trace
    return f"train: {len(trace)} epochs, loss {trace[0]:.4f} -> {trace[-1]:.4f}"


def cmd_detect(run: Run) -> str:
    params, _ = load_model(run.require("train", "model.rvl"))
    labels = read_labels(run.require("train", "labels.csv"))
    scans = _processed(run, run.manifest())
    pairs = P.evaluation_pairs(labels, run.cfg)
    globals_ = {k: netvlad_forward(v.descriptors, params) for k, v in scans.items()}
    thr = run.cfg.evaluation.detect_threshold
    scored, extra = [], {}
    for lb, dist in zip(pairs, P.descriptor_distances(pairs, globals_)):
        scored.append(ScoredPair(lb.id_i, lb.id_j, descriptor_similarity(dist), lb.is_loop))
        extra[(lb.id_i, lb.id_j)] = [repr(dist), int(dist <= thr)]
    _write_scores(run.output("detect") / "scores.csv", scored, extra)
    run.stamp("detect", pairs=len(scored))
    hits = sum(v[1] for v in extra.values())
    return f"detect: {len(scored)} pairs, {hits} detected at distance <= {thr}"


def cmd_close(run: Run) -> str:
    rows = _read_scores(run.require("detect", "scores.csv"))
    scans = _processed(run, run.manifest())
    conf = P.closure_config(run.cfg)
    results = []
    for r in rows:
        if r["detected"] == "1" and r["is_loop"] == "1":
            res = close_loop(scans[r["id_i"]], scans[r["id_j"]], conf)
            results.append((r["id_i"], r["id_j"], res.result))
    write_results_csv(results, run.output("close") / "results.csv")
    run.stamp("close", closures=len(results))
    ok = sum(r.converged for _, _, r in results)
    return f"close: {len(results)} true detections registered, {ok} converged"


def cmd_scancontext(run: Run) -> str:
    manifest = run.manifest()
    labels = read_labels(run.require("train", "labels.csv"))
    out = run.output("scancontext")
    contexts = {}
    for e in manifest:
        scan = read_polar_scan(resolve_scan_path(run.manifest_path(), e))
        sc = P.scan_context_of(P.to_image(scan, run.cfg), run.cfg)
        save_scan_context(sc, out / f"{e.scan_id}.rsc")
        contexts[e.scan_id] = load_scan_context(out / f"{e.scan_id}.rsc")
    scored = P.score_scancontext_pairs(P.evaluation_pairs(labels, run.cfg), contexts)
    extra = {(s.id_i, s.id_j): [repr(1.0 - s.score), ""] for s in scored}
    _write_scores(out / "scores.csv", scored, extra)
    run.stamp("scancontext", pairs=len(scored))
    return f"scancontext: {len(contexts)} descriptors, {len(scored)} pairs scored"


def cmd_evaluate(run: Run) -> str:
    e = run.cfg.evaluation
    scored = _to_scored(_read_scores(run.require("detect", "scores.csv")))
    labels = {(lb.id_i, lb.id_j): lb for lb in read_labels(run.require("train", "labels.csv"))}
    closures = []
    for id_i, id_j, res in read_results_csv(run.require("close", "results.csv")):
        truth = labels[(id_i, id_j)].relative_pose
        closures.append(ClosureRecord(id_i, id_j, res.pose, truth, res.converged))
    extra = {}
    sc_scores = run.stage_dir("scancontext") / "scores.csv"
    if sc_scores.exists():
        sc = _to_scored(_read_scores(run.require("scancontext", "scores.csv")))
        extra["scancontext_map"] = map_over_thresholds(sc, e.t_start, e.t_step, e.t_count)[0]
    report = build_report(scored, closures, run.hash, e.t_start, e.t_step, e.t_count, extra)
    out = run.output("evaluate")
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.table_csv())
    run.stamp("evaluate")
    errs = "n/a" if report.r_eps_deg is None else \
        f"R_eps {report.r_eps_deg:.3f} deg, T_eps {report.t_eps_m:.3f} m"
    return f"evaluate: mAP {report.map:.4f} over {report.n_pairs} pairs, {errs}"


STAGES = {
    "simulate": cmd_simulate, "features": cmd_features, "keypoints": cmd_keypoints,
    "describe": cmd_describe, "train": cmd_train, "detect": cmd_detect, "close": cmd_close,
    "scancontext": cmd_scancontext, "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="radarlcd", description="Radar loop-closure detection pipeline")
    ap.add_argument("--config", type=Path, help="INI configuration file")
    ap.add_argument("--seed", type=int, help="override run.seed")
    ap.add_argument("--run-dir", type=Path, default=Path("run"), help="artifact directory")
    ap.add_argument("--force", action="store_true", help="accept upstream config-hash mismatches")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sub.add_parser(name)
    c = sub.add_parser("config", help="print the effective configuration")
    c.add_argument("--dump", action="store_true", help="print every setting as INI (default)")
    return ap


def _config_from(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.run.seed = args.seed
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from(args)
        if args.command == "config":
            sys.stdout.write(dump_config(cfg))
            return EXIT_OK
        print(STAGES[args.command](Run(args.run_dir, cfg, args.force)))
        return EXIT_OK
    except (ConfigError, ConfigHashMismatchError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifactError, BadMagicError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RadarLCDError, ValueError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
