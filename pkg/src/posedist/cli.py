"""Batch command-line pipeline.

Subcommands:

- ``calibrate``: ingest keypoint JSON files from one static camera,
  concatenate all detections, and estimate focal lengths + ground plane
  (RANSAC by default, plain batch with ``--no-ransac``).
- ``distances``: per-frame 3-D ankle positions, pairwise distances with
  range bins, nearest neighbors, and optional safety flags.
- ``evaluate``: compare a distance report against labeled pairs
  (confusion matrix, precision/recall/F1, accuracy).
- ``grid``: export the estimated ground plane as projected grid polylines.
- ``simulate``: run the Monte Carlo studies and write CSV tables.

Exit codes: 0 success, 2 schema error, 3 estimation failure, 4 I/O error.
Every JSON/CSV artifact embeds the manifest that reproduces it.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

import numpy as np

from . import __version__, sim
from .core import (
    CameraIntrinsics,
    DistanceBin,
    EstimationFailure,
    frame_observations,
    load_keypoint_frames,
)
from .distortion import distorted_calibrate, undistort_division
from .robust import RansacConfig, ransac_calibrate
from .solver import calibrate_batch

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_ESTIMATION = 3
EXIT_IO = 4

SIX_FEET_M = 1.8288

BIN_ORDER = (DistanceBin.B0_1, DistanceBin.B1_2, DistanceBin.B2_4, DistanceBin.B4_INF)


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _write_json(payload: dict, path) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _parse_image_size(text: str):
    try:
        w, h = text.lower().split("x")
        w, h = int(w), int(h)
    except ValueError as exc:
        raise ValueError(f"--image-size expects WIDTHxHEIGHT, got {text!r}") from exc
    if w <= 0 or h <= 0:
        raise ValueError("--image-size dimensions must be positive")
    return w, h


def _centering_intrinsics(width: int, height: int) -> CameraIntrinsics:
    # Focal lengths are unknown before calibration; centering only needs
    # the principal point at the image center.
    return CameraIntrinsics(fx=1.0, fy=1.0, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


def _parse_bin(text: str) -> DistanceBin:
    for bin_ in DistanceBin:
        if text == bin_.name or text == bin_.label:
            return bin_
    raise ValueError(f"unknown distance bin {text!r}")


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    width, height = _parse_image_size(args.image_size)
    centering = _centering_intrinsics(width, height)
    observations = []
    skipped = []
    for path in args.keypoints:
        for frame in load_keypoint_frames(path):
            obs, _, frame_skipped = frame_observations(frame, centering, min_conf=args.min_conf)
            observations.extend(obs)
            skipped.extend(
                {"frame_id": frame.frame_id, "person": idx, "reason": reason}
                for idx, reason in frame_skipped
            )

    use_ransac = args.ransac and not args.distortion
    manifest = {
        "command": "calibrate",
        "inputs": list(args.keypoints),
        "image_size": f"{width}x{height}",
        "height_m": args.height_m,
        "fx_eq_fy": args.fx_eq_fy,
        "distortion": args.distortion,
        "ransac": (
            {
                "confidence": 0.99,
                "inlier_ratio_prior": 0.1,
                "inlier_threshold_px": args.inlier_px,
                "seed": args.seed,
            }
            if use_ransac
            else None
        ),
        "min_conf": args.min_conf,
        "tool_version": __version__,
    }

    inliers = None
    distortion_k = None
    if args.distortion:
        # the division-model solver runs in batch mode only
        result, model = distorted_calibrate(observations, args.height_m, fx_eq_fy=args.fx_eq_fy)
        distortion_k = model.k
    elif use_ransac:
        config = RansacConfig(inlier_threshold_px=args.inlier_px, rng_seed=args.seed)
        result, mask = ransac_calibrate(observations, args.height_m, config, fx_eq_fy=args.fx_eq_fy)
        inliers = {"count": int(mask.sum()), "mask": [bool(b) for b in mask]}
    else:
        result = calibrate_batch(observations, args.height_m, fx_eq_fy=args.fx_eq_fy)

    payload = {
        "calibration": {
            "fx": result.intrinsics.fx,
            "fy": result.intrinsics.fy,
            "cx": width / 2.0,
            "cy": height / 2.0,
            "width": width,
            "height": height,
            "plane_normal": result.plane.normal.tolist(),
            "plane_rho_m": result.plane.rho,
            "mu": result.mu,
            "distortion_k": distortion_k,
            "residuals": {
                "vanishing": result.residuals["vanishing"],
                "focal": result.residuals["focal"],
            },
        },
        "observation_count": len(observations),
        "inliers": inliers,
        "skipped": skipped,
        "manifest": manifest,
        "created_at": _utc_now(),
    }
    _write_json(payload, args.output)
    return EXIT_OK


def load_calibration(path):
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        cal = data["calibration"]
        intr = CameraIntrinsics(
            fx=float(cal["fx"]),
            fy=float(cal["fy"]),
            cx=float(cal["cx"]),
            cy=float(cal["cy"]),
            width=int(cal["width"]),
            height=int(cal["height"]),
        )
        normal = np.asarray(cal["plane_normal"], dtype=float)
        rho = float(cal["plane_rho_m"])
        distortion_k = cal.get("distortion_k") or 0.0
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed calibration file {path}: {exc}") from exc
    return intr, normal, rho, float(distortion_k)


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------


def _frame_positions(frame, intr, normal, rho, min_conf, distortion_k=0.0):
    """3-D ankle points via ground-plane intersection, with skip records."""
    observations, kept, skipped = frame_observations(frame, intr, min_conf=min_conf)
    people = []
    skip_records = [
        {"person": idx, "reason": reason} for idx, reason in skipped
    ]
    for obs, idx in zip(observations, kept):
        ankle = np.array([obs.ankle_center.u, obs.ankle_center.v])
        if distortion_k:
            ankle = undistort_division(ankle[None, :], distortion_k)[0]
        ray = np.array([ankle[0] / intr.fx, ankle[1] / intr.fy, 1.0])
        denom = float(normal @ ray)
        if denom >= 0:
            skip_records.append({"person": idx, "reason": "ankle ray does not meet the ground plane"})
            continue
        lam = -rho / denom
        position = lam * ray
        people.append(
            {
                "person": idx,
                "ankle_image": [obs.ankle_center.u + intr.cx, obs.ankle_center.v + intr.cy],
                "position_m": position.tolist(),
            }
        )
    return people, skip_records


def frame_distance_report(
    frame, intr, normal, rho, min_conf=0.5, threshold_m=None, distortion_k=0.0, units="m"
) -> dict:
    people, skip_records = _frame_positions(frame, intr, normal, rho, min_conf, distortion_k)
    positions = np.array([p["position_m"] for p in people]) if people else np.zeros((0, 3))
    pairs = []
    nearest = []
    unsafe = set()
    if len(people) >= 2:
        diff = positions[:, None, :] - positions[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        for a in range(len(people)):
            for b in range(a + 1, len(people)):
                d = float(dist[a, b])
                pair = {
                    "i": people[a]["person"],
                    "j": people[b]["person"],
                    "distance_m": d,
                    "bin": DistanceBin.from_distance(d).name,
                }
                if units == "ft":
                    pair["distance_ft"] = d / 0.3048
                pairs.append(pair)
        np.fill_diagonal(dist, np.inf)
        for a in range(len(people)):
            b = int(np.argmin(dist[a]))
            entry = {
                "person": people[a]["person"],
                "neighbor": people[b]["person"],
                "distance_m": float(dist[a, b]),
            }
            if units == "ft":
                entry["distance_ft"] = float(dist[a, b]) / 0.3048
            nearest.append(entry)
            if threshold_m is not None and dist[a, b] < threshold_m:
                unsafe.add(people[a]["person"])
    report = {
        "frame_id": frame.frame_id,
        "people": people,
        "skipped": skip_records,
        "pairs": pairs,
        "nearest": nearest,
    }
    if threshold_m is not None:
        report["unsafe_persons"] = sorted(unsafe)
    return report


def cmd_distances(args) -> int:
    intr, normal, rho, distortion_k = load_calibration(args.calibration)
    frames = load_keypoint_frames(args.keypoints)
    reports = [
        frame_distance_report(
            frame,
            intr,
            normal,
            rho,
            min_conf=args.min_conf,
            threshold_m=args.threshold_m,
            distortion_k=distortion_k,
            units=args.units,
        )
        for frame in frames
    ]
    payload = {
        "frames": reports,
        "manifest": {
            "command": "distances",
            "inputs": [args.keypoints],
            "calibration": args.calibration,
            "threshold_m": args.threshold_m,
            "min_conf": args.min_conf,
            "units": args.units,
            "tool_version": __version__,
        },
        "created_at": _utc_now(),
    }
    _write_json(payload, args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def load_labels(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ValueError("labels file must be a JSON array")
    labels = []
    for i, entry in enumerate(data):
        try:
            a, b = int(entry["i"]), int(entry["j"])
            if a == b:
                raise ValueError("label references a person pair with i == j")
            labels.append(
                {
                    "frame_id": str(entry["frame_id"]),
                    "i": min(a, b),
                    "j": max(a, b),
                    "label": _parse_bin(entry["label"]),
                }
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"label {i}: {exc}") from exc
    return labels


def build_evaluation(report: dict, labels: list) -> dict:
    predicted = {}
    for frame in report["frames"]:
        for pair in frame["pairs"]:
            key = (frame["frame_id"], min(pair["i"], pair["j"]), max(pair["i"], pair["j"]))
            predicted[key] = _parse_bin(pair["bin"])

    index = {b: i for i, b in enumerate(BIN_ORDER)}
    confusion = np.zeros((4, 4), dtype=int)
    unmatched = []
    for label in labels:
        key = (label["frame_id"], label["i"], label["j"])
        if key not in predicted:
            unmatched.append({"frame_id": key[0], "i": key[1], "j": key[2]})
            continue
        confusion[index[label["label"]], index[predicted[key]]] += 1

    total = int(confusion.sum())
    per_class = {}
    for b, i in index.items():
        tp = int(confusion[i, i])
        support = int(confusion[i].sum())
        predicted_count = int(confusion[:, i].sum())
        precision = tp / predicted_count if predicted_count else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[b.name] = {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "support": support,
        }
    return {
        "confusion": confusion.tolist(),
        "bin_order": [b.name for b in BIN_ORDER],
        "per_class": per_class,
        "accuracy": float(np.trace(confusion) / total) if total else 0.0,
        "matched": total,
        "unmatched": unmatched,
    }


def format_evaluation(evaluation: dict) -> str:
    lines = []
    header = "truth \\ pred".ljust(14) + "".join(b.ljust(8) for b in evaluation["bin_order"])
    lines.append(header)
    for i, name in enumerate(evaluation["bin_order"]):
        row = name.ljust(14) + "".join(str(c).ljust(8) for c in evaluation["confusion"][i])
        lines.append(row)
    lines.append("")
    lines.append("class".ljust(14) + "precision".ljust(11) + "recall".ljust(11) + "f1".ljust(11) + "support")
    for name in evaluation["bin_order"]:
        stats = evaluation["per_class"][name]
        lines.append(
            name.ljust(14)
            + f"{stats['precision']:.3f}".ljust(11)
            + f"{stats['recall']:.3f}".ljust(11)
            + f"{stats['f1']:.3f}".ljust(11)
            + str(stats["support"])
        )
    lines.append("")
    lines.append(f"accuracy: {evaluation['accuracy']:.4f} over {evaluation['matched']} pairs")
    if evaluation["unmatched"]:
        lines.append(f"unmatched labels: {len(evaluation['unmatched'])}")
    return "\n".join(lines)


def cmd_evaluate(args) -> int:
    with open(args.report, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    if "frames" not in report:
        raise ValueError("distance report is missing its frames section")
    labels = load_labels(args.labels)
    evaluation = build_evaluation(report, labels)
    print(format_evaluation(evaluation))
    payload = {
        "evaluation": evaluation,
        "manifest": {
            "command": "evaluate",
            "inputs": [args.report, args.labels],
            "tool_version": __version__,
        },
        "created_at": _utc_now(),
    }
    if args.output:
        _write_json(payload, args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


def plane_basis(normal: np.ndarray):
    """Orthonormal in-plane basis anchored to the camera x-axis."""
    n = np.asarray(normal, dtype=float)
    e1 = np.array([1.0, 0.0, 0.0]) - n[0] * n
    norm = np.linalg.norm(e1)
    if norm < 1e-6:  # camera x-axis parallel to the normal; anchor to y instead
        e1 = np.array([0.0, 1.0, 0.0]) - n[1] * n
        norm = np.linalg.norm(e1)
    e1 /= norm
    e2 = np.cross(n, e1)
    return e1, e2


def grid_overlay(intr: CameraIntrinsics, normal, rho, cell_m=2.0, extent_m=20.0, samples_per_cell=8) -> dict:
    """Project a plane-aligned grid into the image as clipped polylines."""
    n = np.asarray(normal, dtype=float)
    if cell_m <= 0 or extent_m <= 0 or extent_m < cell_m:
        raise ValueError("grid needs 0 < cell_m <= extent_m")
    e1, e2 = plane_basis(n)
    center = -rho * n
    cells = int(round(extent_m / cell_m))
    offsets = (np.arange(cells + 1) - cells / 2.0) * cell_m
    ts = np.linspace(-extent_m / 2.0, extent_m / 2.0, cells * samples_per_cell + 1)
    lines = []
    for axis_name, along, across in (("e1", e1, e2), ("e2", e2, e1)):
        for offset in offsets:
            pts = center + ts[:, None] * along + offset * across
            z = pts[:, 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                u = intr.fx * pts[:, 0] / z + intr.cx
                v = intr.fy * pts[:, 1] / z + intr.cy
            ok = (z > 1e-9) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
            start = None
            for i in range(len(ts) + 1):
                inside = i < len(ts) and ok[i]
                if inside and start is None:
                    start = i
                elif not inside and start is not None:
                    if i - start >= 2:
                        lines.append(
                            {
                                "axis": axis_name,
                                "offset_m": float(offset),
                                "points": np.column_stack([u[start:i], v[start:i]]).tolist(),
                            }
                        )
                    start = None
    if not lines:
        return {
            "lines": [],
            "warning": "grid not visible (ground plane nearly parallel to the optical axis "
            "or outside the field of view)",
        }
    return {"lines": lines}


def cmd_grid(args) -> int:
    intr, normal, rho, _ = load_calibration(args.calibration)
    overlay = grid_overlay(
        intr, normal, rho, cell_m=args.cell_m, extent_m=args.extent_m, samples_per_cell=args.samples_per_cell
    )
    payload = {
        "overlay": overlay,
        "manifest": {
            "command": "grid",
            "calibration": args.calibration,
            "cell_m": args.cell_m,
            "extent_m": args.extent_m,
            "samples_per_cell": args.samples_per_cell,
            "tool_version": __version__,
        },
        "created_at": _utc_now(),
    }
    _write_json(payload, args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

_STUDIES = {
    "noisefree": sim.study_noise_free,
    "noise": sim.study_noise,
    "height": sim.study_height,
    "count": sim.study_count,
    "distortion": sim.study_distortion,
}


def cmd_simulate(args) -> int:
    runner = _STUDIES[args.study]
    rows = runner(trials=args.trials, seed=args.seed)
    os.makedirs(args.output_dir, exist_ok=True)
    csv_path = os.path.join(args.output_dir, f"{args.study}.csv")
    sim.write_study_csv(rows, csv_path)
    manifest = {
        "command": "simulate",
        "study": args.study,
        "trials": args.trials,
        "seed": args.seed,
        "csv": csv_path,
        "tool_version": __version__,
    }
    _write_json(
        {"manifest": manifest, "created_at": _utc_now()},
        os.path.join(args.output_dir, f"{args.study}_manifest.json"),
    )
    print(f"wrote {csv_path} ({len(rows)} rows)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posedist",
        description="Camera auto-calibration and person distance estimation from pose keypoints.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="estimate focal lengths and ground plane")
    cal.add_argument("keypoints", nargs="+", help="keypoint JSON file(s)")
    cal.add_argument("--image-size", required=True, help="WIDTHxHEIGHT in pixels")
    cal.add_argument("--height-m", type=float, default=1.4, help="ankle-shoulder height prior")
    cal.add_argument("--fx-eq-fy", action=argparse.BooleanOptionalAction, default=False)
    cal.add_argument("--ransac", action=argparse.BooleanOptionalAction, default=True)
    cal.add_argument(
        "--distortion",
        action=argparse.BooleanOptionalAction,
        default=False,
        help="jointly estimate division-model lens distortion (batch mode, no RANSAC)",
    )
    cal.add_argument("--inlier-px", type=float, default=5.0)
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--min-conf", type=float, default=0.5)
    cal.add_argument("-o", "--output", default="-")
    cal.set_defaults(func=cmd_calibrate)

    dist = sub.add_parser("distances", help="per-frame 3-D positions and pair distances")
    dist.add_argument("keypoints", help="keypoint JSON file")
    dist.add_argument("--calibration", required=True, help="calibration JSON from 'calibrate'")
    dist.add_argument("--threshold-m", type=float, default=None, help="flag people closer than this")
    dist.add_argument("--min-conf", type=float, default=0.5)
    dist.add_argument("--units", choices=("m", "ft"), default="m", help="extra display unit for distances")
    dist.add_argument("-o", "--output", default="-")
    dist.set_defaults(func=cmd_distances)

    ev = sub.add_parser("evaluate", help="score a distance report against labeled pairs")
    ev.add_argument("report", help="distance report JSON")
    ev.add_argument("labels", help="labeled pairs JSON")
    ev.add_argument("-o", "--output", default=None)
    ev.set_defaults(func=cmd_evaluate)

    grid = sub.add_parser("grid", help="export the ground plane as projected grid polylines")
    grid.add_argument("--calibration", required=True)
    grid.add_argument("--cell-m", type=float, default=2.0)
    grid.add_argument("--extent-m", type=float, default=20.0)
    grid.add_argument("--samples-per-cell", type=int, default=8)
    grid.add_argument("-o", "--output", default="-")
    grid.set_defaults(func=cmd_grid)

    simp = sub.add_parser("simulate", help="run a Monte Carlo study and write CSV tables")
    simp.add_argument("--study", required=True, choices=sorted(_STUDIES))
    simp.add_argument("--trials", type=int, default=500)
    simp.add_argument("--seed", type=int, default=0)
    simp.add_argument("--output-dir", default=".")
    simp.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EstimationFailure as exc:
        print(f"estimation failed ({exc.kind}): {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, json.JSONDecodeError, KeyError) as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
