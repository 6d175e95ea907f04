"""Command-line frontend.

Exit status is 0 on success, 1 when an input fails validation and 2 on a usage
error.  Diagnostics go to stderr; results go to the named output files or to
stdout.
"""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .errors import AggmorphError, InvalidConfig
from .mesh import mesh_metrics
from .registration import calibrate_scale, scale_morphology, stitch
from .report import (
    ENVELOPE_COLUMNS,
    FER_COLUMNS,
    ROUNDNESS_COLUMNS,
    MorphologyRecord,
    VolumePair,
    comparison_tables,
    mape,
    mpe,
    summarize_sample,
)
from .sfm import BAOptions, add_clutter, bundle_adjust, generate_turntable_scene, perturb_scene
from .silhouette import DEFAULT_RESOLUTION, mask_metrics, turntable_silhouettes

UNIT_TO_CM = {"cm": 1.0, "mm": 0.1, "in": 2.54}
# exact area / volume conversions; powers of the length factor would round
UNIT_TO_CM2 = {"cm": 1.0, "mm": 1e-2, "in": 6.4516}
UNIT_TO_CM3 = {"cm": 1.0, "mm": 1e-3, "in": 16.387064}
SILHOUETTE_COLUMNS = ("view", "azimuth_deg", "area", "perimeter", "l_max", "l_min", "feret_angle", "fer_2d",
                      "circularity")
MASK_COLUMNS = ("mask", "area", "perimeter", "l_max", "l_min", "feret_angle", "fer_2d", "circularity")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _emit(obj, out):
    if out:
        io.write_json(obj, out)
    else:
        sys.stdout.write(io.dumps(obj))


def _emit_csv(rows, columns, out):
    if out:
        io.write_csv(out, rows, columns)
    else:
        import csv

        wr = csv.writer(sys.stdout, lineterminator="\r\n")
        wr.writerow(columns)
        for r in rows:
            wr.writerow([io._cell(r.get(c)) for c in columns])


def thread_count():
    """Worker cap from AGGMORPH_THREADS (0 or unset means one per CPU)."""
    raw = os.environ.get("AGGMORPH_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise InvalidConfig(f"AGGMORPH_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise InvalidConfig("AGGMORPH_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


# -- subcommands -------------------------------------------------------------------------


def analyze_mesh_file(path, units="cm"):
    metrics = mesh_metrics(io.parse_mesh(path))
    return scale_morphology(metrics, UNIT_TO_CM[units], UNIT_TO_CM2[units], UNIT_TO_CM3[units])


def cmd_analyze_mesh(args):
    out = {"mesh": str(args.mesh), "source_units": args.units}
    out.update(analyze_mesh_file(args.mesh, args.units))
    _emit(out, args.output)


def cmd_silhouettes(args):
    mesh = io.parse_mesh(args.mesh)
    factor = UNIT_TO_CM[args.units]
    rows = turntable_silhouettes(mesh, args.views, args.elevation, args.resolution)
    for r in rows:
        r["azimuth_deg"] = 360.0 * r["view"] / args.views
        for k in ("perimeter", "l_max", "l_min"):
            r[k] *= factor
        r["area"] *= UNIT_TO_CM2[args.units]
    _emit_csv(rows, SILHOUETTE_COLUMNS, args.output)


def _mask_paths(directory):
    paths = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in (".pgm", ".pnm"))
    if not paths:
        raise InvalidConfig(f"no .pgm masks in {directory}")
    return paths


def analyze_mask_dir(directory, pixel_pitch=None):
    rows = []
    for p in _mask_paths(directory):
        row = {"mask": p.name}
        try:
            row.update(mask_metrics(io.parse_mask(p, pixel_pitch)))
        except AggmorphError as exc:
            raise _with_context(exc, p.name) from None
        rows.append(row)
    return rows


def cmd_analyze_masks(args):
    _emit_csv(analyze_mask_dir(args.directory, args.pixel_pitch), MASK_COLUMNS, args.output)


def _load_marker_pair(paths):
    if len(paths) == 2:
        return io.read_markers(paths[0])[0], io.read_markers(paths[1])[0]
    if len(paths) == 1:
        doc = io.read_json(paths[0])
        if "a" in doc and "b" in doc:
            return io.markers_from_dict(doc["a"], paths[0])[0], io.markers_from_dict(doc["b"], paths[0])[0]
    raise InvalidConfig("--markers needs two marker files, or one file with 'a' and 'b' marker sets")


def stitch_files(cloud_a, cloud_b, marker_paths):
    ma, mb = _load_marker_pair(marker_paths)
    return stitch(io.read_point_cloud(cloud_a), io.read_point_cloud(cloud_b), ma, mb)


def _stitch_report(res):
    t = res.transform
    return {
        "n_a": res.n_a,
        "n_b": res.n_b,
        "scale": t.scale,
        "rotation": t.rotation.tolist(),
        "translation": t.translation.tolist(),
        "residual_rms": res.residual_rms,
        "marker_residuals": [{"label": k[0], "role": k[1], "distance": v}
                             for k, v in sorted(res.marker_residuals.items())],
    }


def cmd_stitch(args):
    res = stitch_files(args.cloud_a, args.cloud_b, args.markers)
    io.write_point_cloud(args.output, res.points)
    _emit(_stitch_report(res), args.report)


def _read_distances(path):
    doc = io.read_json(path)
    if isinstance(doc, list):
        doc = {"known_distances": doc}
    return io.markers_from_dict(doc, path)[2]


def cmd_calibrate(args):
    _, bg, kd = io.read_markers(args.markers)
    if args.distances:
        kd = _read_distances(args.distances)
    cal = calibrate_scale(bg, kd)
    out = {"scale_cm_per_unit": cal.scale,
           "residuals_cm": [{"a_label": a, "b_label": b, "residual": r} for (a, b), r in cal.residuals.items()]}
    if args.apply:
        if not args.apply_output:
            raise UsageError("--apply needs --apply-output")
        pts = io.read_point_cloud(args.apply)
        io.write_point_cloud(args.apply_output, pts * cal.scale)
        out["applied_to"] = str(args.apply)
    _emit(out, args.output)


def _ba_options(d):
    opts = BAOptions()
    for k, v in (d or {}).items():
        if not hasattr(opts, k):
            raise InvalidConfig(f"unknown bundle-adjustment option {k!r}")
        setattr(opts, k, tuple(v) if isinstance(v, list) else v)
    return opts


def cmd_ba(args):
    scene, truth = io.read_scene(args.scene)
    opts = BAOptions(max_iters=args.max_iters)
    refined, rep = bundle_adjust(scene, opts)
    io.write_scene(refined, args.output, truth)
    _emit(rep.as_dict(), args.report)


def cmd_synth_scene(args):
    scene, truth = generate_turntable_scene(
        n_views=args.views, elevation_deg=args.elevation, camera_distance=args.distance,
        object_points=args.points, pixel_noise_std=args.noise, seed=args.seed)
    rng = np.random.default_rng(args.seed + 1)
    if args.clutter > 0:
        scene, _ = add_clutter(scene, args.clutter, seed=args.seed + 2, masked=not args.unmasked)
    if args.perturb:
        scene = perturb_scene(scene, rng)
    io.write_scene(scene, args.output, truth)


def cmd_validate(args):
    pairs = io.read_pairs(args.pairs)
    _emit({"n": len(pairs), "mpe_percent": mpe(pairs), "mape_percent": mape(pairs)}, args.output)


def write_comparison(records, outdir):
    tables = comparison_tables(records)
    outdir = Path(outdir)
    io.write_csv(outdir / "fer_comparison.csv", tables["fer"], FER_COLUMNS)
    io.write_csv(outdir / "roundness_comparison.csv", tables["roundness"], ROUNDNESS_COLUMNS)
    io.write_csv(outdir / "envelope.csv", tables["envelope"], ENVELOPE_COLUMNS)
    return tables


def cmd_compare(args):
    paths = sorted(Path(args.records).glob("*.json"))
    if not paths:
        raise InvalidConfig(f"no record files in {args.records}")
    records = []
    for p in paths:
        try:
            records.append(MorphologyRecord.from_dict(io.read_json(p)))
        except (KeyError, TypeError) as exc:
            raise io.MalformedRecord(p, "record", f"missing or invalid field: {exc}") from None
    write_comparison(records, args.output)


# -- manifest pipeline -----------------------------------------------------------------


def _load_manifest(path):
    doc = io.read_json(path)
    base = Path(path).resolve().parent
    settings = dict(doc.get("settings", {}))
    units = settings.get("units", "cm")
    if units not in UNIT_TO_CM:
        raise InvalidConfig(f"units must be one of {sorted(UNIT_TO_CM)}, got {units!r}")
    samples = doc.get("samples")
    if not isinstance(samples, list) or not samples:
        raise InvalidConfig("manifest has no samples")
    ids = [str(s.get("id", "")) for s in samples]
    if any(not i for i in ids):
        raise InvalidConfig("every sample needs an id")
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise InvalidConfig(f"duplicate sample ids: {dup}")

    def resolve(p):
        q = Path(p)
        return q if q.is_absolute() else base / q

    for s in samples:
        for key in ("mesh", "markers", "masks", "scene"):
            if key in s:
                s[key] = resolve(s[key])
                if not s[key].exists():
                    raise InvalidConfig(f"sample {s['id']}: {key} path {s[key]} does not exist")
        if "clouds" in s:
            s["clouds"] = [resolve(c) for c in s["clouds"]]
            for c in s["clouds"]:
                if not c.exists():
                    raise InvalidConfig(f"sample {s['id']}: cloud {c} does not exist")
    settings["output_dir"] = resolve(settings.get("output_dir", "aggmorph_out"))
    return settings, samples


def _run_sample(sample, settings):
    sid = str(sample["id"])
    out = Path(settings["output_dir"]) / "samples" / sid
    units = settings.get("units", "cm")
    factors = (UNIT_TO_CM[units], UNIT_TO_CM2[units], UNIT_TO_CM3[units])
    summary = {"sample_id": sid}
    try:
        if "scene" in sample:
            scene, truth = io.read_scene(sample["scene"])
            refined, rep = bundle_adjust(scene, _ba_options(settings.get("ba")))
            io.write_scene(refined, out / "scene_refined.json", truth)
            io.write_json(rep.as_dict(), out / "ba_report.json")
        if "clouds" in sample:
            if len(sample["clouds"]) != 2 or "markers" not in sample:
                raise InvalidConfig("stitching needs two clouds and a markers file with 'a' and 'b' sets")
            res = stitch_files(sample["clouds"][0], sample["clouds"][1], [sample["markers"]])
            io.write_point_cloud(out / "stitched.ply", res.points)
            io.write_json(_stitch_report(res), out / "stitch_report.json")
        if "markers" in sample:
            doc = io.read_json(sample["markers"])
            _, bg, kd = io.markers_from_dict(doc, sample["markers"])
            if bg and kd:
                cal = calibrate_scale(bg, kd)
                factors = (cal.scale, None, None)
                summary["scale_cm_per_unit"] = cal.scale
                io.write_json({"scale_cm_per_unit": cal.scale}, out / "scale.json")
        if "mesh" in sample:
            mesh = io.parse_mesh(sample["mesh"])
            metrics = scale_morphology(mesh_metrics(mesh), *factors)
            io.write_json(metrics, out / "mesh_metrics.json")
            if "masks" in sample:
                views = analyze_mask_dir(sample["masks"], sample.get("pixel_pitch"))
            else:
                views = turntable_silhouettes(mesh, int(settings.get("views", 12)),
                                              float(settings.get("elevation_deg", 35.0)),
                                              int(settings.get("resolution", DEFAULT_RESOLUTION)))
            rec = summarize_sample(sid, views, metrics)
            io.write_json(rec.as_dict(), Path(settings["output_dir"]) / "records" / f"{sid}.json")
            summary["record"] = rec
            summary["volume_cm3"] = metrics["volume"]
    except AggmorphError as exc:
        raise _with_context(exc, f"sample {sid}") from None
    return summary


def _with_context(exc, where):
    exc.args = (f"{where}: {exc}",)
    return exc


def run_manifest(path):
    settings, samples = _load_manifest(path)
    workers = min(thread_count(), len(samples))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda s: _run_sample(s, settings), samples))
    order = sorted(range(len(samples)), key=lambda k: str(samples[k]["id"]))
    outdir = Path(settings["output_dir"])
    records = [results[k]["record"] for k in order if "record" in results[k]]
    if records:
        write_comparison(records, outdir / "tables")
    pairs = [VolumePair(str(samples[k]["id"]), float(samples[k]["measured_cm3"]), results[k]["volume_cm3"])
             for k in order if "measured_cm3" in samples[k] and "volume_cm3" in results[k]]
    summary = {"samples": [str(samples[k]["id"]) for k in order], "output_dir": str(outdir)}
    if pairs:
        io.write_pairs(outdir / "volume_pairs.csv", pairs)
        summary.update(mpe_percent=mpe(pairs), mape_percent=mape(pairs), n_pairs=len(pairs))
    io.write_json(summary, outdir / "summary.json")
    return summary


def cmd_run(args):
    _emit(run_manifest(args.manifest), None)


# -- argument parsing --------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="aggmorph", description="Aggregate morphology from meshes, masks and turntable scenes.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("analyze-mesh", help="3D indicators of a watertight mesh")
    s.add_argument("mesh")
    s.add_argument("--units", choices=sorted(UNIT_TO_CM), default="cm", help="units of the mesh coordinates")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_analyze_mesh)

    s = sub.add_parser("silhouettes", help="2D indicators of rendered turntable views")
    s.add_argument("mesh")
    s.add_argument("--views", type=int, default=12)
    s.add_argument("--elevation", type=float, default=35.0)
    s.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION)
    s.add_argument("--units", choices=sorted(UNIT_TO_CM), default="cm")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_silhouettes)

    s = sub.add_parser("analyze-masks", help="2D indicators of PGM masks in a directory")
    s.add_argument("directory")
    s.add_argument("--pixel-pitch", type=float, help="cm per pixel")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_analyze_masks)

    s = sub.add_parser("stitch", help="merge two partial clouds through shared object markers")
    s.add_argument("cloud_a")
    s.add_argument("cloud_b")
    s.add_argument("--markers", nargs="+", required=True,
                   help="marker files for cloud a and b, or one file with 'a' and 'b' sets")
    s.add_argument("-o", "--output", required=True, help="merged PLY")
    s.add_argument("--report", help="residual report JSON (default stdout)")
    s.set_defaults(func=cmd_stitch)

    s = sub.add_parser("calibrate", help="cm-per-unit scale from background markers")
    s.add_argument("--markers", required=True)
    s.add_argument("--distances", help="known distances JSON (default: taken from the markers file)")
    s.add_argument("--apply", help="point cloud to rescale")
    s.add_argument("--apply-output", help="where the rescaled cloud goes")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("ba", help="masked bundle adjustment of a scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--max-iters", type=int, default=100)
    s.add_argument("-o", "--output", required=True, help="refined scene JSON")
    s.add_argument("--report", help="convergence report JSON (default stdout)")
    s.set_defaults(func=cmd_ba)

    s = sub.add_parser("synth-scene", help="synthetic turntable scene with ground truth")
    s.add_argument("--views", type=int, default=12)
    s.add_argument("--elevation", type=float, default=35.0)
    s.add_argument("--noise", type=float, default=0.0, help="pixel noise std")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--points", type=int, default=200)
    s.add_argument("--distance", type=float, default=60.0)
    s.add_argument("--clutter", type=float, default=0.0, help="fraction of extra background observations")
    s.add_argument("--unmasked", action="store_true", help="give clutter weight 1 instead of 0")
    s.add_argument("--perturb", action="store_true", help="perturb the initial cameras and points")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_synth_scene)

    s = sub.add_parser("validate", help="MPE/MAPE of reconstructed against measured volumes")
    s.add_argument("--pairs", required=True)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("compare", help="2D/3D comparison tables from record files")
    s.add_argument("--records", required=True)
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("run", help="full pipeline over a manifest")
    s.add_argument("--manifest", required=True)
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except AggmorphError as exc:
        print(f"aggmorph: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"aggmorph: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
