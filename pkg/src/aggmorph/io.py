"""Readers and writers for meshes, point clouds, masks, scenes, markers and tables.

All writers go through :func:`atomic_write`, so a failed write never leaves a
truncated file at the destination.  Floats are written with ``repr`` (the
shortest string that round-trips).
"""

import csv
import io
import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import MalformedRecord, NonTriangular, TruncatedFile, UnsupportedFormat
from .mesh import TriangleMesh, repair_orientation, validate_mesh
from .registration import BackgroundMarker, KnownDistance, ObjectMarker
from .report import VolumePair
from .sfm import CameraParams, SfmScene
from .silhouette import RasterMask


@contextmanager
def atomic_write(path, mode="w", newline=None):
    """Write to a temporary file next to ``path`` and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        kw = {} if "b" in mode else {"encoding": "utf-8", "newline": newline}
        with os.fdopen(fd, mode, **kw) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


# -- meshes ---------------------------------------------------------------------------


def _suffix(path):
    return Path(path).suffix.lower()


def parse_mesh(path, repair=True):
    """Read a triangle mesh from OBJ or PLY and validate it.

    With ``repair`` set, flipped faces and inward-facing patches are
    reoriented first; without it a mis-oriented file raises.
    """
    ext = _suffix(path)
    if ext == ".obj":
        v, f = _read_obj(path)
    elif ext == ".ply":
        v, f = _read_ply(path, need_faces=True)
    else:
        raise UnsupportedFormat(f"{path}: unknown mesh extension {ext!r}")
    mesh = TriangleMesh(v, f)
    if repair:
        mesh = repair_orientation(mesh)
    validate_mesh(mesh)
    return mesh


def _read_obj(path):
    verts, faces = [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split("#", 1)[0].split()
            if not tok:
                continue
            if tok[0] == "v":
                try:
                    xyz = [float(t) for t in tok[1:4]]
                except ValueError:
                    raise MalformedRecord(path, f"line {lineno}", "non-numeric vertex coordinate") from None
                if len(xyz) < 3:
                    raise MalformedRecord(path, f"line {lineno}", "vertex needs 3 coordinates")
                verts.append(xyz)
            elif tok[0] == "f":
                refs = tok[1:]
                if len(refs) > 3:
                    raise NonTriangular(f"{path}: line {lineno}: face with {len(refs)} vertices")
                if len(refs) < 3:
                    raise MalformedRecord(path, f"line {lineno}", "face needs 3 vertices")
                idx = []
                for r in refs:
                    try:
                        k = int(r.split("/", 1)[0])
                    except ValueError:
                        raise MalformedRecord(path, f"line {lineno}", f"bad vertex reference {r!r}") from None
                    k = k - 1 if k > 0 else len(verts) + k
                    if k < 0 or k >= len(verts) or r.startswith("0"):
                        raise MalformedRecord(path, f"line {lineno}", f"vertex reference {r!r} out of range")
                    idx.append(k)
                faces.append(idx)
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def write_obj(mesh, path):
    with atomic_write(path) as fh:
        for x, y, z in np.asarray(mesh.vertices, dtype=float).tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for a, b, c in (np.asarray(mesh.faces) + 1).tolist():
            fh.write(f"f {a} {b} {c}\n")


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _ply_header(path, fh):
    if fh.readline().strip() != b"ply":
        raise UnsupportedFormat(f"{path}: missing 'ply' magic")
    fmt = None
    elements = []  # [name, count, [(prop, dtype) or (prop, ("list", count_t, item_t))]]
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise TruncatedFile(f"{path}: header not terminated")
        tok = raw.decode("ascii", errors="replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            fmt = tok[1] if len(tok) > 1 else None
        elif tok[0] == "element" and len(tok) == 3:
            try:
                elements.append([tok[1], int(tok[2]), []])
            except ValueError:
                raise MalformedRecord(path, f"line {lineno}", "bad element count") from None
        elif tok[0] == "property" and elements:
            try:
                if tok[1] == "list":
                    elements[-1][2].append((tok[4], ("list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]])))
                else:
                    elements[-1][2].append((tok[2], _PLY_TYPES[tok[1]]))
            except (KeyError, IndexError):
                raise MalformedRecord(path, f"line {lineno}", f"unsupported property {raw.strip()!r}") from None
        else:
            raise MalformedRecord(path, f"line {lineno}", f"unexpected header record {tok[0]!r}")
    if fmt not in ("ascii", "binary_little_endian"):
        raise UnsupportedFormat(f"{path}: PLY format {fmt!r} not supported")
    return fmt, elements


def _read_ply(path, need_faces):
    with open(path, "rb") as fh:
        fmt, elements = _ply_header(path, fh)
        body_start = fh.tell()
        body = fh.read()
    data = {}
    if fmt == "ascii":
        lines = body.decode("ascii", errors="replace").splitlines()
        pos = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                while pos < len(lines) and not lines[pos].strip():
                    pos += 1
                if pos >= len(lines):
                    raise TruncatedFile(f"{path}: element {name!r} ends early")
                try:
                    vals = [float(t) for t in lines[pos].split()]
                except ValueError:
                    raise MalformedRecord(path, f"body line {pos + 1}", "non-numeric value") from None
                rows.append(_split_ascii_row(path, pos, vals, props))
                pos += 1
            data[name] = rows
    else:
        off = 0
        for name, count, props in elements:
            rows, off = _read_binary_element(path, body, off, count, props, body_start)
            data[name] = rows
    return _ply_arrays(path, elements, data, need_faces)


def _split_ascii_row(path, pos, vals, props):
    out = {}
    k = 0
    for pname, ptype in props:
        if isinstance(ptype, tuple):
            if k >= len(vals):
                raise MalformedRecord(path, f"body line {pos + 1}", "missing list length")
            n = int(vals[k])
            out[pname] = vals[k + 1:k + 1 + n]
            if len(out[pname]) != n:
                raise MalformedRecord(path, f"body line {pos + 1}", "list shorter than its length")
            k += 1 + n
        else:
            if k >= len(vals):
                raise MalformedRecord(path, f"body line {pos + 1}", f"missing property {pname!r}")
            out[pname] = vals[k]
            k += 1
    return out


def _read_binary_element(path, body, off, count, props, base):
    has_list = any(isinstance(t, tuple) for _, t in props)
    if not has_list:
        dt = np.dtype([(p, "<" + t) for p, t in props])
        end = off + dt.itemsize * count
        if end > len(body):
            raise TruncatedFile(f"{path}: binary body ends at byte {base + len(body)}, expected {base + end}")
        arr = np.frombuffer(body, dtype=dt, count=count, offset=off)
        return {p: arr[p].astype(float) for p, _ in props}, end
    # faces with lists: try the common fixed-size fast path, else walk records
    rows = []
    for _ in range(count):
        rec = {}
        for pname, ptype in props:
            if isinstance(ptype, tuple):
                ct, it = np.dtype("<" + ptype[1]), np.dtype("<" + ptype[2])
                if off + ct.itemsize > len(body):
                    raise TruncatedFile(f"{path}: list length missing at byte {base + off}")
                n = int(np.frombuffer(body, dtype=ct, count=1, offset=off)[0])
                off += ct.itemsize
                if off + n * it.itemsize > len(body):
                    raise TruncatedFile(f"{path}: list truncated at byte {base + off}")
                rec[pname] = np.frombuffer(body, dtype=it, count=n, offset=off).tolist()
                off += n * it.itemsize
            else:
                t = np.dtype("<" + ptype)
                if off + t.itemsize > len(body):
                    raise TruncatedFile(f"{path}: record truncated at byte {base + off}")
                rec[pname] = float(np.frombuffer(body, dtype=t, count=1, offset=off)[0])
                off += t.itemsize
        rows.append(rec)
    return rows, off


def _ply_arrays(path, elements, data, need_faces):
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise MalformedRecord(path, "header", "no vertex element")
    vrows = data["vertex"]
    try:
        if isinstance(vrows, dict):
            v = np.stack([vrows["x"], vrows["y"], vrows["z"]], axis=1)
        else:
            v = np.array([[r["x"], r["y"], r["z"]] for r in vrows], dtype=float).reshape(-1, 3)
    except KeyError:
        raise MalformedRecord(path, "header", "vertex element lacks x/y/z") from None
    if not need_faces:
        return v, None
    if "face" not in names:
        raise MalformedRecord(path, "header", "no face element")
    props = dict(next(e for e in elements if e[0] == "face")[2])
    key = "vertex_indices" if "vertex_indices" in props else "vertex_index" if "vertex_index" in props else None
    if key is None:
        raise MalformedRecord(path, "header", "face element lacks vertex_indices")
    faces = []
    for k, r in enumerate(data["face"]):
        idx = r[key]
        if len(idx) != 3:
            raise NonTriangular(f"{path}: face {k} has {len(idx)} vertices")
        faces.append([int(i) for i in idx])
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if len(f) and (f.min() < 0 or f.max() >= len(v)):
        bad = int(np.nonzero((f < 0) | (f >= len(v)))[0][0])
        raise MalformedRecord(path, f"face {bad}", "vertex index out of range")
    return v, f


def write_ply(path, vertices, faces=None, binary=True):
    """Write vertices (as doubles) and optional triangles to PLY."""
    v = np.asarray(vertices, dtype="<f8").reshape(-1, 3)
    f = None if faces is None else np.asarray(faces, dtype="<i4").reshape(-1, 3)
    head = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
            f"element vertex {len(v)}", "property double x", "property double y", "property double z"]
    if f is not None:
        head += [f"element face {len(f)}", "property list uchar int vertex_indices"]
    head.append("end_header")
    with atomic_write(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        if binary:
            fh.write(v.tobytes())
            if f is not None:
                rec = np.zeros(len(f), dtype=[("n", "u1"), ("i", "<i4", (3,))])
                rec["n"] = 3
                rec["i"] = f
                fh.write(rec.tobytes())
        else:
            buf = io.StringIO()
            for x, y, z in v.tolist():
                buf.write(f"{x!r} {y!r} {z!r}\n")
            if f is not None:
                for a, b, c in f.tolist():
                    buf.write(f"3 {a} {b} {c}\n")
            fh.write(buf.getvalue().encode("ascii"))


def write_mesh(mesh, path, binary=True):
    ext = _suffix(path)
    if ext == ".obj":
        write_obj(mesh, path)
    elif ext == ".ply":
        write_ply(path, mesh.vertices, mesh.faces, binary=binary)
    else:
        raise UnsupportedFormat(f"{path}: unknown mesh extension {ext!r}")


def read_point_cloud(path):
    """Points from a PLY (faces ignored) or a whitespace-separated XYZ text file."""
    ext = _suffix(path)
    if ext == ".ply":
        return _read_ply(path, need_faces=False)[0]
    if ext in (".xyz", ".txt", ".csv"):
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                tok = line.split("#", 1)[0].replace(",", " ").split()
                if not tok:
                    continue
                try:
                    rows.append([float(t) for t in tok[:3]])
                except ValueError:
                    raise MalformedRecord(path, f"line {lineno}", "non-numeric coordinate") from None
                if len(rows[-1]) != 3:
                    raise MalformedRecord(path, f"line {lineno}", "point needs 3 coordinates")
        return np.array(rows, dtype=float).reshape(-1, 3)
    raise UnsupportedFormat(f"{path}: unknown point-cloud extension {ext!r}")


def write_point_cloud(path, points, binary=True):
    """PLY for ``.ply``; one ``x y z`` (or ``x,y,z`` for ``.csv``) row per point otherwise."""
    ext = _suffix(path)
    if ext == ".ply":
        write_ply(path, points, None, binary=binary)
        return
    if ext not in (".xyz", ".txt", ".csv"):
        raise UnsupportedFormat(f"{path}: unknown point-cloud extension {ext!r}")
    sep = "," if ext == ".csv" else " "
    pts = np.asarray(points, dtype=float).reshape(-1, 3).tolist()
    with atomic_write(path) as fh:
        fh.write("".join(sep.join(repr(v) for v in p) + "\n" for p in pts))


# -- masks ----------------------------------------------------------------------------


def _pgm_tokens(path, data, n):
    """First ``n`` header tokens of a PNM file and the offset just past them."""
    toks, i = [], 2
    while len(toks) < n:
        while i < len(data) and (chr(data[i]).isspace() or data[i] == ord("#")):
            if data[i] == ord("#"):
                while i < len(data) and data[i] not in (10, 13):
                    i += 1
            else:
                i += 1
        j = i
        while j < len(data) and not chr(data[j]).isspace() and data[j] != ord("#"):
            j += 1
        if j == i:
            raise TruncatedFile(f"{path}: header ends early")
        toks.append(data[i:j])
        i = j
    return toks, i


def parse_mask(path, pixel_pitch=None):
    """Binary mask from a P2 or P5 graymap; foreground where value / maxval >= 0.5."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise UnsupportedFormat(f"{path}: not a P2/P5 graymap (magic {magic!r})")
    toks, i = _pgm_tokens(path, data, 3)
    try:
        w, h, maxval = (int(t) for t in toks)
    except ValueError:
        raise MalformedRecord(path, "header", "non-integer size or maxval") from None
    if w <= 0 or h <= 0:
        raise MalformedRecord(path, "header", "empty image")
    if not 0 < maxval <= 65535:
        raise UnsupportedFormat(f"{path}: maxval {maxval} outside 1..65535")
    if magic == b"P5":
        start = i + 1
        dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = w * h * dt.itemsize
        if len(data) - start < need:
            raise TruncatedFile(f"{path}: {len(data) - start} data bytes, expected {need}")
        vals = np.frombuffer(data, dtype=dt, count=w * h, offset=start).astype(np.int64)
    else:
        tok = _strip_comments(data[i:]).split()
        if len(tok) < w * h:
            raise TruncatedFile(f"{path}: {len(tok)} samples, expected {w * h}")
        try:
            vals = np.array([int(t) for t in tok[:w * h]], dtype=np.int64)
        except ValueError:
            raise MalformedRecord(path, "body", "non-integer sample") from None
    if vals.max(initial=0) > maxval or vals.min(initial=0) < 0:
        raise MalformedRecord(path, "body", "sample outside 0..maxval")
    pixels = (2 * vals >= maxval).reshape(h, w)
    return RasterMask(pixels, pixel_pitch)


def _strip_comments(b):
    return b"\n".join(line.split(b"#", 1)[0] for line in b.splitlines())


def write_pgm(mask, path, binary=True):
    pix = np.asarray(getattr(mask, "pixels", mask), dtype=bool)
    h, w = pix.shape
    vals = pix.astype(np.uint8) * 255
    with atomic_write(path, "wb") as fh:
        if binary:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(vals.tobytes())
        else:
            fh.write(f"P2\n{w} {h}\n255\n".encode("ascii"))
            fh.write("\n".join(" ".join(str(x) for x in row) for row in vals.tolist()).encode("ascii") + b"\n")


# -- JSON documents -------------------------------------------------------------------


def dumps(obj):
    """Deterministic JSON: sorted keys off (field order is meaningful), repr floats."""
    return json.dumps(_plain(obj), indent=2, allow_nan=False) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def write_json(obj, path):
    text = dumps(obj)
    with atomic_write(path) as fh:
        fh.write(text)


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(path, f"line {exc.lineno}", exc.msg) from None


def scene_to_dict(scene, truth=None):
    def cams(cs):
        return [{"focal": c.focal, "principal": list(c.principal), "rotation": c.rotation.tolist(),
                 "translation": c.translation.tolist()} for c in cs]

    out = {
        "cameras": cams(scene.cameras),
        "points": scene.points.tolist(),
        "observations": [
            {"camera": int(i), "point": int(j), "pixel": [float(u), float(v)], "weight": float(w)}
            for i, j, (u, v), w in zip(scene.cam_idx, scene.pt_idx, scene.pixels, scene.weights)
        ],
    }
    if truth is not None:
        out["ground_truth"] = {"cameras": cams(truth.cameras), "points": truth.points.tolist()}
    return out


def scene_from_dict(d, path="<scene>"):
    """Returns ``(scene, truth_or_None)``.

    The truth scene reuses the observations of the points it knows about;
    appended clutter points have no ground truth.
    """
    try:
        def cams(cs):
            return [CameraParams(c["focal"], c["principal"], c["rotation"], c["translation"]) for c in cs]

        obs = d["observations"]
        ci = [o["camera"] for o in obs]
        pj = [o["point"] for o in obs]
        px = np.array([o["pixel"] for o in obs], dtype=float).reshape(-1, 2)
        w = [o.get("weight", 1.0) for o in obs]
        scene = SfmScene(cams(d["cameras"]), d["points"], ci, pj, px, w)
        truth = None
        if "ground_truth" in d:
            g = d["ground_truth"]
            gp = np.asarray(g["points"], dtype=float).reshape(-1, 3)
            keep = np.asarray(pj, dtype=np.int64) < len(gp)  # clutter points have no truth
            truth = SfmScene(cams(g["cameras"]), gp, np.asarray(ci)[keep], np.asarray(pj)[keep], px[keep],
                             np.asarray(w, dtype=float)[keep])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecord(path, "scene", f"missing or invalid field: {exc}") from None
    return scene, truth


def read_scene(path):
    return scene_from_dict(read_json(path), path)


def write_scene(scene, path, truth=None):
    write_json(scene_to_dict(scene, truth), path)


def markers_from_dict(d, path="<markers>"):
    """``(object_markers, background_markers, known_distances)`` from the marker schema."""
    try:
        obj = [ObjectMarker(m["label"], m["head"], m["tail"]) for m in d.get("object_markers", [])]
        bg = [BackgroundMarker(m["label"], m["position"]) for m in d.get("background_markers", [])]
        kd = [KnownDistance(k["a_label"], k["b_label"], float(k["cm"])) for k in d.get("known_distances", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecord(path, "markers", f"missing or invalid field: {exc}") from None
    return obj, bg, kd


def markers_to_dict(object_markers=(), background_markers=(), known_distances=()):
    return {
        "object_markers": [{"label": m.label, "head": list(m.head), "tail": list(m.tail)} for m in object_markers],
        "background_markers": [{"label": m.label, "position": list(m.position)} for m in background_markers],
        "known_distances": [{"a_label": k.a_label, "b_label": k.b_label, "cm": k.cm} for k in known_distances],
    }


def read_markers(path):
    return markers_from_dict(read_json(path), path)


def write_markers(path, object_markers=(), background_markers=(), known_distances=()):
    write_json(markers_to_dict(object_markers, background_markers, known_distances), path)


# -- CSV tables ------------------------------------------------------------------------

PAIRS_HEADER = ("sample_id", "measured_cm3", "reconstructed_cm3")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, rows, columns):
    """RFC 4180 CSV with a header row and fixed column order; None -> empty cell."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\r\n")
    wr.writerow(columns)
    for r in rows:
        wr.writerow([_cell(r.get(c)) for c in columns])
    with atomic_write(path, newline="") as fh:
        fh.write(buf.getvalue())


def read_pairs(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or tuple(h.strip() for h in header) != PAIRS_HEADER:
            raise MalformedRecord(path, "line 1", f"expected header {','.join(PAIRS_HEADER)}")
        pairs = []
        for lineno, row in enumerate(rd, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise MalformedRecord(path, f"line {lineno}", f"expected 3 fields, got {len(row)}")
            try:
                pairs.append(VolumePair(row[0].strip(), float(row[1]), float(row[2])))
            except ValueError:
                raise MalformedRecord(path, f"line {lineno}", "non-numeric volume") from None
    return pairs


def write_pairs(path, pairs):
    write_csv(path, [{"sample_id": p.sample_id, "measured_cm3": p.measured, "reconstructed_cm3": p.reconstructed}
                     for p in pairs], PAIRS_HEADER)
