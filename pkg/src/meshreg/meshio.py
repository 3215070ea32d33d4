"""PLY (ascii, binary little-endian) and Wavefront OBJ reading and writing.

Only triangle faces are supported.  Vertex positions are written as
``double`` so that a binary round trip is bit-exact.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np

from .errors import (
    InvalidMesh,
    MeshIndexError,
    MeshIOError,
    ParseError,
    UnsupportedFormat,
)
from .mesh import Mesh

logger = logging.getLogger(__name__)

FORMATS = ("ply-ascii", "ply-binary-le", "obj")

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def detect_format(path: str | os.PathLike) -> str:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return "obj"
    if suffix != ".ply":
        raise UnsupportedFormat(f"cannot infer mesh format from {path.name!r}")
    try:
        with open(path, "rb") as fh:
            head = fh.read(512)
    except OSError as exc:
        raise MeshIOError(str(exc)) from exc
    for line in head.split(b"\n")[:4]:
        if line.startswith(b"format"):
            kind = line.split()[1].decode("ascii", "replace")
            if kind == "ascii":
                return "ply-ascii"
            if kind == "binary_little_endian":
                return "ply-binary-le"
            raise UnsupportedFormat(f"PLY format {kind!r} is not supported")
    raise ParseError("missing PLY format line")


def load_mesh(path: str | os.PathLike, format: str | None = None) -> Mesh:
    """Read a mesh.  ``format`` is one of ``FORMATS``; inferred when omitted."""
    path = Path(path)
    if not path.is_file():
        raise MeshIOError(f"no such file: {path}")
    if format is None:
        format = detect_format(path)
    if format not in FORMATS:
        raise UnsupportedFormat(f"unknown format {format!r}")
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise MeshIOError(str(exc)) from exc
    if format == "obj":
        return _read_obj(data)
    return _read_ply(data, expect=format)


def save_mesh(mesh: Mesh, path: str | os.PathLike, format: str | None = None) -> None:
    path = Path(path)
    if format is None:
        format = "obj" if path.suffix.lower() == ".obj" else "ply-binary-le"
    if format not in FORMATS:
        raise UnsupportedFormat(f"unknown format {format!r}")
    payload = _write_obj(mesh) if format == "obj" else _write_ply(mesh, binary=format == "ply-binary-le")
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise MeshIOError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

class _Element:
    def __init__(self, name: str, count: int):
        self.name = name
        self.count = count
        self.props: list[tuple[str, str, str | None]] = []  # (name, dtype, list count dtype)


def _parse_ply_header(data: bytes) -> tuple[str, list[_Element], int]:
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file (missing 'ply' magic or 'end_header')")
    body_start = data.find(b"\n", end)
    body_start = len(data) if body_start < 0 else body_start + 1
    lines = data[:end].decode("ascii", "replace").splitlines()
    fmt = None
    elements: list[_Element] = []
    for raw in lines[1:]:
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2:
                raise ParseError("malformed format line")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError(f"malformed element line: {raw!r}")
            try:
                count = int(tok[2])
            except ValueError:
                raise ParseError(f"bad element count: {raw!r}") from None
            if count < 0:
                raise ParseError(f"negative element count: {raw!r}")
            elements.append(_Element(tok[1], count))
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before any element")
            if tok[1] == "list":
                if len(tok) != 5 or tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES:
                    raise ParseError(f"malformed list property: {raw!r}")
                elements[-1].props.append((tok[4], _PLY_TYPES[tok[3]], _PLY_TYPES[tok[2]]))
            else:
                if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                    raise ParseError(f"malformed property: {raw!r}")
                elements[-1].props.append((tok[2], _PLY_TYPES[tok[1]], None))
        else:
            raise ParseError(f"unexpected header line: {raw!r}")
    if fmt is None:
        raise ParseError("missing PLY format line")
    return fmt, elements, body_start


def _read_ply(data: bytes, expect: str) -> Mesh:
    fmt, elements, start = _parse_ply_header(data)
    kind = {"ascii": "ply-ascii", "binary_little_endian": "ply-binary-le"}.get(fmt)
    if kind is None:
        raise UnsupportedFormat(f"PLY format {fmt!r} is not supported")
    if kind != expect:
        raise ParseError(f"file is {kind}, expected {expect}")
    names = [e.name for e in elements]
    if "vertex" not in names:
        raise ParseError("PLY has no vertex element")
    if kind == "ply-ascii":
        tables = _read_ply_ascii(data[start:], elements)
    else:
        tables = _read_ply_binary(data[start:], elements)
    return _assemble_ply(tables)


def _read_ply_ascii(body: bytes, elements: list[_Element]) -> dict:
    lines = [ln for ln in body.decode("ascii", "replace").splitlines() if ln.strip()]
    pos = 0
    tables = {}
    for el in elements:
        if pos + el.count > len(lines):
            raise ParseError(
                f"element {el.name!r} declares {el.count} rows, "
                f"only {len(lines) - pos} present"
            )
        rows = lines[pos:pos + el.count]
        pos += el.count
        has_list = any(p[2] for p in el.props)
        if not has_list:
            try:
                arr = np.array([r.split() for r in rows], dtype=np.float64).reshape(el.count, -1)
            except ValueError:
                raise ParseError(f"malformed {el.name!r} row") from None
            if arr.shape[1] != len(el.props) and el.count:
                raise ParseError(f"{el.name!r} rows have {arr.shape[1]} values, expected {len(el.props)}")
            tables[el.name] = {p[0]: arr[:, i] for i, p in enumerate(el.props)}
        else:
            tables[el.name] = _ascii_list_rows(el, rows)
    if pos != len(lines):
        raise ParseError(f"{len(lines) - pos} trailing rows after declared elements")
    return tables


def _ascii_list_rows(el: _Element, rows: list[str]) -> dict:
    if len(el.props) != 1:
        raise ParseError(f"element {el.name!r}: only a single list property is supported")
    name = el.props[0][0]
    out = np.empty((len(rows), 3), dtype=np.int64)
    for i, r in enumerate(rows):
        tok = r.split()
        try:
            vals = [int(x) for x in tok]
        except ValueError:
            raise ParseError(f"malformed {el.name!r} row {i}: {r!r}") from None
        if not vals or vals[0] != len(vals) - 1:
            raise ParseError(f"{el.name!r} row {i}: list length mismatch")
        if vals[0] != 3:
            raise ParseError(f"{el.name!r} row {i}: only triangles are supported")
        out[i] = vals[1:]
    return {name: out}


def _read_ply_binary(body: bytes, elements: list[_Element]) -> dict:
    pos = 0
    tables = {}
    for el in elements:
        lists = [p for p in el.props if p[2]]
        if not lists:
            dtype = np.dtype([(p[0], "<" + p[1]) for p in el.props])
            nbytes = dtype.itemsize * el.count
            if pos + nbytes > len(body):
                raise ParseError(f"element {el.name!r} truncated")
            arr = np.frombuffer(body, dtype=dtype, count=el.count, offset=pos)
            pos += nbytes
            tables[el.name] = {p[0]: arr[p[0]].astype(np.float64) for p in el.props}
            continue
        if len(el.props) != 1:
            raise ParseError(f"element {el.name!r}: only a single list property is supported")
        name, item, counter = el.props[0]
        dtype = np.dtype([("n", "<" + counter), ("idx", "<" + item, 3)])
        nbytes = dtype.itemsize * el.count
        if pos + nbytes > len(body):
            raise ParseError(f"element {el.name!r} truncated")
        arr = np.frombuffer(body, dtype=dtype, count=el.count, offset=pos)
        if np.any(arr["n"] != 3):
            raise ParseError(f"{el.name!r}: only triangles are supported")
        pos += nbytes
        tables[el.name] = {name: arr["idx"].astype(np.int64)}
    if pos != len(body) and body[pos:].strip():
        raise ParseError(f"{len(body) - pos} trailing bytes after declared elements")
    return tables


def _assemble_ply(tables: dict) -> Mesh:
    vt = tables["vertex"]
    try:
        verts = np.column_stack([vt["x"], vt["y"], vt["z"]])
    except KeyError:
        raise ParseError("vertex element lacks x/y/z") from None
    normals = np.zeros((0, 3))
    if all(k in vt for k in ("nx", "ny", "nz")):
        normals = _clean_normals(np.column_stack([vt["nx"], vt["ny"], vt["nz"]]))
    colors = None
    if all(k in vt for k in ("red", "green", "blue")):
        colors = np.column_stack([vt["red"], vt["green"], vt["blue"]]).astype(np.uint8)
    tris = np.zeros((0, 3), dtype=np.int64)
    face = tables.get("face")
    if face:
        tris = face.get("vertex_indices", face.get("vertex_index"))
        if tris is None:
            raise ParseError("face element lacks vertex_indices")
    return _build(verts, tris, normals, colors)


def _clean_normals(n: np.ndarray) -> np.ndarray:
    lengths = np.linalg.norm(n, axis=1)
    if np.any(lengths < 1e-12):
        logger.warning("file contains zero-length normals; normals dropped")
        return np.zeros((0, 3))
    if np.all(np.abs(lengths - 1.0) <= 1e-12):
        return n
    return n / lengths[:, None]


def _build(verts, tris, normals, colors) -> Mesh:
    tris = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    if len(tris) and (tris.min() < 0 or tris.max() >= len(verts)):
        raise MeshIndexError(f"face references vertex outside [0, {len(verts)})")
    try:
        return Mesh(verts, tris, normals, colors)
    except InvalidMesh as exc:
        raise ParseError(str(exc)) from exc


def _write_ply(mesh: Mesh, binary: bool) -> bytes:
    n = mesh.n_vertices
    header = ["ply", "format " + ("binary_little_endian" if binary else "ascii") + " 1.0",
              "comment written by meshreg", f"element vertex {n}"]
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if mesh.has_normals:
        fields += [("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
    if mesh.colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    for name, dt in fields:
        header.append(f"property {'uchar' if dt == 'u1' else 'double'} {name}")
    header += [f"element face {mesh.n_triangles}", "property list uchar int vertex_indices",
               "end_header"]
    head = ("\n".join(header) + "\n").encode("ascii")

    vert = np.empty(n, dtype=np.dtype(fields))
    vert["x"], vert["y"], vert["z"] = mesh.vertices.T
    if mesh.has_normals:
        vert["nx"], vert["ny"], vert["nz"] = mesh.normals.T
    if mesh.colors is not None:
        vert["red"], vert["green"], vert["blue"] = mesh.colors.T

    if binary:
        face = np.empty(mesh.n_triangles, dtype=np.dtype([("n", "u1"), ("idx", "<i4", 3)]))
        face["n"] = 3
        face["idx"] = mesh.triangles
        return head + vert.tobytes() + face.tobytes()

    rows = []
    for rec in vert:
        rows.append(" ".join(repr(float(v)) if isinstance(v, np.floating) else str(int(v)) for v in rec))
    rows += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    return head + ("\n".join(rows) + "\n").encode("ascii")


# ---------------------------------------------------------------------------
# OBJ
# ---------------------------------------------------------------------------

def _obj_index(token: str, count: int, lineno: int) -> int:
    try:
        i = int(token)
    except ValueError:
        raise ParseError(f"line {lineno}: bad index {token!r}") from None
    if i == 0:
        raise ParseError(f"line {lineno}: OBJ indices are 1-based")
    idx = i - 1 if i > 0 else count + i
    if idx < 0 or idx >= count:
        raise MeshIndexError(f"line {lineno}: index {i} outside 1..{count}")
    return idx


def _read_obj(data: bytes) -> Mesh:
    verts: list[list[float]] = []
    vnorms: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    corner_normals: list[tuple[int, int]] = []
    for lineno, raw in enumerate(data.decode("utf-8", "replace").splitlines(), 1):
        tok = raw.split()
        if not tok or tok[0].startswith("#"):
            continue
        head = tok[0]
        if head in ("v", "vn"):
            if len(tok) < 4:
                raise ParseError(f"line {lineno}: {head} needs three coordinates")
            try:
                xyz = [float(x) for x in tok[1:4]]
            except ValueError:
                raise ParseError(f"line {lineno}: bad number in {raw!r}") from None
            (verts if head == "v" else vnorms).append(xyz)
        elif head == "f":
            if len(tok) != 4:
                raise ParseError(f"line {lineno}: only triangular faces are supported")
            face = []
            for corner in tok[1:]:
                parts = corner.split("/")
                vi = _obj_index(parts[0], len(verts), lineno)
                face.append(vi)
                if len(parts) == 3 and parts[2]:
                    corner_normals.append((vi, _obj_index(parts[2], len(vnorms), lineno)))
            faces.append(tuple(face))
        # vt, o, g, s, usemtl, mtllib: ignored
    verts_a = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    normals = np.zeros((0, 3))
    if corner_normals and vnorms:
        vn = np.asarray(vnorms, dtype=np.float64)
        acc = np.zeros_like(verts_a)
        seen = np.zeros(len(verts_a), dtype=bool)
        for vi, ni in corner_normals:
            acc[vi] += vn[ni]
            seen[vi] = True
        if seen.all():
            normals = _clean_normals(acc)
        else:
            logger.warning("OBJ normals do not cover every vertex; normals dropped")
    return _build(verts_a, faces, normals, None)


def _write_obj(mesh: Mesh) -> bytes:
    out = ["# written by meshreg"]
    out += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    if mesh.has_normals:
        out += [f"vn {x!r} {y!r} {z!r}" for x, y, z in mesh.normals.tolist()]
        out += [f"f {a}//{a} {b}//{b} {c}//{c}" for a, b, c in (mesh.triangles + 1).tolist()]
    else:
        out += [f"f {a} {b} {c}" for a, b, c in (mesh.triangles + 1).tolist()]
    return ("\n".join(out) + "\n").encode("utf-8")
