"""Mesh and field I/O: Gmsh v2 ASCII input, legacy VTK output, and a
minimal binary mesh format."""

from __future__ import annotations

import struct

import numpy as np

from .mesh import Mesh

_GMSH_TRI = 2
_GMSH_TET = 4


def read_gmsh_v2(path: str) -> Mesh:
    """Read a Gmsh 2.x .msh file (tets + boundary triangles), ASCII or
    binary, auto-detected from the $MeshFormat header.

    The first element tag (physical group) becomes the cell/facet tag.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    head = raw[:200].split(b"\n")
    if not head or head[0].strip() != b"$MeshFormat":
        raise ValueError(f"{path}: not a Gmsh file")
    version, file_type, data_size = head[1].split()[:3]
    if not version.startswith(b"2"):
        raise ValueError(
            f"{path}: unsupported Gmsh format version {version.decode()}")
    if int(file_type) == 1:
        return _read_gmsh_v2_binary(path, raw, int(data_size))

    lines = raw.decode().splitlines()
    idx = {line: i for i, line in enumerate(lines) if line.startswith("$")}
    if "$Nodes" not in idx or "$Elements" not in idx:
        raise ValueError(f"{path}: missing $Nodes or $Elements section")

    i = idx["$Nodes"] + 1
    n_nodes = int(lines[i])
    ids = np.empty(n_nodes, dtype=np.int64)
    coords = np.empty((n_nodes, 3))
    for k in range(n_nodes):
        parts = lines[i + 1 + k].split()
        ids[k] = int(parts[0])
        coords[k] = [float(x) for x in parts[1:4]]
    remap = {int(node_id): k for k, node_id in enumerate(ids)}

    i = idx["$Elements"] + 1
    n_elem = int(lines[i])
    tets, cell_tags, tris, tri_tags = [], [], [], []
    for k in range(n_elem):
        parts = lines[i + 1 + k].split()
        etype = int(parts[1])
        ntags = int(parts[2])
        tag = int(parts[3]) if ntags > 0 else 0
        conn = [remap[int(p)] for p in parts[3 + ntags:]]
        if etype == _GMSH_TET:
            tets.append(conn)
            cell_tags.append(tag)
        elif etype == _GMSH_TRI:
            tris.append(conn)
            tri_tags.append(tag)
    if not tets:
        raise ValueError(f"{path}: no tetrahedra found")
    return Mesh(
        coords,
        np.array(tets, dtype=np.int64),
        cell_tags=np.array(cell_tags, dtype=np.int64),
        boundary_facets=np.array(tris, dtype=np.int64).reshape(-1, 3),
        facet_tags=np.array(tri_tags, dtype=np.int64),
    )


_GMSH_NNODES = {_GMSH_TRI: 3, _GMSH_TET: 4}


def _read_gmsh_v2_binary(path: str, raw: bytes, data_size: int) -> Mesh:
    """Gmsh 2.2 binary body: int32 metadata, `data_size`-byte float nodes."""
    if data_size != 8:
        raise ValueError(f"{path}: unsupported data size {data_size}")
    one = raw[raw.index(b"\n", raw.index(b"$MeshFormat")) + 1:]
    one = one[one.index(b"\n") + 1:5 + one.index(b"\n")]
    # endianness probe: the integer 1 written right after the format line
    if struct.unpack("<i", one[:4])[0] != 1:
        raise ValueError(f"{path}: unsupported byte order")

    pos = raw.index(b"$Nodes")
    pos = raw.index(b"\n", pos) + 1
    end = raw.index(b"\n", pos)
    n_nodes = int(raw[pos:end])
    pos = end + 1
    rec = np.dtype([("id", "<i4"), ("xyz", "<f8", 3)])
    nodes = np.frombuffer(raw, dtype=rec, count=n_nodes, offset=pos)
    pos += n_nodes * rec.itemsize
    remap = {int(i): k for k, i in enumerate(nodes["id"])}
    coords = nodes["xyz"].astype(float)

    pos = raw.index(b"$Elements", pos)
    pos = raw.index(b"\n", pos) + 1
    end = raw.index(b"\n", pos)
    n_elem = int(raw[pos:end])
    pos = end + 1
    tets, cell_tags, tris, tri_tags = [], [], [], []
    seen = 0
    while seen < n_elem:
        etype, n_follow, ntags = struct.unpack_from("<3i", raw, pos)
        pos += 12
        if etype not in _GMSH_NNODES:
            raise ValueError(f"{path}: unsupported element type {etype}")
        nn = _GMSH_NNODES[etype]
        block = np.frombuffer(raw, dtype="<i4",
                              count=n_follow * (1 + ntags + nn),
                              offset=pos).reshape(n_follow, 1 + ntags + nn)
        pos += block.nbytes
        seen += n_follow
        tags = block[:, 1] if ntags > 0 else np.zeros(n_follow, dtype=int)
        conn = block[:, 1 + ntags:]
        if etype == _GMSH_TET:
            tets.append(conn)
            cell_tags.append(tags)
        else:
            tris.append(conn)
            tri_tags.append(tags)
    if not tets:
        raise ValueError(f"{path}: no tetrahedra found")

    lookup = np.vectorize(remap.__getitem__)
    tets = lookup(np.vstack(tets)).astype(np.int64)
    tris = (lookup(np.vstack(tris)).astype(np.int64) if tris
            else np.empty((0, 3), dtype=np.int64))
    return Mesh(coords, tets,
                cell_tags=np.concatenate(cell_tags).astype(np.int64),
                boundary_facets=tris,
                facet_tags=(np.concatenate(tri_tags).astype(np.int64)
                            if tri_tags else np.empty(0, dtype=np.int64)))


_BIN_MAGIC = b"CSMESH01"


def write_binary(path: str, mesh: Mesh):
    """Minimal binary mesh format: magic, counts, then raw little-endian arrays."""
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write(struct.pack("<4q", mesh.num_vertices, mesh.num_cells,
                             len(mesh.boundary_facets), 0))
        mesh.vertices.astype("<f8").tofile(fh)
        mesh.tets.astype("<i8").tofile(fh)
        mesh.cell_tags.astype("<i8").tofile(fh)
        mesh.boundary_facets.astype("<i8").tofile(fh)
        mesh.facet_tags.astype("<i8").tofile(fh)


def read_binary(path: str) -> Mesh:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _BIN_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        nv, nt, nf, _ = struct.unpack("<4q", fh.read(32))
        verts = np.fromfile(fh, "<f8", nv * 3).reshape(nv, 3)
        tets = np.fromfile(fh, "<i8", nt * 4).reshape(nt, 4)
        cell_tags = np.fromfile(fh, "<i8", nt)
        facets = np.fromfile(fh, "<i8", nf * 3).reshape(nf, 3)
        facet_tags = np.fromfile(fh, "<i8", nf)
    return Mesh(verts, tets, cell_tags, facets, facet_tags)


def write_vtk(path: str, mesh: Mesh, point_data: dict | None = None,
              cell_data: dict | None = None, title: str = "cardiosim output"):
    """Legacy ASCII VTK unstructured grid with optional nodal/cell fields.

    Vector fields are (n, 3) arrays, scalars (n,). P2 fields must be
    restricted to vertices by the caller.
    """
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title + "\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.num_vertices} double\n")
        np.savetxt(fh, mesh.vertices, fmt="%.12g")
        nt = mesh.num_cells
        fh.write(f"CELLS {nt} {5 * nt}\n")
        cells = np.column_stack([np.full(nt, 4), mesh.tets])
        np.savetxt(fh, cells, fmt="%d")
        fh.write(f"CELL_TYPES {nt}\n")
        np.savetxt(fh, np.full(nt, 10), fmt="%d")
        if point_data:
            fh.write(f"POINT_DATA {mesh.num_vertices}\n")
            _write_fields(fh, point_data, mesh.num_vertices)
        if cell_data:
            fh.write(f"CELL_DATA {nt}\n")
            _write_fields(fh, cell_data, nt)


def _write_fields(fh, fields: dict, n: int):
    for name, arr in fields.items():
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 1 or arr.shape[1] == 1:
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, arr.reshape(n), fmt="%.12g")
        else:
            fh.write(f"VECTORS {name} double\n")
            np.savetxt(fh, arr.reshape(n, 3), fmt="%.12g")
