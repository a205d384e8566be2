"""
File formats: a deterministic array container (checkpoints), edge lists and
matrix exports.

Array container layout::

    BIGSL-ARRAYS\\n
    <header length as 16 hex digits>\\n
    <JSON header: meta + [name, dtype, shape, offset, nbytes] per array>
    <raw little-endian array bytes, concatenated in header order>

The header is written with sorted keys and arrays are stored in sorted
name order, so equal contents always give equal bytes.
"""

import json
import os
import tempfile

import numpy as np

from .errors import FormatError

MAGIC = b"BIGSL-ARRAYS\n"


def atomic_write_bytes(path, payload):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_arrays(meta, arrays):
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        dtype = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
        raw = a.astype(dtype, copy=False).tobytes()
        entries.append([name, dtype.str, list(a.shape), offset, len(raw)])
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    return MAGIC + b"%016x\n" % len(header) + header + b"".join(blobs)


def loads_arrays(payload):
    if not payload.startswith(MAGIC):
        raise FormatError("not a bigsl array container")
    pos = len(MAGIC)
    hlen = int(payload[pos:pos + 16], 16)
    pos += 17
    header = json.loads(payload[pos:pos + hlen].decode("utf-8"))
    base = pos + hlen
    arrays = {}
    for name, dtype, shape, offset, nbytes in header["arrays"]:
        start = base + offset
        arrays[name] = np.frombuffer(payload[start:start + nbytes], dtype=dtype).reshape(shape).copy()
    return header["meta"], arrays


def save_arrays(path, meta, arrays):
    atomic_write_bytes(path, dumps_arrays(meta, arrays))


def load_arrays(path):
    with open(path, "rb") as fh:
        return loads_arrays(fh.read())


def edge_list_text(A):
    """Sorted ``src<TAB>dst<TAB>weight`` lines for every nonzero entry."""
    A = np.asarray(A)
    rows, cols = np.nonzero(A)
    order = np.lexsort((cols, rows))
    return "".join(f"{r}\t{c}\t{A[r, c]:.6f}\n" for r, c in zip(rows[order], cols[order]))


def write_edge_list(path, A):
    atomic_write_bytes(path, edge_list_text(A).encode("utf-8"))


def matrix_text(M, header):
    """``# key=value`` header lines followed by one tab-separated row per line."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    lines = [f"# {k}={header[k]}\n" for k in sorted(header)]
    lines.append(f"# rows={M.shape[0]}\n# cols={M.shape[1]}\n")
    lines.extend("\t".join(f"{x:.9g}" for x in row) + "\n" for row in M)
    return "".join(lines)


def write_matrix(path, M, header):
    atomic_write_bytes(path, matrix_text(M, header).encode("utf-8"))


def read_matrix(path):
    header, rows = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                header[k] = v
            elif line.strip():
                rows.append([float(x) for x in line.split("\t")])
    return header, np.array(rows, dtype=np.float64).reshape(int(header["rows"]), int(header["cols"]))
