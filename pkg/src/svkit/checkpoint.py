"""Versioned text container mapping named parameters to shaped arrays.

Layout (one record per line, whitespace separated)::

    svkit-params v1
    meta <key> <value>
    param <name> <ndim> <dim0> [<dim1> ...]
    <%.17g values, one line per leading row (vectors: a single line)>
    ...
    end

Scalars are stored as 0-dim params with a single value line.  The %.17g
formatting round-trips IEEE doubles exactly, so save/load/save is stable
byte for byte.
"""

from __future__ import annotations

import numpy as np

from .errors import ParseError

MAGIC = "svkit-params"
VERSION = "v1"


def _fmt(x: float) -> str:
    return "%.17g" % x


def save_params(path, params: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(f"{MAGIC} {VERSION}\n")
        for key in sorted(meta or {}):
            fh.write(f"meta {key} {(meta or {})[key]}\n")
        for name, value in params.items():
            arr = np.asarray(value, dtype=np.float64)
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"param {name} {arr.ndim}{' ' + dims if dims else ''}\n")
            if arr.ndim == 0:
                fh.write(_fmt(float(arr)) + "\n")
            elif arr.ndim == 1:
                fh.write(" ".join(_fmt(v) for v in arr) + "\n")
            else:
                for row in arr.reshape(arr.shape[0], -1):
                    fh.write(" ".join(_fmt(v) for v in row) + "\n")
        fh.write("end\n")


def load_params(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split() != [MAGIC, VERSION]:
        raise ParseError(path, 1, f"expected header '{MAGIC} {VERSION}'")
    params: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        line_no = i + 1
        i += 1
        if not line:
            continue
        if line == "end":
            return params, meta
        fields = line.split()
        if fields[0] == "meta":
            if len(fields) < 3:
                raise ParseError(path, line_no, "meta needs a key and a value")
            meta[fields[1]] = " ".join(fields[2:])
            continue
        if fields[0] != "param":
            raise ParseError(path, line_no, f"unexpected record {fields[0]!r}")
        if len(fields) < 3:
            raise ParseError(path, line_no, "param needs a name and ndim")
        name = fields[1]
        try:
            ndim = int(fields[2])
            shape = tuple(int(d) for d in fields[3 : 3 + ndim])
        except ValueError:
            raise ParseError(path, line_no, "bad param dimensions") from None
        if len(shape) != ndim:
            raise ParseError(path, line_no, f"expected {ndim} dims, got {len(shape)}")
        n_rows = 1 if ndim <= 1 else shape[0]
        if i + n_rows > len(lines):
            raise ParseError(path, line_no, f"param {name!r} truncated")
        values = []
        for r in range(n_rows):
            try:
                values.append([float(x) for x in lines[i + r].split()])
            except ValueError as exc:
                raise ParseError(path, i + r + 1, f"bad float: {exc}") from None
        i += n_rows
        arr = np.array(values, dtype=np.float64)
        try:
            params[name] = arr.reshape(shape)
        except ValueError:
            raise ParseError(path, line_no, f"param {name!r} has wrong value count") from None
    raise ParseError(path, len(lines), "missing 'end' record")
