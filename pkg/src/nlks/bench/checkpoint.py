"""Versioned binary snapshots of solver states.

Layout (little endian)::

    magic  b"NLKS"
    u16    format version
    u8     state kind (1 radial, 2 planar)
    ...    kind-specific header and float64 arrays
    u32    CRC-32 of every preceding byte

The version is checked before the checksum so that a file from another
format revision is reported as such rather than as corruption.
"""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, ChecksumError, VersionError
from ..oracle import GrowthParams
from ..planefield import PlanarDomain, PlanarState
from ..radialmass import Mode, RadialState, SGrid

MAGIC = b"NLKS"
VERSION = 1
KIND_RADIAL = 1
KIND_PLANAR = 2

_PREFIX = struct.Struct("<4sHB")
_RADIAL = struct.Struct("<dddBdIdd")  # t, M0, m0, mode, rescale, n, s_max, stretch
_PLANAR = struct.Struct("<ddddI")      # t, M0, m0, L, n
_CRC = struct.Struct("<I")
_MODES = {Mode.NORMALIZED: 0, Mode.PHYSICAL: 1}


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def dumps(state) -> bytes:
    if isinstance(state, RadialState):
        g = state.grid
        body = _PREFIX.pack(MAGIC, VERSION, KIND_RADIAL) + _RADIAL.pack(
            state.t, state.p.M0, state.p.m0, _MODES[state.mode], state.rescale, g.n, g.s_max,
            g.stretch) + _f64(g.s_nodes) + _f64(state.M)
    elif isinstance(state, PlanarState):
        d = state.domain
        body = _PREFIX.pack(MAGIC, VERSION, KIND_PLANAR) + _PLANAR.pack(
            state.t, state.p.M0, state.p.m0, d.L, d.n) + _f64(state.u)
    else:
        raise TypeError(f"cannot snapshot {type(state).__name__}")
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def loads(data: bytes, domain_cache=None):
    if len(data) < _PREFIX.size:
        raise ChecksumError("snapshot truncated before its header")
    magic, version, kind = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"not a snapshot file (magic {magic!r})")
    if version != VERSION:
        raise VersionError(version, VERSION)
    if len(data) < _PREFIX.size + _CRC.size:
        raise ChecksumError("snapshot truncated")
    body, (crc,) = data[:-_CRC.size], _CRC.unpack_from(data, len(data) - _CRC.size)
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError("snapshot checksum mismatch (file truncated or corrupted)")
    off = _PREFIX.size
    if kind == KIND_RADIAL:
        t, M0, m0, mode, rescale, n, s_max, stretch = _RADIAL.unpack_from(body, off)
        off += _RADIAL.size
        arrays = np.frombuffer(body, dtype="<f8", offset=off)
        if arrays.size != 2 * n:
            raise CheckpointError("radial snapshot has inconsistent array sizes")
        nodes = arrays[:n].astype(float)
        nodes.setflags(write=False)
        grid = SGrid(nodes, s_max, n, stretch)
        mode = {v: k for k, v in _MODES.items()}[mode]
        return RadialState(grid, arrays[n:].astype(float), t, GrowthParams(M0, m0), mode, rescale)
    if kind == KIND_PLANAR:
        t, M0, m0, L, n = _PLANAR.unpack_from(body, off)
        off += _PLANAR.size
        u = np.frombuffer(body, dtype="<f8", offset=off)
        if u.size != n * n:
            raise CheckpointError("planar snapshot has inconsistent array sizes")
        key = (L, n)
        dom = domain_cache.get(key) if domain_cache is not None else None
        if dom is None:
            dom = PlanarDomain(L, n)
            if domain_cache is not None:
                domain_cache[key] = dom
        return PlanarState(dom, u.reshape(n, n).astype(float), t, GrowthParams(M0, m0))
    raise CheckpointError(f"unknown state kind {kind}")


def checkpoint_save(state, path) -> Path:
    """Write ``state`` atomically (temporary file then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(state))
    os.replace(tmp, path)
    return path


def checkpoint_load(path, domain_cache=None):
    return loads(Path(path).read_bytes(), domain_cache)
