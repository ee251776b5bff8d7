"""
Versioned little-endian binary formats and CSV exporters.

Every file starts with a 4-byte magic tag and a uint32 format version.
Payloads are float64 (and int64 for indices), little-endian.

====== =================================================================
magic  layout after (magic, version)
====== =================================================================
UQF1   kind u32, n_members u64, n_times u64, n_cells u64, data
UQK1   support u64, n_modes u64, rank u64, rtol f64, mean, eigenvalues,
       spectrum, modes (row-major, support x n_modes)
UQS1   kind u32, degenerate u32, n_members u64, n_layers u64, widths
       (u64 each); per member: seed-path length u64, path (u64 each),
       train_loss f64, n_iter u64, theta
UQP1   method length u64 + utf-8 bytes, space u32, n u64, dim u64,
       calls u64, samples, losses, n_iters (i64), pairing (i64)
UQO1   n_u u64, n_y u64, u_index (i64), u_values, y_index (i64), y_values
====== =================================================================
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .inversion import Observations, PosteriorEnsemble
from .kle import KLEBasis
from .surrogate import SurrogateEnsemble, SurrogateNet

__all__ = [
    "FIELD_KINDS",
    "FormatError",
    "export_csv",
    "read_fields",
    "read_kle",
    "read_observations",
    "read_posterior",
    "read_surrogate",
    "write_fields",
    "write_kle",
    "write_observations",
    "write_posterior",
    "write_surrogate",
]

VERSION = 1
FIELD_KINDS = {"y": 1, "u": 2, "mask": 3}
_ENS_KINDS = {"single": 0, "de": 1, "randomized": 2}
_SPACES = {"latent": 0, "field": 1}


class FormatError(ValueError):
    pass


class _Writer:
    def __init__(self, magic: bytes):
        self.buf = io.BytesIO()
        self.buf.write(struct.pack("<4sI", magic, VERSION))

    def u32(self, *v):
        self.buf.write(struct.pack(f"<{len(v)}I", *v))

    def u64(self, *v):
        self.buf.write(struct.pack(f"<{len(v)}Q", *v))

    def f64(self, a):
        self.buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())

    def i64(self, a):
        self.buf.write(np.ascontiguousarray(a, dtype="<i8").tobytes())

    def save(self, path):
        Path(path).write_bytes(self.buf.getvalue())


class _Reader:
    def __init__(self, path, magic: bytes):
        self.data = Path(path).read_bytes()
        self.pos = 0
        got, version = self._unpack("<4sI")
        if got != magic:
            raise FormatError(f"{path}: expected magic {magic!r}, found {got!r}")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")

    def _unpack(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise FormatError("truncated file")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def u32(self, n=1):
        v = self._unpack(f"<{n}I")
        return v[0] if n == 1 else v

    def u64(self, n=1):
        v = self._unpack(f"<{n}Q")
        return v[0] if n == 1 else v

    def _array(self, dtype, n):
        size = 8 * n
        if self.pos + size > len(self.data):
            raise FormatError("truncated file")
        a = np.frombuffer(self.data, dtype=dtype, count=n, offset=self.pos).copy()
        self.pos += size
        return a

    def f64(self, n):
        return self._array("<f8", n).astype(float)

    def i64(self, n):
        return self._array("<i8", n).astype(int)

    def done(self):
        if self.pos != len(self.data):
            raise FormatError("trailing bytes after payload")


def write_fields(path, data, kind: str) -> None:
    """Write a (members, times, cells) stack; 1-D and 2-D inputs get unit axes."""
    a = np.asarray(data, dtype=float)
    a = a.reshape((1, 1) + a.shape) if a.ndim == 1 else a.reshape((a.shape[0], 1, a.shape[1])) if a.ndim == 2 else a
    w = _Writer(b"UQF1")
    w.u32(FIELD_KINDS[kind])
    w.u64(*a.shape)
    w.f64(a)
    w.save(path)


def read_fields(path):
    """Return ``(kind, array)`` with the array shaped (members, times, cells)."""
    r = _Reader(path, b"UQF1")
    code = r.u32()
    shape = r.u64(3)
    a = r.f64(int(np.prod(shape))).reshape(shape)
    r.done()
    kind = {v: k for k, v in FIELD_KINDS.items()}.get(code)
    if kind is None:
        raise FormatError(f"unknown field kind {code}")
    return kind, a


def write_kle(path, b: KLEBasis) -> None:
    w = _Writer(b"UQK1")
    w.u64(b.support, b.n_modes, b.spectrum.size)
    w.f64([b.rtol])
    w.f64(b.mean)
    w.f64(b.eigenvalues)
    w.f64(b.spectrum)
    w.f64(b.modes)
    w.save(path)


def read_kle(path) -> KLEBasis:
    r = _Reader(path, b"UQK1")
    n, m, rank = r.u64(3)
    rtol = float(r.f64(1)[0])
    mean = r.f64(n)
    vals = r.f64(m)
    spec = r.f64(rank)
    modes = r.f64(n * m).reshape(n, m)
    r.done()
    return KLEBasis(mean, modes, vals, spec, rtol)


def write_surrogate(path, ens) -> None:
    """Write a SurrogateEnsemble (or a single SurrogateNet)."""
    if isinstance(ens, SurrogateNet):
        members, kind, seeds, degenerate = [ens], "single", [()], False
    else:
        members, kind, seeds, degenerate = ens.members, ens.kind, ens.seeds, ens.degenerate
    w = _Writer(b"UQS1")
    w.u32(_ENS_KINDS[kind], int(degenerate))
    widths = members[0].widths
    w.u64(len(members), len(widths), *widths)
    for m, s in zip(members, seeds):
        s = tuple(np.atleast_1d(s)) if s is not None else ()
        w.u64(len(s), *s)
        w.f64([m.train_loss])
        w.u64(m.n_iter)
        w.f64(m.theta)
    w.save(path)


def read_surrogate(path):
    r = _Reader(path, b"UQS1")
    kind_code, degenerate = r.u32(2)
    n, n_layers = r.u64(2)
    widths = tuple(int(v) for v in np.atleast_1d(r.u64(n_layers)))
    from .surrogate import n_params

    members, seeds = [], []
    for _ in range(n):
        k = r.u64()
        seeds.append(tuple(int(v) for v in np.atleast_1d(r.u64(k))) if k else ())
        loss = float(r.f64(1)[0])
        it = r.u64()
        members.append(SurrogateNet(widths, r.f64(n_params(widths)), train_loss=loss, n_iter=int(it)))
    r.done()
    kind = {v: k for k, v in _ENS_KINDS.items()}[kind_code]
    if kind == "single":
        return members[0]
    return SurrogateEnsemble(members, kind, seeds, bool(degenerate))


def write_posterior(path, post: PosteriorEnsemble) -> None:
    w = _Writer(b"UQP1")
    name = post.method.encode()
    w.u64(len(name))
    w.buf.write(name)
    w.u32(_SPACES[post.space])
    n, dim = post.samples.shape
    w.u64(n, dim, int(post.calls))
    w.f64(post.samples)
    w.f64(post.losses)
    w.i64(post.n_iters)
    w.i64(post.pairing)
    w.save(path)


def read_posterior(path) -> PosteriorEnsemble:
    r = _Reader(path, b"UQP1")
    k = r.u64()
    method = r.data[r.pos : r.pos + k].decode()
    r.pos += k
    space = {v: s for s, v in _SPACES.items()}[r.u32()]
    n, dim, calls = r.u64(3)
    samples = r.f64(n * dim).reshape(n, dim)
    losses = r.f64(n)
    iters = r.i64(n)
    pairing = r.i64(n)
    r.done()
    return PosteriorEnsemble(samples, method, space, losses, iters, pairing, int(calls))


def write_observations(path, obs: Observations) -> None:
    w = _Writer(b"UQO1")
    w.u64(obs.n_u, obs.n_y)
    w.i64(obs.u_index)
    w.f64(obs.u_values)
    w.i64(obs.y_index)
    w.f64(obs.y_values)
    w.save(path)


def read_observations(path) -> Observations:
    r = _Reader(path, b"UQO1")
    nu, ny = r.u64(2)
    o = Observations(r.i64(nu), r.f64(nu), r.i64(ny), r.f64(ny))
    r.done()
    return o


def export_csv(path, array, header=None) -> None:
    """Write a 1-D or 2-D array as CSV with round-trip float precision."""
    a = np.asarray(array)
    a = a.reshape(-1, 1) if a.ndim == 1 else a.reshape(a.shape[0], -1)
    fmt = "%d" if a.dtype.kind in "biu" else "%.17g"
    np.savetxt(path, a, delimiter=",", fmt=fmt, header=",".join(header) if header else "", comments="")
