"""Block-Hankel matrices of finite signals.

A signal is an array of shape ``(T, sigma)`` (a 1-D array is treated as a
scalar signal).  ``build_hankel(z, t, q)`` stacks ``t`` shifted copies of the
signal, each ``q`` samples wide::

    [[z_0,     z_1, ..., z_{q-1}  ],
     [z_1,     z_2, ..., z_q      ],
     ...
     [z_{t-1},      ..., z_{t+q-2}]]
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SignalFormatError
from .lti_core import RANK_RTOL, numerical_rank


def as_signal(z, name="z"):
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.ndim != 2:
        raise DimensionError(name, f"signal must be 1-D or 2-D, got shape {z.shape}")
    return z


@dataclass(frozen=True)
class HankelMatrix:
    """Depth-``t`` block-Hankel matrix of a ``sigma``-dimensional signal."""

    matrix: np.ndarray
    sigma: int
    depth: int
    width: int
    source_length: int

    def block_row(self, i):
        return block_row(self, i)

    @property
    def shape(self):
        return self.matrix.shape


def build_hankel(z, t, q=None):
    """Hankel matrix of depth ``t`` and width ``q`` (default: widest possible)."""
    z = as_signal(z)
    T, sigma = z.shape
    if t < 1:
        raise ValueError("depth t must be >= 1")
    if q is None:
        q = T - t + 1
    if q < 1 or T < t + q - 1:
        raise DimensionError(
            "z", f"signal length {T} too short: depth {t} and width {q} "
                 f"need at least {t + q - 1} samples")
    # column j stacks z_j, ..., z_{j+t-1}
    idx = np.arange(t)[:, None] + np.arange(q)[None, :]
    H = z[idx]                               # (t, q, sigma)
    H = H.transpose(0, 2, 1).reshape(t * sigma, q)
    return HankelMatrix(matrix=H, sigma=sigma, depth=t, width=q, source_length=T)


def block_row(Hm, i):
    """The ``i``-th block row (1-indexed), i.e. ``[z_{i-1}, ..., z_{i+q-2}]``."""
    if not 1 <= i <= Hm.depth:
        raise IndexError(f"block index {i} outside 1..{Hm.depth}")
    s = Hm.sigma
    return Hm.matrix[(i - 1) * s:i * s]


def is_persistently_exciting(z, t, rtol=RANK_RTOL):
    """Whether ``z`` is persistently exciting of order ``t``.

    Returns ``(flag, rank, diagnostic)``.  ``diagnostic`` is empty when the
    check passes and otherwise says why it failed.
    """
    z = as_signal(z)
    T, sigma = z.shape
    q = T - t + 1
    if q < sigma * t:
        return False, 0, f"q < sigma*t ({q} < {sigma * t}): signal too short"
    rank = numerical_rank(build_hankel(z, t, q).matrix, rtol)
    if rank < sigma * t:
        return False, rank, f"rank {rank} < sigma*t = {sigma * t}"
    return True, rank, ""


def difference_signal(z):
    """Forward differences ``z_{k+1} - z_k``; one sample shorter than ``z``."""
    z = as_signal(z)
    if z.shape[0] < 2:
        raise DimensionError("z", "difference signal needs at least 2 samples")
    return np.diff(z, axis=0)


def write_signal_csv(path, z):
    """Write a signal as ``t,z1,...,zs`` rows."""
    z = as_signal(z)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t"] + [f"z{j + 1}" for j in range(z.shape[1])])
        for k, row in enumerate(z):
            wr.writerow([k] + [repr(float(v)) for v in row])


def read_signal_csv(path):
    """Read a signal written by :func:`write_signal_csv`.

    Raises :class:`SignalFormatError` naming the first bad line.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SignalFormatError(f"{path}: line 1: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "t":
        raise SignalFormatError(f"{path}: line 1: header must be 't,z1,...,zs', got {rows[0]}")
    sigma = len(header) - 1
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != sigma + 1:
            raise SignalFormatError(
                f"{path}: line {lineno}: expected {sigma + 1} fields, got {len(row)}")
        try:
            t = int(row[0])
            vals = [float(c) for c in row[1:]]
        except ValueError as exc:
            raise SignalFormatError(f"{path}: line {lineno}: {exc}") from None
        if t != len(data):
            raise SignalFormatError(
                f"{path}: line {lineno}: expected time index {len(data)}, got {t}")
        data.append(vals)
    if not data:
        raise SignalFormatError(f"{path}: line 2: no samples")
    return np.array(data, dtype=float)
