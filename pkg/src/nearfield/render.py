"""16-bit PGM heatmaps of shift maps and field magnitudes."""

from __future__ import annotations

import json

import numpy as np

from .errors import EmptyMap
from .grid import write_atomic

MAXVAL = 65535


def heatmap_pixels(values):
    """Scale a ``(nx, nz)`` array to 16-bit pixels in image order.

    Rows run from the largest z (top) to the smallest, columns from the
    smallest x (left). Non-finite cells are masked and rendered 0. Scaling is
    linear from 0 to the largest unmasked value, rounded down.

    Returns
    -------
    (pixels, vmax)
    """
    v = np.asarray(values, dtype=float)
    finite = np.isfinite(v)
    if not np.any(finite):
        raise EmptyMap("nothing to render: every cell is masked")
    vmax = float(np.max(v[finite]))
    scaled = np.zeros(v.shape, dtype=np.uint16)
    if vmax > 0:
        frac = np.clip(np.where(finite, v, 0.0) / vmax, 0.0, 1.0)
        scaled = np.floor(frac * MAXVAL).astype(np.uint16)
    scaled[~finite] = 0
    return scaled.T[::-1, :], vmax


def pgm_bytes(pixels):
    h, w = pixels.shape
    header = f"P5\n{w} {h}\n{MAXVAL}\n".encode("ascii")
    return header + pixels.astype(">u2").tobytes()


def render_pgm(values, xs, zs, path, units="kHz"):
    """Write ``path`` (binary P5) and ``path + '.json'`` with the scale."""
    pixels, vmax = heatmap_pixels(values)
    write_atomic(path, pgm_bytes(pixels), mode="wb")
    meta = {
        "width": int(pixels.shape[1]),
        "height": int(pixels.shape[0]),
        "maxval": MAXVAL,
        "scale_min": 0.0,
        "scale_max": vmax,
        "units": units,
        "x_um": [float(np.min(xs)), float(np.max(xs))],
        "z_um": [float(np.min(zs)), float(np.max(zs))],
        "masked_cells": int(np.sum(~np.isfinite(np.asarray(values, dtype=float)))),
    }
    write_atomic(str(path) + ".json", json.dumps(meta, indent=2) + "\n")
    return meta


def read_pgm(path):
    """Parse a file written by :func:`render_pgm` back into pixels."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(t) for t in parts[1].split())
    maxval = int(parts[2])
    px = np.frombuffer(parts[3], dtype=">u2" if maxval > 255 else "u1")
    return px.reshape(h, w).astype(np.int64)
