"""Forward model: AC Zeeman transition shifts over the (x, z) plane."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import FormatError
from .grid import read_table, rows_to_grid, write_atomic, _read_text
from .hyperfine import (BE9, DEFAULT_B0_MT, DEFAULT_TILT_DEG, RESONANCE_GUARD_MHZ, TransitionSpec,
                        bias_axis, diagonalize_ground_state, in_plane_polarization, parse_transition,
                        transition_shift_coefficients)
from .model import QuadrupoleParams, field_at
from .wires import WireSet, field_of_wires

SHIFT_HEADER = ("x_um", "z_um", "shift_kHz", "sigma_kHz")


@dataclass(frozen=True, eq=False)
class ShiftMap:
    """Transition-shift magnitudes (kHz) on a rectangular grid.

    Arrays have shape ``(len(xs), len(zs))``; ``NaN`` in ``shift`` marks masked
    nodes. ``power_dB`` is the drive power of this map relative to the
    reference map of a joint fit.
    """

    xs: np.ndarray
    zs: np.ndarray
    shift: np.ndarray
    transition: TransitionSpec
    f_drive: float
    B0: float = DEFAULT_B0_MT
    power_dB: float = 0.0
    sigma: np.ndarray | None = None
    tilt_deg: float = DEFAULT_TILT_DEG
    signed: np.ndarray | None = None

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        zs = np.asarray(self.zs, dtype=float)
        shift = np.asarray(self.shift, dtype=float)
        if shift.shape != (len(xs), len(zs)):
            raise FormatError(f"shift shape {shift.shape} does not match axes")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "zs", zs)
        object.__setattr__(self, "shift", shift)
        if self.sigma is not None:
            object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))

    @property
    def mask(self):
        """True where the node is usable."""
        return np.isfinite(self.shift)

    @property
    def axis(self):
        return bias_axis(self.tilt_deg)

    def mesh(self):
        return np.meshgrid(self.xs, self.zs, indexing="ij")


class ShiftResponse:
    """Precomputed polarization response of one transition.

    The signed shift is ``sum_q k_q |b_q|^2`` with the coefficients fixed by
    the level structure, drive frequency and bias direction.
    """

    def __init__(self, transition, f_drive, B0=DEFAULT_B0_MT, tilt_deg=DEFAULT_TILT_DEG,
                 constants=BE9, guard=RESONANCE_GUARD_MHZ, rwa=False):
        self.transition = transition
        self.f_drive = f_drive
        self.B0 = B0
        self.tilt_deg = tilt_deg
        self.axis = bias_axis(tilt_deg)
        self.levels = diagonalize_ground_state(constants, B0, self.axis)
        self.k = transition_shift_coefficients(self.levels, transition, f_drive, guard, rwa)

    def components_kHz(self, bx, bz):
        """Signed pi and sigma contributions in kHz."""
        pol = in_plane_polarization(bx, bz, self.axis)
        pi = self.k[0] * np.abs(pol.b_pi) ** 2
        sigma = self.k[1] * np.abs(pol.b_plus) ** 2 + self.k[2] * np.abs(pol.b_minus) ** 2
        return 1e3 * pi, 1e3 * sigma

    def signed_kHz(self, bx, bz):
        pi, sigma = self.components_kHz(bx, bz)
        return pi + sigma


def phasor_field(field, X, Z):
    if isinstance(field, QuadrupoleParams):
        return field_at(field, X, Z)
    if isinstance(field, WireSet):
        return field_of_wires(field, X, Z)
    raise TypeError(f"unsupported field source {type(field).__name__}")


def forward_shift_map(field, transition, xs, zs, f_drive=None, B0=DEFAULT_B0_MT,
                      tilt_deg=DEFAULT_TILT_DEG, power_dB=0.0, constants=BE9, rwa=False,
                      response=None):
    """Shift-magnitude map of ``transition`` driven by ``field``.

    ``field`` is a :class:`QuadrupoleParams` or a :class:`WireSet`; its
    ``freq`` is the drive frequency unless ``f_drive`` is given. Power offsets
    scale the field amplitude by ``10**(power_dB/20)``.
    """
    if f_drive is None:
        f_drive = field.freq
    if response is None:
        response = ShiftResponse(transition, f_drive, B0, tilt_deg, constants, rwa=rwa)
    X, Z = np.meshgrid(np.asarray(xs, float), np.asarray(zs, float), indexing="ij")
    bx, bz = phasor_field(field, X, Z)
    amp = 10.0 ** (power_dB / 20.0)
    signed = response.signed_kHz(amp * bx, amp * bz)
    return ShiftMap(xs, zs, np.abs(signed), transition, f_drive, B0, power_dB,
                    tilt_deg=tilt_deg, signed=signed)


def apply_mask(m, region):
    """NaN every node where ``region(X, Z)`` is False."""
    X, Z = m.mesh()
    keep = np.broadcast_to(np.asarray(region(X, Z), dtype=bool), X.shape)
    shift = np.where(keep, m.shift, np.nan)
    signed = None if m.signed is None else np.where(keep, m.signed, np.nan)
    return replace(m, shift=shift, signed=signed)


def rectangle(xmin, xmax, zmin, zmax):
    return lambda X, Z: (X >= xmin) & (X <= xmax) & (Z >= zmin) & (Z <= zmax)


def add_noise(m, relative=0.05, rng=None, floor_fraction=0.02):
    """Gaussian noise with ``sigma = relative * max(shift, floor_fraction * max shift)``.

    The floor keeps the weights finite near zero crossings. Noisy values are
    reported as magnitudes.
    """
    rng = np.random.default_rng(rng)
    peak = float(np.nanmax(m.shift)) if np.any(m.mask) else 0.0
    sigma = relative * np.maximum(m.shift, floor_fraction * peak)
    noisy = np.abs(m.shift + sigma * rng.standard_normal(m.shift.shape))
    return replace(m, shift=noisy, sigma=sigma, signed=None)


# -- CSV ---------------------------------------------------------------------

def format_shift_map(m):
    out = io.StringIO()
    out.write(f"# transition={m.transition.label}\n")
    out.write(f"# f_drive_MHz={m.f_drive!r}\n")
    out.write(f"# B0_mT={m.B0!r}\n")
    out.write(f"# power_dB={m.power_dB!r}\n")
    out.write(f"# tilt_deg={m.tilt_deg!r}\n")
    out.write(",".join(SHIFT_HEADER) + "\n")
    sigma = m.sigma if m.sigma is not None else np.full(m.shift.shape, np.nan)
    for i, x in enumerate(m.xs):
        for j, z in enumerate(m.zs):
            vals = (float(x), float(z), float(m.shift[i, j]), float(sigma[i, j]))
            out.write(",".join("nan" if math.isnan(v) else repr(v) for v in vals) + "\n")
    return out.getvalue()


def save_shift_map(m, path):
    write_atomic(path, format_shift_map(m))


def load_shift_map(source, mapping=None):
    text = _read_text(source)
    data, _, meta = read_table(text, SHIFT_HEADER)
    if len(data) == 0:
        raise FormatError("shift CSV has no data rows")
    if not np.all(np.isfinite(data[:, :2])):
        raise FormatError("shift CSV coordinates must be finite")
    for key in ("transition", "f_drive_MHz"):
        if key not in meta:
            raise FormatError(f"shift CSV lacks '# {key}=' metadata")
    # omitted rows are masked nodes
    xs, zs, ix, iz = rows_to_grid(data[:, 0], data[:, 1], allow_missing=True)
    shape = (len(xs), len(zs))
    shift = np.full(shape, np.nan)
    sigma = np.full(shape, np.nan)
    shift[ix, iz] = data[:, 2]
    sigma[ix, iz] = data[:, 3]
    if np.any(shift[np.isfinite(shift)] < 0):
        raise FormatError("shift magnitudes must be non-negative")
    try:
        f_drive = float(meta["f_drive_MHz"])
        B0 = float(meta.get("B0_mT", DEFAULT_B0_MT))
        power = float(meta.get("power_dB", 0.0))
        tilt = float(meta.get("tilt_deg", DEFAULT_TILT_DEG))
    except ValueError:
        raise FormatError("non-numeric shift CSV metadata") from None
    transition = parse_transition(meta["transition"], mapping)
    has_sigma = bool(np.any(np.isfinite(sigma)))
    return ShiftMap(xs, zs, shift, transition, f_drive, B0, power,
                    sigma=sigma if has_sigma else None, tilt_deg=tilt)
