"""Analytic 2D near-fields of infinitely long complex line currents.

Wires run along y; the field lives in the (x, z) plane. Amplitudes are complex
phasors in A, fields come out in μT for coordinates in μm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import FormatError, TooCloseToWire, UnknownPreset

# mu0 / 2pi = 2e-7 T m / A  ->  2e5 μT μm / A
MU0_OVER_2PI = 2.0e5

MIN_DISTANCE_UM = 1.0

DEFAULT_FREQ_MHZ = 1092.547

# meander: +/- alternating currents with the field zero pinned at 45 μm above
# the center wire: I_outer = -I_center (d^2 + h^2) / (2 h^2), d = 50, h = 45
MEANDER_HEIGHT_UM = 45.0
MEANDER_PITCH_UM = 50.0
MEANDER_CENTER_A = 0.1
MEANDER_OUTER_A = (-(MEANDER_PITCH_UM ** 2 + MEANDER_HEIGHT_UM ** 2)
                   / (2 * MEANDER_HEIGHT_UM ** 2) * MEANDER_CENTER_A)

# neighbouring patches carrying quadrature (eddy) currents
EDDY_AMPLITUDE_A = 0.05j
EDDY_POSITIONS_UM = ((-75.0, 0.0), (300.0, 0.0))


@dataclass(frozen=True)
class LineCurrent:
    x: float
    z: float
    amplitude: complex

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.z)):
            raise ValueError("wire position must be finite")
        amp = complex(self.amplitude)
        if not (math.isfinite(amp.real) and math.isfinite(amp.imag)) or abs(amp) == 0:
            raise ValueError("wire amplitude must be finite and non-zero")


@dataclass(frozen=True)
class WireSet:
    wires: tuple
    freq: float = DEFAULT_FREQ_MHZ

    def __post_init__(self):
        object.__setattr__(self, "wires", tuple(self.wires))
        if not self.wires:
            raise ValueError("WireSet needs at least one wire")
        seen = set()
        for w in self.wires:
            key = (w.x, w.z)
            if key in seen:
                raise ValueError(f"coincident wires at {key}")
            seen.add(key)

    def scaled(self, factor):
        """Multiply every amplitude by ``factor`` (complex allowed)."""
        return WireSet(tuple(LineCurrent(w.x, w.z, w.amplitude * factor) for w in self.wires),
                       self.freq)

    def to_json(self):
        return {
            "freq_MHz": self.freq,
            "wires": [{"x_um": w.x, "z_um": w.z,
                       "re_I_A": complex(w.amplitude).real, "im_I_A": complex(w.amplitude).imag}
                      for w in self.wires],
        }

    @classmethod
    def from_json(cls, obj):
        try:
            wires = tuple(
                LineCurrent(float(d["x_um"]), float(d["z_um"]),
                            complex(float(d["re_I_A"]), float(d["im_I_A"])))
                for d in obj["wires"]
            )
            return cls(wires, float(obj["freq_MHz"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad WireSet JSON: {exc}") from None


def _offsets(w, x, z):
    dx = x - w.x
    dz = z - w.z
    rho2 = dx * dx + dz * dz
    if np.any(rho2 < MIN_DISTANCE_UM ** 2):
        raise TooCloseToWire(f"evaluation point within {MIN_DISTANCE_UM} μm of wire at ({w.x}, {w.z})")
    return dx, dz, rho2


def field_of_wires(ws, x, z):
    """Phasor field ``(Bx, Bz)`` in μT at points ``(x, z)`` (broadcasting)."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    bx = np.zeros(np.broadcast(x, z).shape, dtype=complex)
    bz = np.zeros_like(bx)
    for w in ws.wires:
        dx, dz, rho2 = _offsets(w, x, z)
        k = MU0_OVER_2PI * complex(w.amplitude) / rho2
        bx += -k * dz
        bz += k * dx
    return bx, bz


def gradient_of_wires(ws, x, z):
    """Closed-form Jacobian ``[[dBx/dx, dBx/dz], [dBz/dx, dBz/dz]]`` at one point."""
    G = np.zeros((2, 2), dtype=complex)
    for w in ws.wires:
        dx, dz, rho2 = _offsets(w, float(x), float(z))
        k = MU0_OVER_2PI * complex(w.amplitude) / rho2 ** 2
        G[0, 0] += 2 * k * dx * dz
        G[0, 1] += k * (dz * dz - dx * dx)
        G[1, 0] += k * (dz * dz - dx * dx)
        G[1, 1] += -2 * k * dx * dz
    return G


class NearfieldResiduals(NamedTuple):
    max_div: float
    max_curl: float
    max_rel_div: float
    max_rel_curl: float


def _derivatives(bx_fn, xs, zs, stencil):
    xs = np.asarray(xs, dtype=float)
    zs = np.asarray(zs, dtype=float)
    hx = float(np.mean(np.diff(xs)))
    hz = float(np.mean(np.diff(zs)))
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    bx, bz = bx_fn(X, Z)

    def ddx(f):
        return (f[2:, :] - f[:-2, :]) / (2 * hx)

    def ddz(f):
        return (f[:, 2:] - f[:, :-2]) / (2 * hz)

    if stencil == "central":
        inner = (slice(1, -1), slice(1, -1))
        return (ddx(bx)[:, 1:-1], ddz(bx)[1:-1, :], ddx(bz)[:, 1:-1], ddz(bz)[1:-1, :],
                X[inner], Z[inner])
    if stencil == "harmonic":
        # (1, 4, 1)/6 transverse smoothing cancels the h^2 error of the
        # central difference for harmonic components; needs hx == hz
        def sx(f):
            return (f[:, :-2] + 4 * f[:, 1:-1] + f[:, 2:]) / 6

        def sz(f):
            return (f[:-2, :] + 4 * f[1:-1, :] + f[2:, :]) / 6

        inner = (slice(1, -1), slice(1, -1))
        return (sx(ddx(bx)), sz(ddz(bx)), sx(ddx(bz)), sz(ddz(bz)), X[inner], Z[inner])
    raise ValueError(f"unknown stencil {stencil!r}")


def finite_difference_residuals(field_fn, xs, zs, stencil="harmonic"):
    """Max finite-difference divergence and curl of a sampled phasor field.

    ``field_fn(X, Z) -> (Bx, Bz)``. Relative values are normalized by the
    local gradient magnitude (Frobenius norm of the finite-difference Jacobian).
    Only interior nodes are used.
    """
    dxbx, dzbx, dxbz, dzbz, _, _ = _derivatives(field_fn, xs, zs, stencil)
    div = np.abs(dxbx + dzbz)
    curl = np.abs(dxbz - dzbx)
    grad = np.sqrt(np.abs(dxbx) ** 2 + np.abs(dzbx) ** 2 + np.abs(dxbz) ** 2 + np.abs(dzbz) ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        rdiv = np.where(grad > 0, div / grad, np.where(div > 0, np.inf, 0.0))
        rcurl = np.where(grad > 0, curl / grad, np.where(curl > 0, np.inf, 0.0))
    return NearfieldResiduals(float(div.max()), float(curl.max()),
                              float(rdiv.max()), float(rcurl.max()))


def nearfield_residuals(ws, xs, zs, stencil="harmonic"):
    """Divergence/curl residuals of a wire field on the grid ``xs x zs``."""
    return finite_difference_residuals(lambda X, Z: field_of_wires(ws, X, Z), xs, zs, stencil)


PRESETS = ("single", "parallel-pair", "meander", "meander-eddy")

# default sampling centers (μm): the field zero where there is one
PRESET_CENTERS = {
    "single": (0.0, MEANDER_HEIGHT_UM),
    "parallel-pair": (0.0, 0.0),
    "meander": (0.0, MEANDER_HEIGHT_UM),
    "meander-eddy": (0.0, MEANDER_HEIGHT_UM),
}


def preset_scenario(name, eddy_amplitude=None, freq=DEFAULT_FREQ_MHZ):
    """Pinned wire geometries.

    ``eddy_amplitude`` overrides the quadrature current of the two eddy wires
    in ``meander-eddy`` (used for amplitude sweeps).
    """
    if name == "single":
        wires = [LineCurrent(0.0, 0.0, 1.0)]
    elif name == "parallel-pair":
        wires = [LineCurrent(-100.0, 0.0, 1.0), LineCurrent(100.0, 0.0, 1.0)]
    elif name in ("meander", "meander-eddy"):
        wires = [LineCurrent(-MEANDER_PITCH_UM, 0.0, MEANDER_OUTER_A),
                 LineCurrent(0.0, 0.0, MEANDER_CENTER_A),
                 LineCurrent(MEANDER_PITCH_UM, 0.0, MEANDER_OUTER_A)]
        if name == "meander-eddy":
            amp = EDDY_AMPLITUDE_A if eddy_amplitude is None else eddy_amplitude
            wires += [LineCurrent(x, z, amp) for x, z in EDDY_POSITIONS_UM]
    else:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return WireSet(tuple(wires), freq)
