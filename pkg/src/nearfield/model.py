"""
Five-parameter description of a 2D oscillating near-field around an
intensity minimum.

Conventions
-----------
Vectors are ordered ``(x, z)``. A field phasor ``b`` is a complex 2-vector
and the physical field is ``Re{b * exp(i w t)}``. Units are fixed to μT for
fields, μm for positions, μT/μm for gradients and MHz for frequencies; angles
are radians internally and degrees only at serialization boundaries.

A first-order field is ``b(r) = a + G r`` where ``a`` is the complex offset and
``G`` a complex, symmetric, traceless 2x2 matrix. Any such ``G`` can be written
as ``c1 * Q(0) + c2 * Q(pi/2)`` with complex ``(c1, c2)``; that pair is called the
gradient coordinates below.

The canonical representation (:class:`QuadrupoleParams`) is

    a = B (e(alpha) sin(psi) - i e(alpha - pi/2) cos(psi))
    G = Bp (Q(beta) cos(psi) + i Q(beta - pi/2) sin(psi))

with ``Bp >= 0``, ``alpha, beta in [0, pi)`` and ``psi in [-pi/2, pi/2)``.
Canonicalization picks the global phase that maximizes the real part of the
gradient, so canonical output always has ``|psi| <= pi/4``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import AmbiguousPhase, DegenerateGradient, FormatError

TWO_PI = 2.0 * math.pi

PARAM_KEYS = ("B_uT", "Bp_uT_per_um", "alpha_deg", "beta_deg", "psi_deg",
              "x0_um", "z0_um", "freq_MHz")


def unit_vector(angle):
    """Return ``e(angle) = (cos angle, sin angle)``."""
    return np.array([math.cos(angle), math.sin(angle)])


def quadrupole_matrix(beta):
    """Traceless symmetric matrix ``[[cos b, sin b], [sin b, -cos b]]``."""
    c, s = math.cos(beta), math.sin(beta)
    return np.array([[c, s], [s, -c]])


EDGE_SNAP = 1e-13


def wrap_half_open(angle, lo, period=math.pi):
    """Map ``angle`` into ``[lo, lo + period)``; also return the number of periods removed."""
    k = math.floor((angle - lo) / period)
    wrapped = angle - k * period
    # rounding just below the upper edge means the lower edge
    if wrapped >= lo + period - EDGE_SNAP * period:
        wrapped = max(wrapped - period, lo)
        k += 1
    return wrapped, k


def wrap_pi(angle):
    """Map an angle into ``[-pi, pi)``."""
    return wrap_half_open(angle, -math.pi, TWO_PI)[0]


@dataclass(frozen=True)
class RawExpansion:
    """Eight-parameter first-order expansion.

    ``B_r e(alpha_r) + i B_i e(alpha_i)`` is the offset and
    ``Bp_r Q(beta_r) + i Bp_i Q(beta_i)`` the gradient.
    """

    B_r: float
    alpha_r: float
    B_i: float
    alpha_i: float
    Bp_r: float
    beta_r: float
    Bp_i: float
    beta_i: float

    def __post_init__(self):
        vals = (self.B_r, self.alpha_r, self.B_i, self.alpha_i,
                self.Bp_r, self.beta_r, self.Bp_i, self.beta_i)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("RawExpansion entries must be finite")
        if min(self.B_r, self.B_i, self.Bp_r, self.Bp_i) < 0:
            raise ValueError("RawExpansion magnitudes must be non-negative")

    def offset(self):
        return (self.B_r * unit_vector(self.alpha_r)
                + 1j * self.B_i * unit_vector(self.alpha_i))

    def gradient_coords(self):
        return (self.Bp_r * unit_vector(self.beta_r)
                + 1j * self.Bp_i * unit_vector(self.beta_i))

    def gradient(self):
        return gradient_from_coords(self.gradient_coords())

    def phase_rotated(self, chi):
        """Same field multiplied by ``exp(i chi)``."""
        return decompose(np.exp(1j * chi) * self.offset(),
                         np.exp(1j * chi) * self.gradient())


def gradient_from_coords(c):
    c = np.asarray(c, dtype=complex)
    return np.array([[c[0], c[1]], [c[1], -c[0]]])


def gradient_coords(G):
    """Project a 2x2 complex matrix onto ``(Q(0), Q(pi/2))``.

    The symmetric traceless part is kept; use :func:`gradient_defect` to see
    what was discarded.
    """
    G = np.asarray(G, dtype=complex)
    return np.array([(G[0, 0] - G[1, 1]) / 2, (G[0, 1] + G[1, 0]) / 2])


def gradient_defect(G):
    """Return ``(trace, antisymmetric part)`` magnitudes of a gradient matrix.

    Both vanish for fields obeying div B = 0 and curl B = 0.
    """
    G = np.asarray(G, dtype=complex)
    return abs(G[0, 0] + G[1, 1]), abs(G[0, 1] - G[1, 0]) / 2


def decompose(offset, gradient):
    """Split a complex offset vector and gradient matrix into a :class:`RawExpansion`."""
    a = np.asarray(offset, dtype=complex)
    c = gradient_coords(gradient)
    ar, ai = a.real, a.imag
    cr, ci = c.real, c.imag
    return RawExpansion(
        B_r=float(np.hypot(*ar)), alpha_r=float(math.atan2(ar[1], ar[0])),
        B_i=float(np.hypot(*ai)), alpha_i=float(math.atan2(ai[1], ai[0])),
        Bp_r=float(np.hypot(*cr)), beta_r=float(math.atan2(cr[1], cr[0])),
        Bp_i=float(np.hypot(*ci)), beta_i=float(math.atan2(ci[1], ci[0])),
    )


@dataclass(frozen=True)
class QuadrupoleParams:
    """Canonical near-field parameters.

    Attributes
    ----------
    B : float
        Offset field strength in μT. Signed: ``(B, alpha)`` and
        ``(-B, alpha + pi)`` describe the same field.
    Bp : float
        Gradient strength in μT/μm.
    alpha, beta : float
        Orientations of offset and gradient in rad.
    psi : float
        Polarization angle in rad; 0 is a linearly polarized gradient.
    x0, z0 : float
        Position of the field minimum in μm.
    freq : float
        Drive frequency in MHz.
    """

    B: float
    Bp: float
    alpha: float
    beta: float
    psi: float
    x0: float = 0.0
    z0: float = 0.0
    freq: float = 0.0

    @property
    def ratio(self):
        """``B / Bp`` in μm (infinite for a vanishing gradient)."""
        return self.B / self.Bp if self.Bp != 0 else math.copysign(math.inf, self.B)

    @property
    def degenerate(self):
        return self.Bp == 0

    def offset(self):
        return self.B * (math.sin(self.psi) * unit_vector(self.alpha)
                         - 1j * math.cos(self.psi) * unit_vector(self.alpha - math.pi / 2))

    def gradient_coords(self):
        return self.Bp * (math.cos(self.psi) * unit_vector(self.beta)
                          + 1j * math.sin(self.psi) * unit_vector(self.beta - math.pi / 2))

    def gradient(self):
        return gradient_from_coords(self.gradient_coords())

    def raw(self):
        """Eight-parameter form of this field."""
        return decompose(self.offset(), self.gradient())

    def normalized(self):
        return normalize(self)

    def to_json(self):
        p = normalize(self)
        return {
            "B_uT": p.B,
            "Bp_uT_per_um": p.Bp,
            "alpha_deg": math.degrees(p.alpha),
            "beta_deg": math.degrees(p.beta),
            "psi_deg": math.degrees(p.psi),
            "x0_um": p.x0,
            "z0_um": p.z0,
            "freq_MHz": p.freq,
        }

    @classmethod
    def from_json(cls, obj):
        missing = [k for k in PARAM_KEYS if k not in obj]
        if missing:
            raise FormatError(f"params JSON missing keys: {', '.join(missing)}")
        try:
            vals = {k: float(obj[k]) for k in PARAM_KEYS}
        except (TypeError, ValueError) as exc:
            raise FormatError(f"params JSON has a non-numeric value: {exc}") from None
        return cls(
            B=vals["B_uT"], Bp=vals["Bp_uT_per_um"],
            alpha=math.radians(vals["alpha_deg"]), beta=math.radians(vals["beta_deg"]),
            psi=math.radians(vals["psi_deg"]),
            x0=vals["x0_um"], z0=vals["z0_um"], freq=vals["freq_MHz"],
        )


def normalize(p):
    """Map parameters into the declared domains without changing the field.

    Uses ``(Bp, beta) ~ (-Bp, beta + pi)``, ``(Bp, psi) ~ (-Bp, psi + pi)``,
    ``(B, alpha) ~ (-B, alpha + pi)`` and the global sign freedom
    ``(B, Bp) ~ (-B, -Bp)`` to reach ``Bp >= 0``.
    """
    B, Bp = p.B, p.Bp
    beta, k = wrap_half_open(p.beta, 0.0)
    if k % 2:
        Bp = -Bp
    psi, k = wrap_half_open(p.psi, -math.pi / 2)
    if k % 2:
        Bp = -Bp
    if Bp < 0:
        B, Bp = -B, -Bp
    alpha, k = wrap_half_open(p.alpha, 0.0)
    if k % 2:
        B = -B
    return replace(p, B=B, Bp=Bp, alpha=alpha, beta=beta, psi=psi)


def synthesize_phasor(p, r):
    """Phasor of the first-order field at displacement ``r`` from the minimum.

    ``r`` may have shape ``(2,)`` or ``(..., 2)``; the result has the same shape
    and is complex.
    """
    r = np.asarray(r, dtype=float)
    return p.offset() + r @ p.gradient().T


def field_at(p, x, z):
    """Phasor components ``(Bx, Bz)`` at absolute coordinates (broadcasting)."""
    x = np.asarray(x, dtype=float) - p.x0
    z = np.asarray(z, dtype=float) - p.z0
    a = p.offset()
    G = p.gradient()
    bx = a[0] + G[0, 0] * x + G[0, 1] * z
    bz = a[1] + G[1, 0] * x + G[1, 1] * z
    return bx, bz


@dataclass(frozen=True)
class CanonicalDiagnostics:
    phase_applied: float
    residual_alpha_orthogonality: float
    residual_phi_psi: float
    phi: float
    offset_misfit: float
    degenerate_offset: bool
    degenerate_gradient: bool
    ambiguous_phase: bool = False
    tol: float = 1e-6

    @property
    def consistent(self):
        return (abs(self.residual_alpha_orthogonality) <= self.tol
                and abs(self.residual_phi_psi) <= self.tol)

    def to_json(self):
        return {
            "phase_applied_deg": math.degrees(self.phase_applied),
            "residual_alpha_orthogonality_deg": math.degrees(self.residual_alpha_orthogonality),
            "residual_phi_psi_deg": math.degrees(self.residual_phi_psi),
            "phi_deg": math.degrees(self.phi),
            "offset_misfit_uT": self.offset_misfit,
            "degenerate_offset": self.degenerate_offset,
            "degenerate_gradient": self.degenerate_gradient,
            "ambiguous_phase": self.ambiguous_phase,
            "consistent": self.consistent,
        }


def _axis_residual(u, v, rel_floor):
    # deviation of v from being perpendicular to u, in [-pi/2, pi/2)
    nu, nv = np.hypot(*u), np.hypot(*v)
    if nu <= rel_floor or nv <= rel_floor:
        return 0.0
    au = math.atan2(u[1], u[0])
    av = math.atan2(v[1], v[0])
    return wrap_half_open(av - au + math.pi / 2, -math.pi / 2)[0]


def canonicalize(raw, tol=1e-6, strict=False):
    """Reduce a raw first-order expansion to the five-parameter form.

    Parameters
    ----------
    raw : RawExpansion
    tol : float
        Residual tolerance in rad used for ``CanonicalDiagnostics.consistent``.
    strict : bool
        Raise :class:`DegenerateGradient` / :class:`AmbiguousPhase` instead of
        only flagging them.

    Returns
    -------
    (QuadrupoleParams, CanonicalDiagnostics)
        ``x0``, ``z0`` and ``freq`` are left at zero.
    """
    a = raw.offset()
    c = raw.gradient_coords()
    gnorm = float(np.sqrt(np.sum(np.abs(c) ** 2)))
    anorm = float(np.sqrt(np.sum(np.abs(a) ** 2)))
    scale = max(gnorm, anorm)

    degenerate_gradient = gnorm <= 1e-9 * anorm or gnorm == 0.0
    if degenerate_gradient and strict:
        raise DegenerateGradient(f"gradient norm {gnorm:.3e} μT/μm is negligible")

    ambiguous = False
    if degenerate_gradient:
        # psi = 0 convention: rotate the offset to be mostly imaginary
        s = a @ a
        chi = (-0.5 * np.angle(s) if abs(s) > 1e-12 * anorm ** 2 else 0.0) + math.pi / 2
    else:
        s = c @ c
        if abs(s) <= 1e-9 * gnorm ** 2:
            ambiguous = True
            if strict:
                raise AmbiguousPhase("circularly polarized gradient: real part maximum is degenerate")
            chi = 0.0
        else:
            chi = -0.5 * float(np.angle(s))

    phase = np.exp(1j * chi)
    a1, c1 = phase * a, phase * c

    if degenerate_gradient:
        Bp, beta, psi = 0.0, 0.0, 0.0
    else:
        u, v = c1.real, c1.imag
        beta = math.atan2(u[1], u[0])
        g_r = float(np.hypot(*u))
        g_i = float(v @ np.array([math.sin(beta), -math.cos(beta)]))
        Bp = math.hypot(g_r, g_i)
        psi = math.atan2(g_i, g_r)
        beta, k = wrap_half_open(beta, 0.0)
        if k % 2:
            # Q(beta) = -Q(beta - pi): absorb with a global sign flip
            a1 = -a1
            chi += math.pi

    P = complex(a1.real[0], a1.real[1])
    Qz = complex(a1.imag[0], a1.imag[1])
    W = math.sin(psi) * P - 1j * math.cos(psi) * Qz
    B = abs(W)
    alpha = math.atan2(W.imag, W.real) if B > 0 else 0.0
    alpha, k = wrap_half_open(alpha, 0.0)
    if k % 2:
        B = -B

    p = QuadrupoleParams(B=B, Bp=Bp, alpha=alpha, beta=beta, psi=psi)
    misfit = float(np.sqrt(np.sum(np.abs(a1 - p.offset()) ** 2)))

    degenerate_offset = anorm <= 1e-9 * gnorm or anorm == 0.0
    floor = 1e-12 * max(scale, 1e-300)
    res_alpha = _axis_residual(a1.real, a1.imag, floor)
    if B != 0 and not degenerate_offset:
        e_a = unit_vector(alpha)
        e_am = unit_vector(alpha - math.pi / 2)
        phi = math.atan2(float(a1.imag @ e_am) / B, float(a1.real @ e_a) / B)
        res_phi = wrap_pi(phi - (psi - math.pi / 2))
    else:
        phi = psi - math.pi / 2
        res_phi = 0.0

    diag = CanonicalDiagnostics(
        phase_applied=wrap_half_open(chi, 0.0, TWO_PI)[0],
        residual_alpha_orthogonality=res_alpha,
        residual_phi_psi=res_phi,
        phi=phi,
        offset_misfit=misfit,
        degenerate_offset=degenerate_offset,
        degenerate_gradient=degenerate_gradient,
        ambiguous_phase=ambiguous,
        tol=tol,
    )
    return p, diag


def rotate_frame(p, theta):
    """Express the same physical field in axes rotated by ``theta``.

    The rotation is active: a field vector at ``r`` maps to ``R b`` at ``R r``.
    Offsets turn with ``theta`` and quadrupoles with ``2 theta``.
    """
    c, s = math.cos(theta), math.sin(theta)
    x0 = c * p.x0 - s * p.z0
    z0 = s * p.x0 + c * p.z0
    return normalize(replace(p, alpha=p.alpha + theta, beta=p.beta + 2 * theta, x0=x0, z0=z0))


class Ellipse(NamedTuple):
    major: float
    minor: float
    orientation: float  # rad in [0, pi); NaN when circular


def polarization_ellipse(v):
    """Semi-axes and orientation of the curve traced by ``Re{v exp(i w t)}``."""
    v = np.asarray(v, dtype=complex)
    n2 = float(np.sum(np.abs(v) ** 2))
    s = v @ v
    if n2 == 0.0:
        return Ellipse(0.0, 0.0, math.nan)
    circular = abs(s) <= 1e-12 * n2
    theta = 0.0 if circular else -0.5 * float(np.angle(s))
    w = np.exp(1j * theta) * v
    major = float(np.hypot(*w.real))
    minor = float(np.hypot(*w.imag))
    if circular:
        return Ellipse(major, minor, math.nan)
    orientation = wrap_half_open(math.atan2(w.real[1], w.real[0]), 0.0)[0]
    return Ellipse(major, minor, orientation)


def time_averaged_intensity(bx, bz):
    """Time average of ``|Re{b exp(i w t)}|^2`` in μT^2."""
    return 0.5 * (np.abs(bx) ** 2 + np.abs(bz) ** 2)
