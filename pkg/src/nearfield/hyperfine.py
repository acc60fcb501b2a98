"""
Ground-state hyperfine structure of 9Be+ in a static field and its AC Zeeman
response to an oscillating magnetic field.

All energies are frequencies E/h in MHz, static fields in mT, oscillating field
amplitudes in μT. The Hamiltonian is

    H/h = A (I.J) + (muB B0 / h) (gJ J_n + gI' I_n)

in the product basis ``|m_I, m_J>`` quantized along the static field. An
oscillating field ``Re{b exp(i w t)}`` couples through

    V/h = (muB / h) (gJ J + gI' I) . b

and the second-order level shift (rotating and counter-rotating terms) is

    dE_i = 1/4 sum_j |V_ij|^2 / (E_i - E_j + f) + |V_ji|^2 / (E_i - E_j - f).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import AmbiguousConnection, NoSignChange, ResonanceProximity, UnknownLevel


@dataclass(frozen=True)
class HyperfineConstants:
    """Pinned 9Be+ constants; the Zeeman term is ``muB B0 (gJ m_J + gI' m_I)``."""

    A_hfs: float = -625.008837      # MHz
    gJ: float = 2.00226206
    gI_prime: float = 2.1349e-4
    muB: float = 13.996245          # MHz / mT
    I_nuc: float = 1.5
    J_el: float = 0.5

    @property
    def muB_per_uT(self):
        return self.muB * 1e-3


BE9 = HyperfineConstants()

DEFAULT_B0_MT = 22.3
DEFAULT_TILT_DEG = 12.0
RESONANCE_GUARD_MHZ = 0.01


def bias_axis(tilt_deg=DEFAULT_TILT_DEG):
    """Static-field direction in the (y, z) plane, tilted from z towards y."""
    t = math.radians(tilt_deg)
    return np.array([0.0, math.sin(t), math.cos(t)])


# -- angular momentum --------------------------------------------------------

def _spin_ops(j):
    m = np.arange(j, -j - 1, -1)
    dim = len(m)
    jz = np.diag(m)
    jp = np.zeros((dim, dim))
    for k in range(1, dim):
        # <m+1| J+ |m>
        jp[k - 1, k] = math.sqrt(j * (j + 1) - m[k] * (m[k] + 1))
    return jz, jp, jp.T.copy(), m


def product_basis(c=BE9):
    """Operators on ``|m_I> (x) |m_J>`` and the ``(m_I, m_J)`` labels."""
    Iz, Ip, Im, mi = _spin_ops(c.I_nuc)
    Jz, Jp, Jm, mj = _spin_ops(c.J_el)
    eI = np.eye(len(mi))
    eJ = np.eye(len(mj))
    ops = {
        "Iz": np.kron(Iz, eJ), "Ip": np.kron(Ip, eJ), "Im": np.kron(Im, eJ),
        "Jz": np.kron(eI, Jz), "Jp": np.kron(eI, Jp), "Jm": np.kron(eI, Jm),
    }
    labels = [(a, b) for a in mi for b in mj]
    return ops, labels


def hamiltonian(c, B0):
    ops, labels = product_basis(c)
    IdotJ = ops["Iz"] @ ops["Jz"] + 0.5 * (ops["Ip"] @ ops["Jm"] + ops["Im"] @ ops["Jp"])
    H = c.A_hfs * IdotJ + c.muB * B0 * (c.gJ * ops["Jz"] + c.gI_prime * ops["Iz"])
    return H, ops, labels


# -- levels ------------------------------------------------------------------

LEVEL_ORDER = ((2, 2), (2, 1), (2, 0), (2, -1), (2, -2), (1, 1), (1, 0), (1, -1))


class Level(NamedTuple):
    F: int
    mF: int
    energy: float


@dataclass(frozen=True, eq=False)
class LevelSet:
    """Eigenstates of the ground manifold at one static field.

    ``vectors[:, k]`` is level ``k`` in the product basis; levels follow
    :data:`LEVEL_ORDER`. ``F`` is the adiabatic low-field label.
    """

    B0: float
    axis: np.ndarray
    levels: tuple
    vectors: np.ndarray
    constants: HyperfineConstants

    @property
    def energies(self):
        return np.array([lv.energy for lv in self.levels])

    @property
    def labels(self):
        return [(lv.F, lv.mF) for lv in self.levels]

    @property
    def m(self):
        return np.array([lv.mF for lv in self.levels])

    def index(self, label):
        try:
            return self.labels.index(tuple(label))
        except ValueError:
            raise UnknownLevel(f"no level {label}") from None

    def energy(self, label):
        return self.levels[self.index(label)].energy

    def coupling_operators(self):
        """``(M_pi, M_plus / sqrt 2, M_minus / sqrt 2)`` in the eigenbasis (MHz/μT).

        ``M = muB (gJ J + gI' I)``; ``V = b_pi M_pi + b_+ M_+/sqrt2 + b_- M_-/sqrt2``.
        """
        c = self.constants
        ops, _ = product_basis(c)
        mu = c.muB_per_uT
        U = self.vectors
        Mn = mu * (c.gJ * ops["Jz"] + c.gI_prime * ops["Iz"])
        Mp = mu * (c.gJ * ops["Jp"] + c.gI_prime * ops["Ip"]) / math.sqrt(2)
        Mm = mu * (c.gJ * ops["Jm"] + c.gI_prime * ops["Im"]) / math.sqrt(2)
        return tuple(U.conj().T @ M @ U for M in (Mn, Mp, Mm))


def diagonalize_ground_state(c=BE9, B0=DEFAULT_B0_MT, axis=(0.0, 0.0, 1.0)):
    """Diagonalize the 8-level manifold block by block in total ``m``."""
    if B0 < 0:
        raise ValueError("B0 must be non-negative")
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    H, _, labels = hamiltonian(c, B0)
    m_tot = np.array([mi + mj for mi, mj in labels])
    F_up = int(round(c.I_nuc + c.J_el))
    vectors = np.zeros((len(labels), len(labels)))
    found = {}
    for m in np.unique(m_tot):
        idx = np.flatnonzero(np.isclose(m_tot, m))
        w, v = np.linalg.eigh(H[np.ix_(idx, idx)])
        if len(idx) == 1:
            branches = [F_up]
        else:
            # the F = I + 1/2 branch lies on the side of sign(A) at every field
            branches = [F_up - 1, F_up] if c.A_hfs > 0 else [F_up, F_up - 1]
        for k, F in enumerate(branches):
            vec = np.zeros(len(labels))
            vec[idx] = v[:, k]
            # deterministic phase: largest component positive
            vec *= np.sign(vec[np.argmax(np.abs(vec))])
            found[(F, int(round(m)))] = (float(w[k]), vec)
    levels = []
    for k, label in enumerate(LEVEL_ORDER):
        e, vec = found[label]
        vectors[:, k] = vec
        levels.append(Level(label[0], label[1], e))
    return LevelSet(B0=B0, axis=axis, levels=tuple(levels), vectors=vectors, constants=c)


def breit_rabi_energy(c, B0, F, mF):
    """Closed-form energy for J = 1/2 (adiabatic ``F`` label)."""
    A = c.A_hfs
    I = c.I_nuc
    dE = A * (I + 0.5)
    y = c.muB * B0
    if abs(mF) == I + 0.5:
        s = 1 if mF > 0 else -1
        return A * I / 2 + s * y * (c.gJ / 2 + c.gI_prime * I)
    x = (c.gJ - c.gI_prime) * y / dE
    root = math.sqrt(1 + 4 * mF * x / (2 * I + 1) + x * x)
    sign = 1 if F == I + 0.5 else -1
    return -dE / (2 * (2 * I + 1)) + c.gI_prime * y * mF + sign * dE / 2 * root


# -- transitions -------------------------------------------------------------

@dataclass(frozen=True)
class TransitionSpec:
    lower: tuple
    upper: tuple
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(int(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(int(v) for v in self.upper))
        for lab in (self.lower, self.upper):
            if lab not in LEVEL_ORDER:
                raise UnknownLevel(f"no level {lab}")
        if abs(self.delta_m) > 1:
            raise ValueError(f"|delta m| = {abs(self.delta_m)} violates the dipole selection rule")

    @property
    def delta_m(self):
        return self.upper[1] - self.lower[1]

    @property
    def label(self):
        return self.name or f"({self.lower[0]},{self.lower[1]})-({self.upper[0]},{self.upper[1]})"


# Assumed lettering: transitions A..E in order of increasing frequency
# at 22.3 mT. Only B is identified explicitly; the rest are consistent with the
# detuning signs described for a drive 10 MHz above B.
TRANSITIONS = {
    "A": TransitionSpec((2, 2), (1, 1), "A"),
    "B": TransitionSpec((2, 1), (1, 1), "B"),
    "C": TransitionSpec((2, 1), (1, 0), "C"),
    "D": TransitionSpec((2, 0), (1, 1), "D"),
    "E": TransitionSpec((2, 0), (1, 0), "E"),
}


def load_transition_map(path):
    """Read ``{"A": [[F, m], [F, m]], ...}`` overrides for the letter labels."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return {k: TransitionSpec(tuple(v[0]), tuple(v[1]), k) for k, v in raw.items()}


def parse_transition(text, mapping=None):
    """Accept a letter (``B``) or an explicit ``(2,1)-(1,1)`` pair."""
    mapping = TRANSITIONS if mapping is None else mapping
    text = text.strip()
    if text in mapping:
        return mapping[text]
    try:
        lo, hi = text.replace(" ", "").split(")-(")
        lo = tuple(int(v) for v in lo.strip("(").split(","))
        hi = tuple(int(v) for v in hi.strip(")").split(","))
    except ValueError:
        raise UnknownLevel(f"cannot parse transition {text!r}") from None
    return TransitionSpec(lo, hi)


def transition_frequency(ls, t):
    return abs(ls.energy(t.upper) - ls.energy(t.lower))


def all_transitions(ls):
    """All ``|dm| <= 1`` pairs with their frequencies, lower label first."""
    out = []
    labels = ls.labels
    for a in range(len(labels)):
        for b in range(a + 1, len(labels)):
            la, lb = labels[a], labels[b]
            if abs(la[1] - lb[1]) <= 1:
                lo, hi = (la, lb) if ls.energy(la) <= ls.energy(lb) else (lb, la)
                t = TransitionSpec(lo, hi)
                out.append((t, transition_frequency(ls, t)))
    return out


def clock_field(c, t, search=(10.0, 30.0), tol=1e-4, step=1e-3):
    """Static field where ``d f_t / d B0`` vanishes, by bisection."""

    def slope(B):
        up = transition_frequency(diagonalize_ground_state(c, B + step), t)
        dn = transition_frequency(diagonalize_ground_state(c, max(B - step, 0.0)), t)
        return (up - dn) / (B + step - max(B - step, 0.0))

    lo, hi = float(search[0]), float(search[1])
    s_lo, s_hi = slope(lo), slope(hi)
    if s_lo == 0:
        return lo
    if s_hi == 0:
        return hi
    if (s_lo > 0) == (s_hi > 0):
        raise NoSignChange(f"df/dB0 does not change sign on [{lo}, {hi}] mT for {t.label}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        s_mid = slope(mid)
        if (s_mid > 0) == (s_lo > 0):
            lo, s_lo = mid, s_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- polarization ------------------------------------------------------------

class PolarizationAmplitudes(NamedTuple):
    b_pi: np.ndarray
    b_plus: np.ndarray
    b_minus: np.ndarray

    def scaled(self, factor):
        return PolarizationAmplitudes(self.b_pi * factor, self.b_plus * factor, self.b_minus * factor)

    def only(self, which):
        """Keep a subset of components, e.g. ``only("pi")`` or ``only("sigma")``."""
        z = np.zeros_like(np.asarray(self.b_pi, dtype=complex))
        keep_pi = which in ("pi",)
        keep_sig = which in ("sigma",)
        return PolarizationAmplitudes(self.b_pi if keep_pi else z,
                                      self.b_plus if keep_sig else z,
                                      self.b_minus if keep_sig else z)


def polarization_triad(axis):
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    e1 = np.array([1.0, 0.0, 0.0]) - n[0] * n
    if np.linalg.norm(e1) < 1e-6:
        e1 = np.array([0.0, 1.0, 0.0]) - n[1] * n
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2, n


def decompose_polarization(b, axis):
    """pi / sigma+ / sigma- amplitudes of complex field vector(s) ``b`` (``(..., 3)``)."""
    b = np.asarray(b, dtype=complex)
    e1, e2, n = polarization_triad(axis)
    b1 = b @ e1
    b2 = b @ e2
    return PolarizationAmplitudes(b @ n, (b1 - 1j * b2) / math.sqrt(2), (b1 + 1j * b2) / math.sqrt(2))


def in_plane_polarization(bx, bz, axis):
    """Decompose ``(Bx, 0, Bz)`` phasors without building the 3-vectors."""
    e1, e2, n = polarization_triad(axis)
    bx = np.asarray(bx, dtype=complex)
    bz = np.asarray(bz, dtype=complex)
    b1 = bx * e1[0] + bz * e1[2]
    b2 = bx * e2[0] + bz * e2[2]
    return PolarizationAmplitudes(bx * n[0] + bz * n[2],
                                  (b1 - 1j * b2) / math.sqrt(2), (b1 + 1j * b2) / math.sqrt(2))


# -- AC Zeeman shifts --------------------------------------------------------

def _check_resonance(E, coupled, f_drive, guard):
    d = E[:, None] - E[None, :]
    for sign in (1, -1):
        det = np.abs(d + sign * f_drive)
        bad = coupled & (det < guard)
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise ResonanceProximity(
                f"drive {f_drive} MHz within {det[i, j]:.3g} MHz of the {i}<->{j} resonance",
                detuning=float(det[i, j]))


def _denominators(E, f_drive, rwa):
    d = E[:, None] - E[None, :]
    with np.errstate(divide="ignore"):
        plus = 1.0 / (d + f_drive)
        minus = 1.0 / (d - f_drive)
    if rwa:
        up = d < 0  # j above i: absorption term only
        plus = np.where(up, plus, 0.0)
        minus = np.where(up, 0.0, minus)
    np.fill_diagonal(plus, 0.0)
    np.fill_diagonal(minus, 0.0)
    return plus, minus


def second_order_shifts(energies, V, f_drive, guard=RESONANCE_GUARD_MHZ, rwa=False):
    """Level shifts (MHz) for ``H = diag(E) + Re{V exp(i 2 pi f t)}``."""
    E = np.asarray(energies, dtype=float)
    V = np.asarray(V, dtype=complex)
    W = np.abs(V) ** 2
    np.fill_diagonal(W, 0.0)
    _check_resonance(E, (W > 0) | (W.T > 0), f_drive, guard)
    plus, minus = _denominators(E, f_drive, rwa)
    return 0.25 * np.sum(W * plus + W.T * minus, axis=1)


def coupling_matrix(ls, pol):
    Mn, Mp, Mm = ls.coupling_operators()
    return complex(pol.b_pi) * Mn + complex(pol.b_plus) * Mp + complex(pol.b_minus) * Mm


def ac_zeeman_shifts(ls, c, pol, f_drive, guard=RESONANCE_GUARD_MHZ, rwa=False):
    """Second-order shift of every level (MHz), in :data:`LEVEL_ORDER`."""
    if c != ls.constants:
        raise ValueError("constants differ from those used to build the LevelSet")
    return second_order_shifts(ls.energies, coupling_matrix(ls, pol), f_drive, guard, rwa)


def transition_shift(ls, level_shifts, t):
    """Change of the (positive) transition frequency given per-level shifts."""
    iu, il = ls.index(t.upper), ls.index(t.lower)
    sign = 1.0 if ls.energies[iu] >= ls.energies[il] else -1.0
    return sign * (level_shifts[..., iu] - level_shifts[..., il])


def level_shift_coefficients(ls, f_drive, guard=RESONANCE_GUARD_MHZ, rwa=False):
    """Per-level response ``K`` (MHz/μT^2), shape ``(8, 3)``.

    ``shift_i = K[i, 0] |b_pi|^2 + K[i, 1] |b_+|^2 + K[i, 2] |b_-|^2`` holds
    exactly because every pair of levels couples through one component only.
    """
    E = ls.energies
    ops = ls.coupling_operators()
    coupled = np.zeros((len(E), len(E)), dtype=bool)
    for M in ops:
        coupled |= np.abs(M) > 1e-15
    np.fill_diagonal(coupled, False)
    _check_resonance(E, coupled, f_drive, guard)
    plus, minus = _denominators(E, f_drive, rwa)
    K = np.empty((len(E), 3))
    for q, M in enumerate(ops):
        W = np.abs(M) ** 2
        np.fill_diagonal(W, 0.0)
        K[:, q] = 0.25 * np.sum(W * plus + W.T * minus, axis=1)
    return K


def transition_shift_coefficients(ls, t, f_drive, guard=RESONANCE_GUARD_MHZ, rwa=False):
    """``(k_pi, k_plus, k_minus)`` with transition shift ``= sum_q k_q |b_q|^2`` (MHz/μT^2)."""
    K = level_shift_coefficients(ls, f_drive, guard, rwa)
    return transition_shift(ls, K.T, t)


# -- Floquet oracle ----------------------------------------------------------

def floquet_matrix(energies, V, f_drive, harmonics):
    E = np.asarray(energies, dtype=float)
    n = len(E)
    orders = np.arange(-harmonics, harmonics + 1)
    size = n * len(orders)
    HF = np.zeros((size, size), dtype=complex)
    for a, m in enumerate(orders):
        blk = slice(a * n, (a + 1) * n)
        HF[blk, blk] = np.diag(E + m * f_drive)
        if a > 0:
            prev = slice((a - 1) * n, a * n)
            HF[blk, prev] = V / 2         # harmonic m couples to m - 1 through V e^{iwt}
            HF[prev, blk] = V.conj().T / 2
    return HF, orders


def floquet_levels(energies, V, f_drive, harmonics=3, min_overlap=0.7):
    """Quasi-energies (MHz) connected to each unperturbed level."""
    if harmonics < 2:
        raise ValueError("harmonics must be >= 2")
    E = np.asarray(energies, dtype=float)
    n = len(E)
    HF, _ = floquet_matrix(E, np.asarray(V, dtype=complex), f_drive, harmonics)
    w, v = np.linalg.eigh(HF)
    center = harmonics * n
    out = np.empty(n)
    for i in range(n):
        weights = np.abs(v[center + i, :]) ** 2
        k = int(np.argmax(weights))
        if weights[k] < min_overlap:
            raise AmbiguousConnection(f"level {i}: best Floquet overlap {weights[k]:.3f} < {min_overlap}")
        out[i] = w[k]
    return out


def floquet_quasi_energies(ls, c, pol, f_drive, harmonics=3):
    if c != ls.constants:
        raise ValueError("constants differ from those used to build the LevelSet")
    return floquet_levels(ls.energies, coupling_matrix(ls, pol), f_drive, harmonics)
