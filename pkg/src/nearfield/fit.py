"""Least-squares estimation of quadrupole parameters from shift maps."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares

from .errors import NotConverged, RankDeficient, ResonanceProximity, Underdetermined
from .hyperfine import DEFAULT_B0_MT, DEFAULT_TILT_DEG, polarization_triad
from .model import QuadrupoleParams, canonicalize
from .shiftmap import ShiftResponse

BASE_NAMES = ("B", "Bp", "alpha", "beta", "psi", "x0", "z0")
ANGLE_NAMES = ("alpha", "beta", "psi")

DEFAULT_SIGMA_KHZ = 1.0
# residual assigned to every node of a map whose drive sits on a resonance
RESONANCE_PENALTY = 1e6

# relative Jacobian step and absolute floors per parameter kind
REL_STEP = 1e-3
STEP_FLOORS = {"B": 1e-3, "Bp": 1e-3, "alpha": 1e-4, "beta": 1e-4, "psi": 1e-4,
               "x0": 1e-3, "z0": 1e-3, "power": 1e-3}

START_ALPHAS_DEG = (0.0, 45.0, 90.0, 135.0)
START_BETAS_DEG = (0.0, 45.0, 90.0, 135.0)
START_PSIS_DEG = (-30.0, 0.0, 30.0)

# starts refined to convergence after the short screening pass
N_REFINED = 4
SCREEN_NFEV = 6
MAX_NFEV = 400
RANK_RTOL = 1e-10


def thread_count():
    """Worker threads, capped by ``NEARFIELD_THREADS``."""
    n = os.cpu_count() or 1
    env = os.environ.get("NEARFIELD_THREADS")
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            pass
    return n


def _kind(name):
    return "power" if name.startswith("power") else name


class _MapModel:
    """Flattened unmasked nodes of one map plus its polarization response."""

    def __init__(self, m, B0, tilt_deg):
        X, Z = m.mesh()
        keep = m.mask
        # row-major node order over the (x, z) grid
        self.x = X[keep]
        self.z = Z[keep]
        self.data = m.shift[keep]
        if m.sigma is not None:
            sig = m.sigma[keep]
            sig = np.where(np.isfinite(sig) & (sig > 0), sig, DEFAULT_SIGMA_KHZ)
        else:
            sig = np.full(self.data.shape, DEFAULT_SIGMA_KHZ)
        self.sigma = sig
        self.map = m
        try:
            self.response = ShiftResponse(m.transition, m.f_drive, B0, tilt_deg)
            self.resonant = False
        except ResonanceProximity:
            self.response = None
            self.resonant = True
        if not self.resonant:
            e1, e2, n = polarization_triad(self.response.axis)
            s = 1 / math.sqrt(2)
            # rows map (Bx, Bz) onto (b_pi, b_+, b_-)
            self.proj = np.array([[n[0], n[2]],
                                  [s * (e1[0] - 1j * e2[0]), s * (e1[2] - 1j * e2[2])],
                                  [s * (e1[0] + 1j * e2[0]), s * (e1[2] + 1j * e2[2])]])
        # the signed shift is a quadratic polynomial in position; evaluate it
        # on monomials about the node centroid
        self.xc = float(self.x.mean()) if len(self.x) else 0.0
        self.zc = float(self.z.mean()) if len(self.z) else 0.0
        u = self.x - self.xc
        w = self.z - self.zc
        self.monomials = np.column_stack([np.ones_like(u), u, w, u * u, u * w, w * w])

    def coefficients(self, B, Bp, alpha, beta, psi, x0, z0):
        """Quadratic-form coefficients (kHz) of the signed shift at unit power."""
        p = QuadrupoleParams(B, Bp, alpha, beta, psi)
        G = p.gradient()
        # b(x, z) = c0 + G (r - r0) about the centroid
        c0 = p.offset() + G @ np.array([self.xc - x0, self.zc - z0])
        u = self.proj @ c0
        v = self.proj @ G[:, 0]
        w = self.proj @ G[:, 1]
        k = self.response.k
        coef = np.array([
            k @ np.abs(u) ** 2,
            2 * k @ np.real(u * v.conj()),
            2 * k @ np.real(u * w.conj()),
            k @ np.abs(v) ** 2,
            2 * k @ np.real(v * w.conj()),
            k @ np.abs(w) ** 2,
        ])
        return 1e3 * coef

    def signed(self, B, Bp, alpha, beta, psi, x0, z0, amp2):
        """Signed transition shift in kHz at the nodes."""
        return amp2 * (self.monomials @ self.coefficients(B, Bp, alpha, beta, psi, x0, z0))


@dataclass
class FitProblem:
    """Joint fit of one or more shift maps.

    Parameters
    ----------
    maps : list of ShiftMap
        Map 0 is the power reference; every further map gets its own
        ``power_dB_<i>`` offset relative to it.
    initial : QuadrupoleParams, optional
        Single starting point. When omitted the deterministic start grid is used.
    initial_power_dB : sequence of float, optional
        Starting power offsets for maps 1.. (default: header differences).
    free : iterable of str, optional
        Names of the parameters to vary; the rest stay at their initial value.
    bounds : dict, optional
        ``name -> (lo, hi)``; angles in rad.
    """

    maps: list
    initial: QuadrupoleParams | None = None
    initial_power_dB: tuple | None = None
    free: tuple | None = None
    bounds: dict = field(default_factory=dict)
    B0: float = DEFAULT_B0_MT
    tilt_deg: float = DEFAULT_TILT_DEG

    def __post_init__(self):
        self.maps = list(self.maps)
        if not self.maps:
            raise ValueError("a fit needs at least one shift map")
        self.names = BASE_NAMES + tuple(f"power_dB_{i}" for i in range(1, len(self.maps)))
        if self.free is None:
            self.free = self.names
        unknown = set(self.free) - set(self.names)
        if unknown:
            raise ValueError(f"unknown free parameters: {', '.join(sorted(unknown))}")
        self.free = tuple(n for n in self.names if n in self.free)
        if not self.free:
            raise ValueError("no free parameters")
        self.models = [_MapModel(m, self.B0, self.tilt_deg) for m in self.maps]
        if self.initial_power_dB is None:
            ref = self.maps[0].power_dB
            self.initial_power_dB = tuple(m.power_dB - ref for m in self.maps[1:])
        if len(self.initial_power_dB) != len(self.maps) - 1:
            raise ValueError("need one initial power offset per extra map")
        if self.n_points <= len(self.free):
            raise Underdetermined(
                f"{self.n_points} unmasked nodes for {len(self.free)} free parameters")

    @property
    def n_points(self):
        return sum(len(mm.data) for mm in self.models)

    @property
    def freq(self):
        return self.maps[0].f_drive

    def full_vector(self, params, power_dB):
        return np.array([params.B, params.Bp, params.alpha, params.beta, params.psi,
                         params.x0, params.z0, *power_dB], dtype=float)

    def free_index(self):
        return [self.names.index(n) for n in self.free]

    def bounds_arrays(self):
        lo = np.array([self.bounds.get(n, (-np.inf, np.inf))[0] for n in self.free], dtype=float)
        hi = np.array([self.bounds.get(n, (-np.inf, np.inf))[1] for n in self.free], dtype=float)
        return lo, hi


def residual_vector(full, prob):
    """Weighted magnitude residuals ``(|model| - shift) / sigma``, map by map."""
    out = []
    for i, mm in enumerate(prob.models):
        if mm.resonant:
            out.append(np.full(mm.data.shape, RESONANCE_PENALTY))
            continue
        base, amp2 = _map_state(full, i)
        model = np.abs(mm.signed(*base, amp2))
        out.append((model - mm.data) / mm.sigma)
    return np.concatenate(out)


def _steps(prob, x):
    steps = np.empty(len(prob.free))
    for j, name in enumerate(prob.free):
        steps[j] = max(REL_STEP * abs(x[j]), STEP_FLOORS[_kind(name)])
    return steps


def _map_state(full, i):
    """Per-map quantities ``(params..., amp2)`` taken from a full vector."""
    amp2 = 1.0 if i == 0 else 10.0 ** (full[6 + i] / 10.0)
    return full[:7], amp2


def numerical_jacobian(prob, full, method="chain"):
    """Central-difference Jacobian of the residuals over the free parameters.

    ``method="direct"`` differences the full residual vector. ``"chain"``
    differences the six quadratic-form coefficients of every map with the
    same steps and maps them onto the nodes; the two agree except at nodes
    where the signed shift changes sign within a step.
    """
    idx = prob.free_index()
    steps = _steps(prob, full[idx])
    if method == "direct":
        cols = []
        for j, h in zip(idx, steps):
            up = full.copy()
            dn = full.copy()
            up[j] += h
            dn[j] -= h
            cols.append((residual_vector(up, prob) - residual_vector(dn, prob)) / (2 * h))
        return np.column_stack(cols)
    if method != "chain":
        raise ValueError(f"unknown Jacobian method {method!r}")
    blocks = []
    for i, mm in enumerate(prob.models):
        if mm.resonant:
            blocks.append(np.zeros((len(mm.data), len(idx))))
            continue
        base, amp2 = _map_state(full, i)
        coef = mm.coefficients(*base)
        sign = np.sign(mm.monomials @ coef)
        dcoef = np.zeros((6, len(idx)))
        damp = np.zeros(len(idx))
        for col, (j, h) in enumerate(zip(idx, steps)):
            up = full.copy()
            dn = full.copy()
            up[j] += h
            dn[j] -= h
            if j < 7:
                dcoef[:, col] = (mm.coefficients(*up[:7]) - mm.coefficients(*dn[:7])) / (2 * h)
            elif j == 6 + i:
                damp[col] = (_map_state(up, i)[1] - _map_state(dn, i)[1]) / (2 * h)
        d_signed = amp2 * (mm.monomials @ dcoef) + np.outer(mm.monomials @ coef, damp)
        blocks.append(sign[:, None] * d_signed / mm.sigma[:, None])
    return np.vstack(blocks)


def parameter_covariance(J, residuals, names):
    """``s^2 (J^T J)^-1`` with ``s^2 = chi2 / (n - k)``.

    Raises
    ------
    RankDeficient
        If ``J`` loses column rank; the message names the null combination.
    """
    n, k = J.shape
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    if s[0] == 0 or s[-1] <= RANK_RTOL * s[0]:
        v = Vt[-1]
        order = np.argsort(-np.abs(v))
        combo = " ".join(f"{v[i]:+.3g}*{names[i]}" for i in order if abs(v[i]) > 0.05)
        raise RankDeficient(f"Jacobian is rank deficient along {combo}", combination=combo)
    chi2 = float(residuals @ residuals)
    s2 = chi2 / (n - k) if n > k else math.nan
    inv = (Vt.T / s ** 2) @ Vt
    cov = s2 * inv
    return 0.5 * (cov + cov.T)


@dataclass
class FitResult:
    params: QuadrupoleParams
    power_ratio_dB: list
    std_errors: dict
    covariance: np.ndarray
    free: tuple
    chi2: float
    n_points: int
    converged: bool
    starts_tried: int
    start_chi2: list = field(default_factory=list)

    def to_json(self):
        errs = {}
        for name, val in self.std_errors.items():
            errs[_report_key(name)] = math.degrees(val) if name in ANGLE_NAMES else val
        return {
            "params": self.params.to_json(),
            "power_ratio_dB": list(self.power_ratio_dB),
            "std_errors": errs,
            "chi2": self.chi2,
            "n_points": self.n_points,
            "converged": self.converged,
            "starts_tried": self.starts_tried,
        }


_REPORT_KEYS = {"B": "B_uT", "Bp": "Bp_uT_per_um", "alpha": "alpha_deg", "beta": "beta_deg",
                "psi": "psi_deg", "x0": "x0_um", "z0": "z0_um", "ratio": "ratio_um"}


def _report_key(name):
    return _REPORT_KEYS.get(name, name)


# -- starting points ---------------------------------------------------------

def _reference_model(prob):
    """Map whose response has one sign (an E-like map) or map 0."""
    for mm in prob.models:
        if not mm.resonant and (np.all(mm.response.k > 0) or np.all(mm.response.k < 0)):
            return mm
    return next((mm for mm in prob.models if not mm.resonant), prob.models[0])


def _paraboloid_start(mm):
    """Minimum position and ``B/B'`` guess from ``shift ~ c0 + c2 |r - r0|^2``."""
    i = int(np.argmin(mm.data))
    x0, z0 = float(mm.x[i]), float(mm.z[i])
    r2 = (mm.x - x0) ** 2 + (mm.z - z0) ** 2
    A = np.column_stack([np.ones_like(r2), r2])
    (c0, c2), *_ = np.linalg.lstsq(A, mm.data, rcond=None)
    ratio = math.sqrt(c0 / c2) if c0 > 0 and c2 > 0 else 5.0
    return x0, z0, ratio


def _scale_amplitude(prob, full):
    """Rescale ``B`` and ``Bp`` so the model matches the data scale."""
    r = residual_vector(full, prob)
    model = []
    data = []
    offset = 0
    for mm in prob.models:
        n = len(mm.data)
        model.append((r[offset:offset + n] * mm.sigma + mm.data) / mm.sigma)
        data.append(mm.data / mm.sigma)
        offset += n
    model = np.concatenate(model)
    data = np.concatenate(data)
    denom = float(model @ model)
    if denom <= 0:
        return full
    s = max(float(model @ data) / denom, 1e-12)
    out = full.copy()
    out[0] *= math.sqrt(s)
    out[1] *= math.sqrt(s)
    return out


def start_points(prob):
    """Deterministic list of full parameter vectors to start from."""
    power = tuple(prob.initial_power_dB)
    if prob.initial is not None:
        return [prob.full_vector(prob.initial, power)]
    x0, z0, ratio = _paraboloid_start(_reference_model(prob))
    starts = []
    for a in START_ALPHAS_DEG:
        for b in START_BETAS_DEG:
            for s in START_PSIS_DEG:
                p = QuadrupoleParams(ratio, 1.0, math.radians(a), math.radians(b),
                                     math.radians(s), x0, z0, prob.freq)
                full = prob.full_vector(p, power)
                if "B" in prob.free or "Bp" in prob.free:
                    full = _scale_amplitude(prob, full)
                starts.append(full)
    return starts


# -- optimizer ---------------------------------------------------------------

def _run(prob, full, max_nfev):
    idx = prob.free_index()

    def fun(x):
        y = full.copy()
        y[idx] = x
        return residual_vector(y, prob)

    def jac(x):
        y = full.copy()
        y[idx] = x
        return numerical_jacobian(prob, y)

    lo, hi = prob.bounds_arrays()
    x0 = np.clip(full[idx], lo, hi)
    # MINPACK Levenberg-Marquardt unless bounds are active
    bounded = bool(np.any(np.isfinite(lo)) or np.any(np.isfinite(hi)))
    method = "trf" if bounded else "lm"
    sol = least_squares(fun, x0, jac=jac, bounds=(lo, hi), method=method, x_scale="jac",
                        xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=max_nfev)
    y = full.copy()
    y[idx] = sol.x
    return y, float(2 * sol.cost), sol.status > 0


def _chi2(prob, full):
    r = residual_vector(full, prob)
    return float(r @ r)


def fit_parameters(prob, strict=False):
    """Multi-start damped least squares; the lowest chi2 wins.

    Starts are screened with a short run and the best :data:`N_REFINED` are
    refined to convergence. With ``strict`` a non-converged best fit raises
    :class:`NotConverged` carrying the result.
    """
    starts = start_points(prob)
    start_chi2 = [_chi2(prob, s) for s in starts]
    workers = min(thread_count(), len(starts))

    def screen(s):
        return _run(prob, s, SCREEN_NFEV)

    if len(starts) > N_REFINED:
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                screened = list(ex.map(screen, starts))
        else:
            screened = [screen(s) for s in starts]
        # stable sort keeps ties in start order
        order = sorted(range(len(starts)), key=lambda i: (screened[i][1], i))[:N_REFINED]
        candidates = [screened[i][0] for i in order]
    else:
        candidates = starts

    def refine(s):
        return _run(prob, s, MAX_NFEV)

    if workers > 1 and len(candidates) > 1:
        with ThreadPoolExecutor(min(workers, len(candidates))) as ex:
            refined = list(ex.map(refine, candidates))
    else:
        refined = [refine(s) for s in candidates]
    best = min(range(len(refined)), key=lambda i: (refined[i][1], i))
    full, chi2, converged = refined[best]
    result = _finish(prob, full, chi2, converged, len(starts), start_chi2)
    if strict and not converged:
        raise NotConverged("least squares hit the evaluation limit", result=result)
    return result


def _finish(prob, full, chi2, converged, n_starts, start_chi2):
    J = numerical_jacobian(prob, full)
    r = residual_vector(full, prob)
    cov = parameter_covariance(J, r, prob.free)
    errs = {name: float(math.sqrt(max(cov[i, i], 0.0))) for i, name in enumerate(prob.free)}
    raw = QuadrupoleParams(*(float(v) for v in full[:7]), freq=prob.freq)
    # shift magnitudes ignore the global phase; report the canonical representative
    canon, _ = canonicalize(raw.raw())
    params = replace(canon, x0=raw.x0, z0=raw.z0, freq=raw.freq)
    # B/B' error by the delta method; sign conventions cancel in the ratio
    grad = np.zeros(len(prob.free))
    if "B" in prob.free:
        grad[prob.free.index("B")] = 1.0 / raw.Bp
    if "Bp" in prob.free:
        grad[prob.free.index("Bp")] = -raw.B / raw.Bp ** 2
    if np.any(grad):
        errs["ratio"] = float(math.sqrt(max(grad @ cov @ grad, 0.0)))
    return FitResult(params=params, power_ratio_dB=[float(v) for v in full[7:]],
                     std_errors=errs, covariance=cov, free=prob.free, chi2=chi2,
                     n_points=prob.n_points, converged=bool(converged),
                     starts_tried=n_starts, start_chi2=start_chi2)
