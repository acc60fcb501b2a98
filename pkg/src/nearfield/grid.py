"""Sampled complex fields: loading, polynomial fitting and parameter extraction."""

from __future__ import annotations

import io
import logging
import math
import os
import tempfile
from dataclasses import dataclass, replace

import numpy as np

from .errors import (FormatError, IllConditioned, NoInteriorMinimum, NonRectangular,
                     Underdetermined)
from .model import CanonicalDiagnostics, canonicalize, decompose, field_at, gradient_defect

log = logging.getLogger(__name__)

FIELD_HEADER = ("x_um", "z_um", "re_Bx_uT", "im_Bx_uT", "re_Bz_uT", "im_Bz_uT")
BY_COLUMNS = ("re_By_uT", "im_By_uT")

DEFAULT_HALFWIDTH_UM = 4.0
DEFAULT_ORDER = 10
DEFAULT_SPACING_UM = 0.25
MAX_CONDITION = 1e12
BY_WARN_FRACTION = 0.01


@dataclass(frozen=True, eq=False)
class FieldGrid:
    """Complex in-plane phasors on a rectangular grid.

    ``bx`` and ``bz`` have shape ``(len(xs), len(zs))`` (``indexing='ij'``).
    """

    xs: np.ndarray
    zs: np.ndarray
    bx: np.ndarray
    bz: np.ndarray
    freq: float = 0.0
    by: np.ndarray | None = None

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        zs = np.asarray(self.zs, dtype=float)
        if xs.ndim != 1 or zs.ndim != 1 or len(xs) < 1 or len(zs) < 1:
            raise NonRectangular("axes must be non-empty 1-D arrays")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(zs) <= 0):
            raise NonRectangular("axes must be strictly increasing")
        bx = np.asarray(self.bx, dtype=complex)
        bz = np.asarray(self.bz, dtype=complex)
        if bx.shape != (len(xs), len(zs)) or bz.shape != bx.shape:
            raise NonRectangular(f"sample shape {bx.shape} does not match axes ({len(xs)}, {len(zs)})")
        if not (np.all(np.isfinite(bx)) and np.all(np.isfinite(bz))):
            raise FormatError("field samples must be finite")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "zs", zs)
        object.__setattr__(self, "bx", bx)
        object.__setattr__(self, "bz", bz)
        if self.by is not None:
            object.__setattr__(self, "by", np.asarray(self.by, dtype=complex))

    @property
    def shape(self):
        return self.bx.shape

    def mesh(self):
        return np.meshgrid(self.xs, self.zs, indexing="ij")

    def intensity(self):
        """Time-averaged ``|B|^2`` in μT^2 (in-plane components)."""
        return 0.5 * (np.abs(self.bx) ** 2 + np.abs(self.bz) ** 2)

    def magnitude(self):
        return np.sqrt(np.abs(self.bx) ** 2 + np.abs(self.bz) ** 2)


def grid_axes(center, halfwidth, spacing=DEFAULT_SPACING_UM):
    """Symmetric axis ``center +/- halfwidth`` with the given spacing."""
    n = int(round(2 * halfwidth / spacing))
    return center + spacing * (np.arange(n + 1) - n / 2)


def grid_from_function(fn, xs, zs, freq=0.0):
    X, Z = np.meshgrid(np.asarray(xs, float), np.asarray(zs, float), indexing="ij")
    bx, bz = fn(X, Z)
    return FieldGrid(xs, zs, np.broadcast_to(bx, X.shape).copy(),
                     np.broadcast_to(bz, X.shape).copy(), freq)


def grid_from_params(p, xs, zs):
    return grid_from_function(lambda X, Z: field_at(p, X, Z), xs, zs, p.freq)


def grid_from_wires(ws, xs, zs):
    from .wires import field_of_wires
    return grid_from_function(lambda X, Z: field_of_wires(ws, X, Z), xs, zs, ws.freq)


# -- CSV ---------------------------------------------------------------------

def _parse_comment(line, meta):
    body = line.lstrip("#").strip()
    if "=" in body:
        key, _, value = body.partition("=")
        meta[key.strip()] = value.strip()


def read_table(text, header, optional=()):
    """Parse a comment-annotated CSV with an exact header.

    Returns ``(rows, columns, meta)`` where rows is a float array.
    """
    meta = {}
    rows = []
    columns = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            _parse_comment(line, meta)
            continue
        fields = [f.strip() for f in line.split(",")]
        if columns is None:
            n = len(header)
            if tuple(fields[:n]) != tuple(header) or tuple(fields[n:]) not in [(), tuple(optional)]:
                raise FormatError(f"line {lineno}: expected header {','.join(header)}")
            columns = tuple(fields)
            continue
        if len(fields) != len(columns):
            raise FormatError(f"line {lineno}: expected {len(columns)} fields, got {len(fields)}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError:
            raise FormatError(f"line {lineno}: non-numeric value") from None
    if columns is None:
        raise FormatError("missing header line")
    return np.array(rows, dtype=float).reshape(-1, len(columns)), columns, meta


def rows_to_grid(x, z, allow_missing=False):
    """Index rows on a rectangular (x, z) lattice.

    Missing nodes raise :class:`NonRectangular` unless ``allow_missing``.
    """
    xs = np.unique(x)
    zs = np.unique(z)
    ix = np.searchsorted(xs, x)
    iz = np.searchsorted(zs, z)
    seen = np.zeros((len(xs), len(zs)), dtype=int)
    np.add.at(seen, (ix, iz), 1)
    if np.any(seen > 1):
        raise FormatError("duplicate grid node")
    if np.any(seen == 0) and not allow_missing:
        raise NonRectangular(f"{int(np.sum(seen == 0))} grid node(s) missing from {len(xs)}x{len(zs)} lattice")
    return xs, zs, ix, iz


def load_grid(source):
    """Read a field CSV from a path or a text stream."""
    text = _read_text(source)
    data, columns, meta = read_table(text, FIELD_HEADER, BY_COLUMNS)
    if len(data) == 0:
        raise FormatError("field CSV has no data rows")
    if not np.all(np.isfinite(data)):
        raise FormatError("field CSV contains non-finite values")
    xs, zs, ix, iz = rows_to_grid(data[:, 0], data[:, 1])
    shape = (len(xs), len(zs))
    bx = np.empty(shape, complex)
    bz = np.empty(shape, complex)
    bx[ix, iz] = data[:, 2] + 1j * data[:, 3]
    bz[ix, iz] = data[:, 4] + 1j * data[:, 5]
    by = None
    if len(columns) == 8:
        by = np.empty(shape, complex)
        by[ix, iz] = data[:, 6] + 1j * data[:, 7]
        ratio = float(np.max(np.abs(by)) / max(np.max(np.sqrt(np.abs(bx) ** 2 + np.abs(bz) ** 2)), 1e-300))
        if ratio >= BY_WARN_FRACTION:
            log.warning("out-of-plane component reaches %.2g of the in-plane magnitude; "
                        "the 2D model ignores it", ratio)
    try:
        freq = float(meta.get("freq_MHz", "0"))
    except ValueError:
        raise FormatError("bad freq_MHz comment") from None
    return FieldGrid(xs, zs, bx, bz, freq, by)


def format_grid(g):
    out = io.StringIO()
    out.write(f"# freq_MHz={g.freq!r}\n")
    cols = FIELD_HEADER + (BY_COLUMNS if g.by is not None else ())
    out.write(",".join(cols) + "\n")
    for i, x in enumerate(g.xs):
        for j, z in enumerate(g.zs):
            vals = [x, z, g.bx[i, j].real, g.bx[i, j].imag, g.bz[i, j].real, g.bz[i, j].imag]
            if g.by is not None:
                vals += [g.by[i, j].real, g.by[i, j].imag]
            out.write(",".join(repr(float(v)) for v in vals) + "\n")
    return out.getvalue()


def save_grid(g, path):
    write_atomic(path, format_grid(g))


def _read_text(source):
    if hasattr(source, "read"):
        return source.read()
    with open(source, encoding="utf-8") as fh:
        return fh.read()


def write_atomic(path, content, mode="w"):
    """Write via a temporary file in the target directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        if mode == "w":
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(content)
        else:
            with os.fdopen(fd, "wb") as fh:
                fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- polynomial fit ----------------------------------------------------------

def monomial_exponents(order):
    """Exponents ``(i, j)`` of ``u^i w^j`` with ``i + j <= order``, by total degree."""
    return [(d - j, j) for d in range(order + 1) for j in range(d + 1)]


def _falling(n, k):
    out = 1
    for m in range(k):
        out *= n - m
    return out


@dataclass(frozen=True, eq=False)
class PolyFit:
    """Complex 2D polynomial in the scaled window frame.

    The model is ``sum c_ij u^i w^j`` with ``u = (x - cx)/h`` and
    ``w = (z - cz)/h`` for ``h = window_halfwidth``.
    """

    order: int
    window_center: tuple
    window_halfwidth: float
    exponents: tuple
    coeffs_x: np.ndarray
    coeffs_z: np.ndarray
    residual_rel: float
    residual_max: float
    condition: float
    n_samples: int

    def coefficient(self, i, j):
        k = self.exponents.index((i, j))
        return self.coeffs_x[k], self.coeffs_z[k]

    def evaluate(self, x, z, dx=0, dz=0):
        """Value or partial derivative ``d^dx/dx^dx d^dz/dz^dz`` at physical points."""
        h = self.window_halfwidth
        u = (np.asarray(x, dtype=float) - self.window_center[0]) / h
        w = (np.asarray(z, dtype=float) - self.window_center[1]) / h
        fx = np.zeros(np.broadcast(u, w).shape, dtype=complex)
        fz = np.zeros_like(fx)
        for k, (i, j) in enumerate(self.exponents):
            if i < dx or j < dz:
                continue
            term = _falling(i, dx) * _falling(j, dz) * u ** (i - dx) * w ** (j - dz)
            fx = fx + self.coeffs_x[k] * term
            fz = fz + self.coeffs_z[k] * term
        scale = h ** -(dx + dz)
        return fx * scale, fz * scale

    def jacobian(self, x, z):
        """``[[dBx/dx, dBx/dz], [dBz/dx, dBz/dz]]`` at one point."""
        bxx, bzx = self.evaluate(x, z, 1, 0)
        bxz, bzz = self.evaluate(x, z, 0, 1)
        return np.array([[complex(bxx), complex(bxz)], [complex(bzx), complex(bzz)]])


def _window_mask(g, center, halfwidth):
    tol = 1e-9 * max(halfwidth, 1.0)
    X, Z = g.mesh()
    return (np.abs(X - center[0]) <= halfwidth + tol) & (np.abs(Z - center[1]) <= halfwidth + tol)


def fit_complex_polynomial(g, center, halfwidth=DEFAULT_HALFWIDTH_UM, order=DEFAULT_ORDER):
    """Least-squares fit of both field components inside a square window.

    Solved by SVD on the scaled Vandermonde matrix (no normal equations).
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if halfwidth <= 0:
        raise ValueError("halfwidth must be positive")
    exps = monomial_exponents(order)
    mask = _window_mask(g, center, halfwidth)
    n = int(mask.sum())
    if n < len(exps):
        raise Underdetermined(f"{n} samples in window, need at least {len(exps)} for order {order}")
    X, Z = g.mesh()
    u = (X[mask] - center[0]) / halfwidth
    w = (Z[mask] - center[1]) / halfwidth
    V = np.empty((n, len(exps)))
    for k, (i, j) in enumerate(exps):
        V[:, k] = u ** i * w ** j
    rhs = np.column_stack([g.bx[mask], g.bz[mask]])
    coeffs, _, rank, sv = np.linalg.lstsq(V, rhs, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if rank < len(exps) or cond > MAX_CONDITION:
        raise IllConditioned(f"Vandermonde condition number {cond:.3e}", condition=cond)
    resid = rhs - V @ coeffs
    scale = float(np.sqrt(np.mean(np.abs(rhs) ** 2)))
    rms = float(np.sqrt(np.mean(np.abs(resid) ** 2)))
    peak = float(np.max(np.abs(resid)))
    if scale > 0:
        rms /= scale
        peak /= scale
    return PolyFit(order=order, window_center=(float(center[0]), float(center[1])),
                   window_halfwidth=float(halfwidth), exponents=tuple(exps),
                   coeffs_x=coeffs[:, 0].copy(), coeffs_z=coeffs[:, 1].copy(),
                   residual_rel=rms, residual_max=peak, condition=cond, n_samples=n)


# -- minimum -----------------------------------------------------------------

MAX_STEP_UM = 0.5
MAX_ITERATIONS = 100


def _intensity_derivatives(fit, x, z):
    P = np.array(fit.evaluate(x, z))
    Px = np.array(fit.evaluate(x, z, 1, 0))
    Pz = np.array(fit.evaluate(x, z, 0, 1))
    Pxx = np.array(fit.evaluate(x, z, 2, 0))
    Pxz = np.array(fit.evaluate(x, z, 1, 1))
    Pzz = np.array(fit.evaluate(x, z, 0, 2))
    grad = np.array([np.real(np.vdot(P, Px)), np.real(np.vdot(P, Pz))])
    hxx = np.real(np.vdot(Px, Px) + np.vdot(P, Pxx))
    hxz = np.real(np.vdot(Px, Pz) + np.vdot(P, Pxz))
    hzz = np.real(np.vdot(Pz, Pz) + np.vdot(P, Pzz))
    return grad, np.array([[hxx, hxz], [hxz, hzz]])


def refine_minimum(fit, start=None, tol=1e-12):
    """Newton descent on ``|P|^2 / 2`` of a fitted polynomial.

    Steps are bounded by 0.5 μm; the search must stay inside the window.
    """
    r = np.array(fit.window_center if start is None else start, dtype=float)
    h = fit.window_halfwidth
    c = np.array(fit.window_center)
    for _ in range(MAX_ITERATIONS):
        g, H = _intensity_derivatives(fit, r[0], r[1])
        try:
            evals = np.linalg.eigvalsh(H)
            step = -np.linalg.solve(H, g) if evals[0] > 0 else None
        except np.linalg.LinAlgError:
            step = None
        if step is None:
            # not locally convex: steepest descent with a curvature-free bound
            gn = np.hypot(*g)
            step = -g / gn * MAX_STEP_UM if gn > 0 else np.zeros(2)
        norm = np.hypot(*step)
        if norm > MAX_STEP_UM:
            step *= MAX_STEP_UM / norm
            norm = MAX_STEP_UM
        r = r + step
        if np.any(np.abs(r - c) > h):
            raise NoInteriorMinimum(f"minimum search left the fit window at ({r[0]:.3f}, {r[1]:.3f})")
        if norm < tol:
            break
    return float(r[0]), float(r[1])


def _is_flat(I):
    top = float(np.max(I))
    return top == 0.0 or float(np.max(I) - np.min(I)) <= 1e-12 * top


def locate_minimum(g, halfwidth=DEFAULT_HALFWIDTH_UM, order=DEFAULT_ORDER):
    """Position ``(x0, z0)`` of the minimum of the time-averaged ``|B|^2``.

    A :class:`FieldGrid` is first searched on its nodes, then refined on a
    local polynomial fit; a :class:`PolyFit` is refined directly from its
    window center.
    """
    if isinstance(g, PolyFit):
        return refine_minimum(g)
    I = g.intensity()
    if _is_flat(I):
        raise NoInteriorMinimum("field intensity is flat; no distinct minimum")
    i, j = np.unravel_index(int(np.argmin(I)), I.shape)
    if i in (0, I.shape[0] - 1) or j in (0, I.shape[1] - 1):
        raise NoInteriorMinimum(f"intensity minimum on the grid boundary at "
                                f"({g.xs[i]:.3f}, {g.zs[j]:.3f}) μm")
    start = (float(g.xs[i]), float(g.zs[j]))
    fit = _fit_reducing_order(g, start, halfwidth, order)
    return refine_minimum(fit, start)


def _fit_reducing_order(g, center, halfwidth, order):
    # coarse grids cannot support the full order; fall back gracefully
    for k in range(order, 1, -1):
        try:
            return fit_complex_polynomial(g, center, halfwidth, k)
        except (Underdetermined, IllConditioned):
            continue
    return fit_complex_polynomial(g, center, halfwidth, 2)


def extract_quadrupole(g, halfwidth=DEFAULT_HALFWIDTH_UM, order=DEFAULT_ORDER, tol=1e-6):
    """Five-parameter description of a sampled field around its minimum.

    Locates the minimum, fits a polynomial in a window centered on it, keeps
    the zeroth and first order terms at the refined minimum and canonicalizes
    them. The returned diagnostics additionally carry the fit residual and the
    trace / antisymmetry defect of the fitted gradient.
    """
    flat = _is_flat(g.intensity())
    if flat:
        center = (float(np.mean(g.xs)), float(np.mean(g.zs)))
    else:
        center = locate_minimum(g, halfwidth, order)
    fit = fit_complex_polynomial(g, center, halfwidth, order)
    if not flat:
        center = refine_minimum(fit, center)
    a = np.array([complex(v) for v in fit.evaluate(*center)])
    G = fit.jacobian(*center)
    trace, antisym = gradient_defect(G)
    params, diag = canonicalize(decompose(a, G), tol=tol)
    params = replace(params, x0=center[0], z0=center[1], freq=g.freq)
    diag = ExtractionDiagnostics(**vars(diag), trace_defect=float(trace),
                                 symmetry_defect=float(antisym),
                                 fit_residual=float(fit.residual_rel),
                                 fit_condition=float(fit.condition))
    return params, diag


@dataclass(frozen=True)
class ExtractionDiagnostics(CanonicalDiagnostics):
    trace_defect: float = 0.0
    symmetry_defect: float = 0.0
    fit_residual: float = 0.0
    fit_condition: float = 0.0

    def to_json(self):
        out = super().to_json()
        out.update(trace_defect_uT_per_um=self.trace_defect,
                   symmetry_defect_uT_per_um=self.symmetry_defect,
                   fit_residual_rel=self.fit_residual,
                   fit_condition=self.fit_condition)
        return out
