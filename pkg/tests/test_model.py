import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nearfield.errors import AmbiguousPhase, DegenerateGradient, FormatError
from nearfield.model import (QuadrupoleParams, RawExpansion, canonicalize, decompose, field_at,
                             gradient_defect, normalize, polarization_ellipse, quadrupole_matrix,
                             rotate_frame, synthesize_phasor, time_averaged_intensity)

from conftest import reference_params

angles = st.floats(0.0, math.pi, exclude_max=True)
psis = st.floats(-math.pi / 4 * 0.98, math.pi / 4 * 0.98)
offsets = st.floats(-50.0, 50.0).filter(lambda b: abs(b) > 1e-3)
gradients = st.floats(0.05, 20.0)


def params_strategy():
    return st.builds(QuadrupoleParams, B=offsets, Bp=gradients, alpha=angles, beta=angles,
                     psi=psis)


def assert_same_params(p, q, rel=1e-9):
    assert p.B == pytest.approx(q.B, rel=rel, abs=rel)
    assert p.Bp == pytest.approx(q.Bp, rel=rel)
    for a, b in ((p.alpha, q.alpha), (p.beta, q.beta), (p.psi, q.psi)):
        d = (a - b + math.pi / 2) % math.pi - math.pi / 2
        assert abs(d) < 1e-9


# -- quadrupole matrix -------------------------------------------------------

def test_quadrupole_matrix_examples():
    np.testing.assert_array_equal(quadrupole_matrix(0.0), [[1, 0], [0, -1]])
    np.testing.assert_allclose(quadrupole_matrix(math.pi / 2), [[0, 1], [1, 0]], atol=1e-16)
    assert quadrupole_matrix(math.radians(99.9))[0, 0] == pytest.approx(-0.171929, abs=1e-6)


@given(st.floats(-10, 10))
def test_quadrupole_matrix_traceless_symmetric(beta):
    Q = quadrupole_matrix(beta)
    assert Q[0, 0] + Q[1, 1] == 0.0
    assert Q[0, 1] == Q[1, 0]


# -- synthesis ---------------------------------------------------------------

def test_pure_real_quadrupole():
    p = QuadrupoleParams(B=0.0, Bp=1.0, alpha=0.0, beta=0.0, psi=0.0)
    np.testing.assert_allclose(synthesize_phasor(p, [1.0, 0.0]), [1.0, 0.0], atol=1e-15)


def test_pure_offset_is_uniform():
    p = QuadrupoleParams(B=1.0, Bp=0.0, alpha=0.0, beta=0.3, psi=math.pi / 2)
    for r in ([0, 0], [3.0, -2.0], [100.0, 7.0]):
        np.testing.assert_allclose(synthesize_phasor(p, r), [1.0, 0.0], atol=1e-15)


def test_reference_offset_magnitude():
    p = reference_params(Bp=1.0)
    v = synthesize_phasor(p, [0.0, 0.0])
    assert np.sqrt(np.sum(np.abs(v) ** 2)) == pytest.approx(8.5, rel=1e-14)


def test_field_at_uses_minimum_position(reference):
    bx, bz = field_at(reference, reference.x0 + 1.0, reference.z0 - 2.0)
    np.testing.assert_allclose([bx, bz], synthesize_phasor(reference, [1.0, -2.0]), rtol=1e-14)


def test_first_order_field_is_divergence_and_curl_free(reference):
    h = 0.1
    x = reference.x0 + np.arange(-5, 6) * h
    z = reference.z0 + np.arange(-5, 6) * h
    X, Z = np.meshgrid(x, z, indexing="ij")
    bx, bz = field_at(reference, X, Z)
    dxbx = (bx[2:, 1:-1] - bx[:-2, 1:-1]) / (2 * h)
    dzbz = (bz[1:-1, 2:] - bz[1:-1, :-2]) / (2 * h)
    dxbz = (bz[2:, 1:-1] - bz[:-2, 1:-1]) / (2 * h)
    dzbx = (bx[1:-1, 2:] - bx[1:-1, :-2]) / (2 * h)
    scale = np.linalg.norm(reference.gradient())
    assert np.max(np.abs(dxbx + dzbz)) < 1e-10 * scale
    assert np.max(np.abs(dxbz - dzbx)) < 1e-10 * scale


def test_minimum_at_origin_with_offset_intensity(reference):
    # time-averaged |B|^2 = (B^2 + Bp^2 |r|^2) / 2 exactly
    assert time_averaged_intensity(*reference.offset()) == pytest.approx(reference.B ** 2 / 2)
    rng = np.random.default_rng(3)
    for r in rng.normal(size=(20, 2)):
        v = synthesize_phasor(reference, r)
        expect = 0.5 * (reference.B ** 2 + reference.Bp ** 2 * (r @ r))
        assert time_averaged_intensity(*v) == pytest.approx(expect, rel=1e-12)


# -- canonicalization --------------------------------------------------------

def test_reference_round_trip(reference):
    p, diag = canonicalize(reference.raw())
    assert_same_params(p, reference, rel=1e-12)
    assert diag.consistent
    assert abs(diag.residual_alpha_orthogonality) < 1e-12
    assert abs(diag.residual_phi_psi) < 1e-12


def test_pure_real_gradient_flags_offset():
    raw = RawExpansion(B_r=0.0, alpha_r=0.0, B_i=0.0, alpha_i=0.0,
                       Bp_r=2.0, beta_r=0.4, Bp_i=0.0, beta_i=0.0)
    p, diag = canonicalize(raw)
    assert p.psi == 0.0
    assert diag.phi == pytest.approx(-math.pi / 2)
    assert diag.degenerate_offset
    assert p.Bp == pytest.approx(2.0)
    assert p.beta == pytest.approx(0.4)


@settings(max_examples=200, deadline=None)
@given(params_strategy())
def test_round_trip_property(p):
    q, diag = canonicalize(p.raw())
    assert_same_params(q, normalize(p))
    assert diag.consistent


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 20), angles, st.floats(0, 20), angles, st.floats(0.05, 20), angles,
       st.floats(0, 20), angles, st.floats(0, 2 * math.pi))
def test_phase_invariance(Br, ar, Bi, ai, Gr, br, Gi, bi, chi):
    raw = RawExpansion(Br, ar, Bi, ai, Gr, br, Gi, bi)
    p1, d1 = canonicalize(raw)
    if d1.ambiguous_phase:
        return
    p2, _ = canonicalize(raw.phase_rotated(chi))
    a1, a2 = p1.offset(), p2.offset()
    # identical canonical field up to the global sign freedom
    s = 1.0 if np.vdot(p1.gradient_coords(), p2.gradient_coords()).real >= 0 else -1.0
    np.testing.assert_allclose(p2.gradient_coords(), s * p1.gradient_coords(), atol=1e-8 * Gr + 1e-8 * Gi + 1e-9)
    np.testing.assert_allclose(a2, s * a1, atol=1e-8 * (Br + Bi + Gr + Gi) + 1e-9)


def test_degenerate_gradient_flag_and_strict():
    raw = decompose(np.array([1.0 + 0.5j, -0.2j]), np.zeros((2, 2), complex))
    p, diag = canonicalize(raw)
    assert diag.degenerate_gradient
    assert p.Bp == 0.0
    with pytest.raises(DegenerateGradient):
        canonicalize(raw, strict=True)


def test_circular_gradient_is_ambiguous():
    p = QuadrupoleParams(B=1.0, Bp=2.0, alpha=0.3, beta=0.5, psi=math.pi / 4)
    _, diag = canonicalize(p.raw())
    assert diag.ambiguous_phase
    with pytest.raises(AmbiguousPhase):
        canonicalize(p.raw(), strict=True)


def test_large_psi_maps_to_equivalent_representative():
    # psi beyond pi/4 is the same field as (-B, a - pi/2, b - pi/2, pi/2 - psi) up to phase
    p = QuadrupoleParams(B=3.0, Bp=1.5, alpha=1.0, beta=2.0, psi=math.radians(70))
    q, _ = canonicalize(p.raw())
    assert q.psi == pytest.approx(math.radians(20))
    r = np.array([0.7, -1.3])
    for v1, v2 in ((synthesize_phasor(p, r), synthesize_phasor(q, r)),):
        assert time_averaged_intensity(*v1) == pytest.approx(time_averaged_intensity(*v2))


def test_gradient_defect_zero_for_model(reference):
    tr, anti = gradient_defect(reference.gradient())
    assert tr < 1e-14 and anti < 1e-14


# -- normalization and frames ------------------------------------------------

@given(params_strategy(), st.integers(-3, 3), st.integers(-3, 3))
def test_normalize_sign_identifications(p, ka, kb):
    shifted = QuadrupoleParams(B=p.B * (-1) ** ka, Bp=p.Bp * (-1) ** kb,
                               alpha=p.alpha + ka * math.pi, beta=p.beta + kb * math.pi, psi=p.psi)
    q = normalize(shifted)
    assert q.Bp >= 0
    assert 0 <= q.alpha < math.pi and 0 <= q.beta < math.pi
    # equal up to one shared global sign
    s = 1.0 if np.vdot(p.gradient(), q.gradient()).real >= 0 else -1.0
    np.testing.assert_allclose(q.offset(), s * p.offset(), atol=1e-9 * (abs(p.B) + 1))
    np.testing.assert_allclose(q.gradient(), s * p.gradient(), atol=1e-9 * p.Bp)


def test_rotate_frame_examples(reference):
    assert_same_params(rotate_frame(reference, 0.0), reference)
    half = rotate_frame(reference, math.pi)
    # alpha advances by pi, which is absorbed into the sign of B
    assert half.B == pytest.approx(-reference.B)
    assert half.alpha == pytest.approx(reference.alpha)
    assert half.beta == pytest.approx(reference.beta)
    assert (half.x0, half.z0) == pytest.approx((-reference.x0, -reference.z0))
    q = rotate_frame(reference, math.radians(30))
    assert math.degrees(q.alpha) == pytest.approx(54.3)
    assert math.degrees(q.beta) == pytest.approx(159.9)


@settings(max_examples=50, deadline=None)
@given(params_strategy(), st.floats(-math.pi, math.pi))
def test_rotate_frame_equivariance(p, theta):
    # rotate sampled field vectors and re-canonicalize
    c, s = math.cos(theta), math.sin(theta)
    R = np.array([[c, -s], [s, c]])
    a = R @ p.offset()
    G = R @ p.gradient() @ R.T
    q, _ = canonicalize(decompose(a, G))
    expect = rotate_frame(p, theta)
    assert_same_params(q, expect)


# -- polarization ellipse ----------------------------------------------------

def test_ellipse_examples():
    e = polarization_ellipse([1.0, 0.0])
    assert (e.major, e.minor, e.orientation) == pytest.approx((1.0, 0.0, 0.0))
    e = polarization_ellipse([1.0, 1j])
    assert e.major == pytest.approx(1.0) and e.minor == pytest.approx(1.0)
    assert math.isnan(e.orientation)


def test_ellipse_against_time_sampling():
    v = np.array([1.0, 0.5j])
    e = polarization_ellipse(v)
    t = np.linspace(0, 2 * math.pi, 20001)
    pts = np.real(v[:, None] * np.exp(1j * t))
    r = np.hypot(*pts)
    assert e.major == pytest.approx(r.max(), rel=1e-6)
    assert e.minor == pytest.approx(r.min(), rel=1e-6)
    assert e.orientation == pytest.approx(0.0, abs=1e-12)


def test_linear_and_circular_properties():
    lin = QuadrupoleParams(B=0.0, Bp=2.0, alpha=0.0, beta=0.7, psi=0.0)
    circ = QuadrupoleParams(B=0.0, Bp=2.0, alpha=0.0, beta=0.7, psi=math.pi / 4)
    for r in np.random.default_rng(1).normal(size=(10, 2)):
        assert polarization_ellipse(synthesize_phasor(lin, r)).minor < 1e-12
        e = polarization_ellipse(synthesize_phasor(circ, r))
        assert e.minor == pytest.approx(e.major, rel=1e-9)


# -- JSON --------------------------------------------------------------------

def test_json_round_trip(reference):
    obj = reference.to_json()
    assert set(obj) == {"B_uT", "Bp_uT_per_um", "alpha_deg", "beta_deg", "psi_deg",
                        "x0_um", "z0_um", "freq_MHz"}
    assert obj["alpha_deg"] == pytest.approx(24.3)
    q = QuadrupoleParams.from_json(obj)
    assert_same_params(q, reference)


def test_json_errors():
    with pytest.raises(FormatError):
        QuadrupoleParams.from_json({"B_uT": 1.0})
    obj = reference_params().to_json()
    obj["psi_deg"] = "six"
    with pytest.raises(FormatError):
        QuadrupoleParams.from_json(obj)
