from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg, optimize

from se2lab.core import (
    IDENTITY,
    Case,
    DiffusionParams,
    Domain,
    GridSpec,
    GroupElement,
    NumericalError,
    Se2Error,
    Se2Field,
    cdft,
    cdft_inverse,
    check_case,
    dc_normalize,
    exp_coordinates,
    group_product,
    log_coordinates,
    read_skf,
    se2_convolve,
    se2_convolve_direct,
    shift_rotate,
    to_frequency,
    to_spatial,
    weighted_modulus,
    wrap_angle,
    write_skf,
    xy_marginal,
)

coord = st.floats(-5, 5, allow_nan=False)
angle = st.floats(-math.pi, math.pi, allow_nan=False)
elements = st.builds(GroupElement, coord, coord, angle)


def close(g: GroupElement, h: GroupElement, tol=1e-12):
    d = abs(wrap_angle(g.theta - h.theta))
    return abs(g.x - h.x) < tol and abs(g.y - h.y) < tol and d < tol


def algebra_exp(c1, c2, c3) -> GroupElement:
    m = linalg.expm(np.array([[0.0, -c3, c1], [c3, 0.0, c2], [0.0, 0.0, 0.0]]))
    return GroupElement(m[0, 2], m[1, 2], math.atan2(m[1, 0], m[0, 0]))


# group algebra


def test_identity_product():
    assert close(IDENTITY * GroupElement(1, 2, 0.3), GroupElement(1, 2, 0.3))


def test_quarter_rotation_maps_ex_to_ey():
    assert close(GroupElement(1, 0, math.pi / 2) * GroupElement(1, 0, 0), GroupElement(1, 1, math.pi / 2))


def test_inverse():
    g = GroupElement(0.7, -1.1, 2.0)
    assert close(g * g.inverse(), IDENTITY)
    assert close(g.inverse() * g, IDENTITY)


@given(elements, elements, elements)
def test_associativity(a, b, c):
    assert close((a * b) * c, a * (b * c), 1e-10)


@given(elements)
def test_inverse_property(g):
    assert close(group_product(g, g.inverse()), IDENTITY, 1e-10)


def test_wrap_angle_range():
    t = wrap_angle(np.array([math.pi, -math.pi, 3 * math.pi, 0.1]))
    assert np.all(t > -math.pi) and np.all(t <= math.pi)
    assert t[1] == pytest.approx(math.pi)


# logarithm


def test_log_at_zero_angle():
    assert log_coordinates(GroupElement(1.5, -2.0, 0.0)) == (1.5, -2.0, 0.0)


def test_log_pure_rotation():
    assert np.allclose(log_coordinates(GroupElement(0, 0, 0.9)), (0, 0, 0.9), atol=1e-15)


def test_log_matches_newton_inversion_of_matrix_exponential():
    g = GroupElement(1.0, 0.0, 0.5)

    def resid(c):
        h = algebra_exp(*c)
        return [h.x - g.x, h.y - g.y, h.theta - g.theta]

    ref = optimize.fsolve(resid, [1.0, 0.0, 0.5], xtol=1e-14)
    assert np.allclose(log_coordinates(g), ref, atol=1e-10)


@given(coord, coord, st.floats(-3.0, 3.0).filter(lambda t: abs(t) > 1e-6))
def test_exp_log_round_trip(x, y, th):
    g = GroupElement(x, y, th)
    c = log_coordinates(g)
    assert close(exp_coordinates(*c), g, 1e-8)
    assert close(algebra_exp(*c), g, 1e-8)


# weighted modulus


def test_modulus_identity_is_zero():
    assert weighted_modulus(IDENTITY, DiffusionParams()) == 0.0


def test_modulus_along_x_is_formula_value():
    # outer square of the inner sum gives x^2, not |x|
    assert weighted_modulus(GroupElement(3.0, 0, 0), DiffusionParams(D11=1.0)) == pytest.approx(9.0)


def test_modulus_d11_scaling():
    g = GroupElement(2.0, 0, 0)
    a = weighted_modulus(g, DiffusionParams(D11=1.0))
    b = weighted_modulus(g, DiffusionParams(D11=4.0))
    assert a / b == pytest.approx(4.0)


def test_modulus_needs_positive_diffusion():
    with pytest.raises(Se2Error):
        weighted_modulus(GroupElement(1, 0, 0), DiffusionParams(D11=0.0))


# parameters and grids


def test_params_validation():
    with pytest.raises(Se2Error):
        DiffusionParams(D33=-1)
    with pytest.raises(Se2Error):
        DiffusionParams(k=0)
    with pytest.raises(Se2Error):
        check_case(DiffusionParams(D11=0.0), Case.ENHANCEMENT)
    with pytest.raises(Se2Error):
        check_case(DiffusionParams.completion(alpha=0.0), Case.COMPLETION)
    check_case(DiffusionParams.completion(alpha=0.0), Case.COMPLETION, allow_zero_alpha=True)


def test_case_parse():
    assert Case.parse("enh") is Case.ENHANCEMENT
    assert Case.parse("completion") is Case.COMPLETION
    with pytest.raises(Se2Error):
        Case.parse("other")


def test_grid_lattice():
    g = GridSpec.from_counts(128, 48)
    assert g.shape == (49, 129, 129)
    assert g.dtheta == pytest.approx(2 * math.pi / 49)
    assert g.thetas[0] == pytest.approx(-math.pi + math.pi / 49)
    wx, _ = g.frequencies()
    assert wx.max() < math.pi and wx[g.P] == 0.0
    wx2, _ = GridSpec(4, 4, 2, oversample=2).frequencies(oversampled=True)
    assert abs(wx2).max() == pytest.approx(2 * math.pi * 8 / 9)


def test_field_shape_mismatch():
    with pytest.raises(Se2Error):
        Se2Field(np.zeros((3, 3, 3)), GridSpec(2, 2, 2))


# transforms


def test_spike_transforms_to_constant(small_grid):
    F = cdft(Se2Field.spike(small_grid))
    centre = F.data[small_grid.R] * small_grid.voxel()
    assert np.allclose(centre, 1.0, atol=1e-14)
    assert np.allclose(np.delete(F.data, small_grid.R, axis=0), 0)


def test_cdft_round_trip_and_parseval(small_grid, rng):
    U = Se2Field(rng.standard_normal(small_grid.shape) + 1j * rng.standard_normal(small_grid.shape), small_grid)
    F = cdft(U)
    assert np.abs(cdft_inverse(F).data - U.data).max() < 1e-12
    n = (2 * small_grid.P + 1) * (2 * small_grid.Q + 1)
    ratio = (np.abs(F.data) ** 2).sum() / (n * (np.abs(U.data) ** 2).sum())
    assert ratio == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(to_spatial(to_frequency(U)).data, U.data, atol=1e-12)


def test_real_even_field_has_real_spectrum(small_grid, rng):
    a = rng.standard_normal(small_grid.shape)
    a = a + a[:, ::-1, ::-1]
    F = cdft(Se2Field(a, small_grid))
    assert np.abs(F.data.imag).max() < 1e-12


def test_cdft_matches_defining_sum(rng):
    g = GridSpec(2, 3, 1)
    U = Se2Field(rng.standard_normal(g.shape), g)
    p = np.arange(-g.P, g.P + 1)
    q = np.arange(-g.Q, g.Q + 1)
    Ex = np.exp(-2j * np.pi * np.outer(p, p) / (2 * g.P + 1))
    Ey = np.exp(-2j * np.pi * np.outer(q, q) / (2 * g.Q + 1))
    ref = np.einsum("ap,rpq,bq->rab", Ex, U.data, Ey)
    assert np.allclose(cdft(U).data, ref, atol=1e-12)


def test_domain_checks(small_grid):
    with pytest.raises(Se2Error):
        cdft(Se2Field.zeros(small_grid, Domain.FREQUENCY))
    with pytest.raises(Se2Error):
        xy_marginal(Se2Field.zeros(small_grid, Domain.FREQUENCY))


# normalisation and marginals


def test_dc_normalize_ones(small_grid):
    U = dc_normalize(Se2Field(np.ones(small_grid.shape), small_grid))
    F = to_frequency(U)
    assert (F.data[:, small_grid.P, small_grid.Q].sum() * small_grid.dtheta).real == pytest.approx(1.0, abs=1e-14)


def test_dc_normalize_idempotent(small_grid, rng):
    U = dc_normalize(Se2Field(rng.random(small_grid.shape), small_grid))
    assert np.abs(dc_normalize(U).data - U.data).max() < 1e-14 * np.abs(U.data).max()


def test_dc_normalize_zero_mass(small_grid):
    with pytest.raises(Se2Error):
        dc_normalize(Se2Field.zeros(small_grid))


def test_marginal_of_spike_and_constant(small_grid):
    m = xy_marginal(Se2Field.spike(small_grid))
    assert m[small_grid.P, small_grid.Q] == pytest.approx(1.0 / (small_grid.dx * small_grid.dy))
    assert np.count_nonzero(m) == 1
    sl = np.arange(small_grid.shape[1] * small_grid.shape[2], dtype=float).reshape(small_grid.shape[1:])
    U = Se2Field(np.broadcast_to(sl, small_grid.shape), small_grid)
    assert np.allclose(xy_marginal(U), small_grid.shape[0] * small_grid.dtheta * sl)


def test_enhancement_marginal_point_symmetric():
    from se2lab.exact import sample_kernel

    g = GridSpec(12, 12, 6)
    K = sample_kernel(g, DiffusionParams.enhancement(D33=0.08, alpha=0.05, s=0.5))
    m = xy_marginal(K)
    assert np.abs(m - m[::-1, ::-1]).max() < 1e-8 * np.abs(m).max()
    assert np.abs(K.data - K.data[:, ::-1, ::-1]).max() < 1e-8 * np.abs(K.data).max()


def test_real_raises_on_complex(small_grid):
    U = Se2Field(np.full(small_grid.shape, 1 + 1j), small_grid)
    with pytest.raises(NumericalError):
        U.real()


# convolution


def test_convolve_with_identity_spike(small_grid, rng):
    K = Se2Field(rng.random(small_grid.shape), small_grid)
    W = se2_convolve(K, Se2Field.spike(small_grid))
    assert np.allclose(W.data, K.data, atol=1e-12)


def test_spike_convolution_is_group_action():
    g = GridSpec(6, 6, 2)
    # d_g * d_h = d_{h g} with lattice points and rotation by a lattice angle
    a, b = (1, 2, 0), (1, -1, 1)
    K = Se2Field.spike(g, *b)
    U = Se2Field.spike(g, *a)
    W = se2_convolve(K, U, order=1)
    ga = GroupElement(a[1], a[2], g.thetas[a[0] + g.R])
    gb = GroupElement(b[1], b[2], g.thetas[b[0] + g.R])
    h = ga * gb
    r = int(round(h.theta / g.dtheta))
    # rotating a sampled spike is interpolation-limited
    total = W.data.real.sum() * g.voxel()
    assert total == pytest.approx(1.0, rel=2e-2)
    sl = W.data[r + g.R].real
    assert sl.sum() * g.voxel() == pytest.approx(total, rel=1e-12)
    com = np.array([(sl.sum(axis=1) * g.xs).sum(), (sl.sum(axis=0) * g.ys).sum()]) / sl.sum()
    assert np.allclose(com, (h.x, h.y), atol=0.25)


def test_fft_convolution_matches_direct(rng):
    g = GridSpec(3, 3, 1)
    K = Se2Field(rng.random(g.shape), g)
    U = Se2Field(rng.random(g.shape), g)
    assert np.allclose(se2_convolve(K, U).data, se2_convolve_direct(K, U).data, atol=1e-12)


def test_convolution_left_invariance():
    g = GridSpec(16, 16, 2)
    X, Y = np.meshgrid(g.xs, g.ys, indexing="ij")
    th = g.thetas[:, None, None]
    # smooth, well inside the frame so rotation by one angular step is interpolation-limited only
    K = Se2Field(np.exp(-(X ** 2 + 2 * Y ** 2) / 4) * (1 + 0.3 * np.cos(th)), g)
    U = Se2Field(np.exp(-((X - 1) ** 2 + Y ** 2) / 3) * (1 + 0.5 * np.sin(th)), g)
    h = GroupElement(2.0, -1.0, g.dtheta)
    lhs = se2_convolve(K, shift_rotate(U, h))
    rhs = shift_rotate(se2_convolve(K, U), h)
    err = np.linalg.norm(lhs.data - rhs.data) / np.linalg.norm(rhs.data)
    assert err < 1e-3


def test_convolution_grid_mismatch(small_grid):
    with pytest.raises(Se2Error):
        se2_convolve(Se2Field.zeros(small_grid), Se2Field.zeros(GridSpec(3, 3, 3)))
    with pytest.raises(Se2Error):
        se2_convolve(Se2Field.zeros(small_grid), Se2Field.zeros(small_grid), boundary="reflect")


def test_shift_rotate_rejects_off_lattice(small_grid):
    with pytest.raises(Se2Error):
        shift_rotate(Se2Field.zeros(small_grid), GroupElement(0, 0, 0.1))


# file format


def test_skf_round_trip(tmp_path, small_grid, rng):
    U = Se2Field(rng.standard_normal(small_grid.shape) + 1j * rng.standard_normal(small_grid.shape), small_grid, Domain.FREQUENCY)
    path = tmp_path / "k.skf"
    write_skf(path, U)
    raw = path.read_bytes()
    assert raw[:4] == b"SKF1"
    assert int.from_bytes(raw[4:8], "little") == 1
    V = read_skf(path)
    assert V.domain is Domain.FREQUENCY and V.grid == small_grid
    assert np.array_equal(V.data, U.data)


def test_skf_rejects_garbage(tmp_path):
    p = tmp_path / "bad.skf"
    p.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(Se2Error):
        read_skf(p)
    p.write_bytes(b"SK")
    with pytest.raises(Se2Error):
        read_skf(p)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3))
def test_skf_payload_layout(tmp_path_factory, P, Q, R):
    g = GridSpec(P, Q, R)
    data = np.arange(np.prod(g.shape)).reshape(g.shape) * (1 + 0.5j)
    path = tmp_path_factory.mktemp("skf") / "a.skf"
    write_skf(path, Se2Field(data, g))
    body = np.frombuffer(path.read_bytes()[40:], dtype="<c16")
    assert np.array_equal(body, data.ravel())
