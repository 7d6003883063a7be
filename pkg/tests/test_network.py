import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gfmgfl.errors import (
    DisconnectedNetwork,
    FloatingSubnetwork,
    InvalidLine,
    NetworkResonance,
    NonUniformTau,
    PowerFlowDiverged,
)
from gfmgfl.network import (
    Injection,
    Line,
    NetworkCase,
    OperatingPoint,
    build_admittance,
    gamma,
    gamma_inverse,
    kron_reduce,
    partition_dynamics,
    reduce_case,
    solve_operating_point,
    validate_operating_point,
)
from gfmgfl.synth import random_case
from gfmgfl.casefile import case_from_dict

W0 = 2 * np.pi * 50


def two_bus(x=0.5, **kw):
    return NetworkCase([1, 2], [Line(1, 2, x)], [1, 2], 1, **kw)


def test_single_branch_stamp():
    assert np.allclose(build_admittance(two_bus(0.5)), [[2, -2], [-2, 2]])


def test_star_stamp():
    case = NetworkCase(["c", 1, 2, 3], [Line("c", k, 1.0) for k in (1, 2, 3)], [1, 2], 1)
    B = build_admittance(case)
    assert B[0, 0] == 3
    assert np.allclose(np.diag(B)[1:], 1)
    assert np.allclose(B[0, 1:], -1)
    assert np.allclose(B, B.T)


def test_no_lines_is_disconnected():
    with pytest.raises(DisconnectedNetwork):
        build_admittance(NetworkCase([1, 2], [], [1, 2], 1))


@pytest.mark.parametrize("x", [0.0, -0.1])
def test_nonpositive_reactance(x):
    with pytest.raises(InvalidLine):
        build_admittance(two_bus(x))


def test_nonuniform_tau_warns():
    case = NetworkCase([1, 2, 3], [Line(1, 2, 1.0, 0.1), Line(2, 3, 1.0, 0.3)], [1, 3], 1, tau=0.1)
    with pytest.warns(NonUniformTau):
        build_admittance(case)
    case.tau_tolerance = 5.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        build_admittance(case)


def test_series_chain_reduction():
    B = build_admittance(NetworkCase(["a", "b", "c"], [Line("a", "b", 1.0), Line("b", "c", 1.0)], ["a", "c"], 1))
    rn = kron_reduce(B, [0, 2], 1)
    assert np.allclose(rn.Y_net, [[0.5, -0.5], [-0.5, 0.5]])


def test_keep_everything_is_identity():
    B = build_admittance(NetworkCase([1, 2, 3], [Line(1, 2, 0.3), Line(2, 3, 0.5)], [1, 2, 3], 2))
    assert np.allclose(kron_reduce(B, [0, 1, 2], 2).Y_net, B)


def test_floating_interior():
    # interior nodes only connected to each other
    B = np.zeros((4, 4))
    B[2:, 2:] = [[1, -1], [-1, 1]]
    B[0, 0] = B[1, 1] = 1
    with pytest.raises(FloatingSubnetwork):
        kron_reduce(B, [0, 1], 1)


def gaussian_eliminate(B, keep):
    """Eliminate interior nodes one pivot at a time."""
    B = B.astype(float).copy()
    nodes = list(range(len(B)))
    for k in [i for i in range(len(B)) if i not in keep]:
        p = nodes.index(k)
        piv = B[p, p]
        B = B - np.outer(B[:, p], B[p, :]) / piv
        B = np.delete(np.delete(B, p, 0), p, 1)
        nodes.pop(p)
    order = [nodes.index(k) for k in keep]
    return B[np.ix_(order, order)]


def test_mesh_reduction_matches_pivot_elimination():
    lines = [Line(1, 2, 0.2), Line(2, 3, 0.3), Line(3, 4, 0.25), Line(4, 1, 0.4), Line(1, 3, 0.5), Line(4, 5, 0.1)]
    case = NetworkCase([1, 2, 3, 4, 5], lines, [1, 3, 5], 2)
    B = build_admittance(case)
    B[4, 4] += 2.0  # shunt to ground keeps the reduced matrix invertible
    rn = kron_reduce(B, [0, 2, 4], 2)
    assert np.allclose(rn.Y_net, gaussian_eliminate(B, [0, 2, 4]), atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_reduction_preserves_boundary_response(seed):
    rng = np.random.default_rng(seed)
    case = case_from_dict(random_case(rng, 2, 2)).network
    B = build_admittance(case)
    idx = case.index()
    keep = [idx[b] for b in case.converter_nodes] + [idx[case.infinite_bus]]
    rn = kron_reduce(B, keep, 2)
    vb = rng.normal(size=len(keep))
    inner = [k for k in range(len(B)) if k not in keep]
    vi = -np.linalg.solve(B[np.ix_(inner, inner)], B[np.ix_(inner, keep)] @ vb)
    v = np.zeros(len(B))
    v[keep], v[inner] = vb, vi
    assert np.allclose((B @ v)[keep], rn.Y_net @ vb, atol=1e-10)


@pytest.mark.parametrize("seed", range(8))
def test_reduced_blocks_positive_definite(seed):
    rng = np.random.default_rng(100 + seed)
    rn = reduce_case(case_from_dict(random_case(rng, 3, 2)).network)
    assert np.allclose(rn.Y_net, rn.Y_net.T)
    assert np.linalg.eigvalsh(rn.Y1)[0] > 0
    assert np.linalg.eigvalsh(rn.Yeq)[0] > 0
    assert np.linalg.eigvalsh(rn.X)[0] > 0
    assert np.allclose(rn.b, -rn.c.T)


def test_gamma_examples():
    assert np.allclose(gamma(0, 0.0), [[0, 1], [-1, 0]])
    assert np.allclose(gamma(0, 1.0), 0.5 * np.array([[1, 1], [-1, 1]]))
    with pytest.raises(NetworkResonance):
        gamma(1j * W0, 0.0, W0)


@settings(max_examples=50, deadline=None)
@given(
    tau=st.floats(0.0, 2.0),
    re=st.floats(-500, 500),
    im=st.floats(-2000, 2000),
)
def test_gamma_inverse_roundtrip(tau, re, im):
    s = complex(re, im)
    a = tau + s / W0
    if abs(a * a + 1) < 1e-6:
        return
    assert np.allclose(gamma(s, tau, W0) @ gamma_inverse(s, tau, W0), np.eye(2), atol=1e-12)


def _real_form(z):
    return np.array([[z.real, -z.imag], [z.imag, z.real]])


def test_partition_dynamics_small_case():
    rn = kron_reduce(np.array([[3.0, -1.0], [-1.0, 2.0]]), [0, 1], 1)
    G = partition_dynamics(rn, 0)
    assert np.allclose(G[:2, :2], rn.X[0, 0] * np.array([[0, -1], [1, 0]]))
    G2 = partition_dynamics(rn, 7j)
    assert np.allclose(G[:2, 2:], G2[:2, 2:])
    assert np.allclose(G[2:, :2], G2[2:, :2])


@pytest.mark.parametrize("seed", range(3))
def test_partition_dynamics_solves_nodal_equations(seed):
    """Feed [I_gfl; V_gfm] through the reduced nodal equations directly."""
    rng = np.random.default_rng(seed)
    case = case_from_dict(random_case(rng, 3, 2)).network
    rn = reduce_case(case)
    s = 5j
    G = partition_dynamics(rn, s)
    yline = np.kron(rn.Y_net, gamma(s, rn.tau, rn.omega0))
    n2 = 2 * rn.n
    i_gfl = rng.normal(size=n2) + 1j * rng.normal(size=n2)
    v_gfm = rng.normal(size=2 * rn.m) + 1j * rng.normal(size=2 * rn.m)
    # I = Y V with V = [V_gfl; V_gfm]; solve for V_gfl, then read I_gfm
    v_gfl = np.linalg.solve(yline[:n2, :n2], i_gfl - yline[:n2, n2:] @ v_gfm)
    i_gfm = yline[n2:, :n2] @ v_gfl + yline[n2:, n2:] @ v_gfm
    out = G @ np.concatenate([i_gfl, v_gfm])
    assert np.allclose(out, np.concatenate([v_gfl, i_gfm]), atol=1e-9)


def _two_bus_reduced(x, tau=0.0):
    case = NetworkCase(["gfm", "gfl"], [Line("gfm", "gfl", x, tau * x)], ["gfl", "gfm"], 1, tau=tau)
    return reduce_case(case)


def test_no_load_fixed_point():
    rn = _two_bus_reduced(0.2)
    op = solve_operating_point(rn, [Injection("GFL", P=0.0, Q=0.0), Injection("GFM", P=0.0)])
    assert np.allclose(op.theta, 0) and np.allclose(op.V, 1) and np.allclose(op.I, 0, atol=1e-12)


@pytest.mark.parametrize("P", [0.5, -0.5, 2.0])
def test_two_bus_power_flow_matches_closed_form(P):
    # lossless line, unity-voltage slack: V2 = cos(d) and sin(2 d) = 2 X P
    X = 0.2
    rn = _two_bus_reduced(X)
    op = solve_operating_point(rn, [Injection("GFL", P=P, Q=0.0), Injection("GFM", P=0.0)])
    d = 0.5 * np.arcsin(2 * X * P)
    assert op.theta[0] - op.theta[1] == pytest.approx(d, abs=1e-9)
    assert op.V[0] == pytest.approx(np.cos(d), abs=1e-9)
    assert validate_operating_point(rn, op).ok


def test_power_beyond_transfer_limit_diverges():
    X = 0.2
    rn = _two_bus_reduced(X)
    with pytest.raises(PowerFlowDiverged):
        solve_operating_point(rn, [Injection("GFL", P=1.05 / (2 * X), Q=0.0), Injection("GFM", P=0.0)])


def test_validate_flags_inconsistent_point(demo):
    assert validate_operating_point(demo.rn, demo.op).max_residual < 1e-8
    bad = OperatingPoint(demo.op.V, demo.op.theta + 0.01, demo.op.i_d, demo.op.i_q, demo.op.v_d, demo.op.v_q)
    assert not validate_operating_point(demo.rn, bad).ok
    vq = demo.op.v_q.copy()
    vq[-1] = 0.1
    rep = validate_operating_point(
        demo.rn, OperatingPoint(demo.op.V, demo.op.theta, demo.op.i_d, demo.op.i_q, demo.op.v_d, vq)
    )
    assert any("v_q" in msg for msg in rep.issues)


def test_solved_gfm_frames_have_zero_vq(decoupled):
    n = decoupled.rn.n
    assert np.allclose(decoupled.op.v_q[n:], 0)
    assert validate_operating_point(decoupled.rn, decoupled.op).ok
