import dataclasses

import numpy as np
import pytest
import scipy.linalg
from conftest import random_system, single_gfl

from gfmgfl.casefile import build_system, case_from_dict, load_case, set_parameter
from gfmgfl.decoupling import (
    block_gap,
    coupling_index,
    damping_lower_bound,
    default_grid,
    delta,
    offdiag_energy,
    pll_bandwidths,
    residual_bound,
    spectrum_deviation,
    split_subsystems,
    subspace_sin_theta,
)
from gfmgfl.errors import PartitionEmpty
from gfmgfl.smallsignal import alpha, match_spectra

# frozen from the scalar recomputation in test_delta_scalar_recomputation
DEMO_DELTA_58 = 18.359475093959595
# frozen from ||L2|| ||L3|| w0 / (eps w_min^2) + max(kP/kI) w0 at w_min = 2 pi 5
DEMO_BOUND_5HZ = 1.450739377631682


def zero_angle_case(J=2.0, D=20.0):
    return {
        "buses": [1, 2, 3, 4, 5],
        "lines": [{"from": k, "to": 4, "x": 0.15, "r": 0.015} for k in (1, 2, 3)] + [{"from": 4, "to": 5, "x": 0.2, "r": 0.02}],
        "tau": 0.1,
        "infinite_bus": 5,
        "converters": [
            {"node": 1, "kind": "GFL", "kP": 15, "kI": 3500},
            {"node": 2, "kind": "GFL", "kP": 15, "kI": 3500},
            {"node": 3, "kind": "GFM", "J": J, "D": D},
        ],
        "operating_point": {"V": [1, 1, 1], "theta": [0, 0, 0], "i_d": [0.5, 0.4, 0.3], "i_q": [0, 0, 0]},
    }


def test_pll_grid(demo):
    bw = pll_bandwidths(demo.model)
    assert np.allclose(bw, np.sqrt(3500 * demo.op.v_d[:2]))
    grid = default_grid(demo.model)
    assert len(grid) == 200
    assert grid[0] == pytest.approx(0.5 * bw.min()) and grid[-1] == pytest.approx(2 * bw.max())


def test_delta_scalar_recomputation(demo):
    w, w0 = 58.0, demo.model.omega0
    vd = demo.op.v_d
    m = demo.model
    lam4 = np.linalg.eigvals(alpha(1j * w, m.tau, w0) * m.K_sy_gfm + m.I_gfm_q)
    lam1 = np.linalg.eigvals(m.L1)
    gfm = np.min(np.abs(2 * w * w / (vd[2] * w0) - lam4))
    gfl = np.max(np.abs(w * w / 3500 - lam1))
    expect = np.hypot(gfm - gfl, (20 / (vd[2] * w0) - 15 / 3500) * w)
    assert delta(m, w) == pytest.approx(expect, rel=1e-12)
    assert delta(m, w) == pytest.approx(DEMO_DELTA_58, rel=1e-9)


def test_delta_grows_with_timescale_separation(demo):
    slow = build_system(set_parameter(set_parameter(demo.case, "gfm.J", 200.0), "gfm.D", 400.0))
    assert delta(slow.model, 58.0) > 10 * delta(demo.model, 58.0)


def test_delta_clamps_when_gfm_overlaps(demo):
    m = demo.model
    lam = np.linalg.eigvals(m.L4(0)).real[0]
    w = np.sqrt(lam / m.T_J[2])
    assert delta(m, w) == 0.0


def test_delta_needs_both_groups():
    m = build_system(case_from_dict(single_gfl())).model
    with pytest.raises(PartitionEmpty):
        delta(m, 10.0)
    with pytest.raises(PartitionEmpty):
        coupling_index(m)


def test_zero_angles_are_decoupled():
    m = build_system(case_from_dict(zero_angle_case())).model
    rep = coupling_index(m)
    assert rep.coupling_index == 0.0 and rep.decoupled
    assert np.all(rep.delta_curve >= 0)


def test_small_inertia_and_power_factor_couple(coupled, decoupled):
    assert coupling_index(coupled.model).verdict() == "coupled"
    assert coupling_index(decoupled.model).verdict() == "decoupled"


def test_verdict_monotone_in_threshold(decoupled):
    rep = coupling_index(decoupled.model)
    eps = np.geomspace(1e-8, 1, 30)
    flags = [rep.verdict(e) == "decoupled" for e in eps]
    assert flags == sorted(flags)


@pytest.mark.parametrize("seed", range(3))
def test_index_dual_implementation(seed):
    m = random_system(seed, 3, 2, phi=-0.2).model
    rep = coupling_index(m)
    s2 = scipy.linalg.svdvals(m.L2)[0] * scipy.linalg.svdvals(m.L3)[0]
    n = m.n
    deltas = []
    for w in rep.omega:
        l4 = scipy.linalg.eigvals(m.alpha(1j * w) * m.K_sy_gfm + m.I_gfm_q)
        l1 = scipy.linalg.eigvals(m.L1)
        first = min(abs(t * w * w - l) for t in m.T_J[n:] for l in l4) - max(
            abs(t * w * w - l) for t in m.T_J[:n] for l in l1
        )
        damp = min(abs(a - b) for a in m.T_D[n:] for b in m.T_P[:n])
        deltas.append(0.0 if first <= 0 else np.sqrt(first**2 + (damp * w) ** 2))
    with np.errstate(divide="ignore"):
        expect = s2 / min(deltas)
    assert rep.coupling_index == pytest.approx(expect, rel=1e-10)


def test_index_nonincreasing_in_damping():
    case = load_case("coupled_3p2")
    idx = [coupling_index(build_system(set_parameter(case, "gfm.D", d)).model).coupling_index for d in (5, 10, 20, 40, 80)]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(idx, idx[1:]))


def test_bound_without_coupling():
    m = build_system(case_from_dict(zero_angle_case())).model
    assert offdiag_energy(m) == 0
    assert damping_lower_bound(m, 10.0) == pytest.approx(15 / 3500 * m.omega0)


def test_bound_linear_in_energy(demo):
    m = demo.model
    base = damping_lower_bound(m, 30.0) - 15 / 3500 * m.omega0
    doubled = dataclasses.replace(m, L2=2 * m.L2)
    assert damping_lower_bound(doubled, 30.0) - 15 / 3500 * m.omega0 == pytest.approx(2 * base, rel=1e-12)


def test_bound_hand_value(demo):
    m = demo.model
    w = 2 * np.pi * 5
    energy = np.linalg.norm(m.L2, 2) * np.linalg.norm(m.L3, 2)
    assert damping_lower_bound(m, w) == pytest.approx(energy * m.omega0 / (0.05 * w * w) + 15 / 3500 * m.omega0)
    assert damping_lower_bound(m, w) == pytest.approx(DEMO_BOUND_5HZ, rel=1e-9)


def test_split_exact_without_gfl_feedback():
    m = build_system(case_from_dict(zero_angle_case())).model
    assert spectrum_deviation(m) < 1e-8


def test_split_gfl_only():
    m = build_system(case_from_dict(single_gfl())).model
    sub = split_subsystems(m)
    assert len(sub.gfm) == 0
    assert match_spectra(sub.gfl.eigenvalues, np.linalg.eigvals(sub.A_gfl)).max() < 1e-12


def test_split_deviation_grows_when_coupled(coupled, decoupled):
    assert spectrum_deviation(coupled.model) > 100 * spectrum_deviation(decoupled.model)


def _hermitian(rng, k, lo, hi):
    Q, _ = np.linalg.qr(rng.normal(size=(k, k)))
    return Q @ np.diag(rng.uniform(lo, hi, k)) @ Q.T


@pytest.mark.parametrize("seed", range(20))
def test_residual_bound_holds_for_hermitian_blocks(seed):
    rng = np.random.default_rng(seed)
    A1 = _hermitian(rng, 3, 0.0, 1.0)
    A2 = _hermitian(rng, 2, 2.0, 3.0)
    E1 = rng.normal(size=(3, 2)) * 0.1
    d = block_gap(A1, A2)
    assert subspace_sin_theta(A1, A2, E1, E1.T) <= residual_bound(A1, A2, E1, E1.T) + 1e-12
    assert d == pytest.approx(np.min(np.abs(np.linalg.eigvalsh(A1)[:, None] - np.linalg.eigvalsh(A2))))


def test_sin_theta_zero_without_perturbation(rng):
    A1 = _hermitian(rng, 2, 0, 1)
    A2 = _hermitian(rng, 2, 3, 4)
    assert subspace_sin_theta(A1, A2, np.zeros((2, 2)), np.zeros((2, 2))) < 1e-12
