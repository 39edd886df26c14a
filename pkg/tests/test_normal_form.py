import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knf.kdv_flow import SolverConfig, Trajectory, airy_flow, apply_P, evolve_kdv, modified_flow
from knf.fourier_core import FourierField, l2_norm, sobolev_norm
from knf.normal_form import (DERIVED, DERIVED_L1, R_TERMS, NFContext, apply_B, apply_D, apply_E,
                             apply_K, apply_L0, apply_R, bound_report, convergence_order, dbp_lhs,
                             dbp_rhs, de_lhs, fredholm_sigma_min, ktilde_matrix, ktilde_norm,
                             oracle_dbp, quartic_direct, quintic_direct, random_v, trajectory_to_v,
                             verify_dbp_identity, verify_de_identity)

from conftest import band_field


def lattice(N):
    return range(-N, N + 1)


def p3(k1, k2, k3):
    return (k1 + k2) * (k2 + k3) * (k3 + k1)


def direct_terms(v: FourierField, ctx: NFContext) -> dict:
    """Loop evaluation of the derived-convention operators on the full lattice."""
    N, t = ctx.N, ctx.t
    S = dict(zip(lattice(N), ctx.S))
    dS = dict(zip(lattice(N), ctx.dS))
    V = {k: v[k] for k in lattice(N)}
    out = {n: np.zeros(2 * N + 1, dtype=complex) for n in ("K", "B1", "B2", "L0", "R2", "R3", "R4", "D")}
    for k1, k2 in itertools.product(lattice(N), repeat=2):
        k = k1 + k2
        if abs(k) > N or k == 0 or k1 * k2 == 0:
            continue
        ph = np.exp(-3j * k * k1 * k2 * t) / (k1 * k2)
        out["K"][k + N] += -1 / 3 * ph * S[k1] * V[k2]
        out["B1"][k + N] += -1 / 6 * ph * V[k1] * V[k2]
        out["R2"][k + N] += -1 / 3 * ph * dS[k1] * V[k2]
    for k1, k2, k3 in itertools.product(lattice(N), repeat=3):
        k = k1 + k2 + k3
        if abs(k) > N or k == 0 or k1 == 0:
            continue
        P = p3(k1, k2, k3)
        ph = np.exp(-3j * t * P)
        out["L0"][k + N] += 1j / 3 * ph * S[k1] / k1 * S[k2] * V[k3]
        if k2 + k3 != 0:
            out["R3"][k + N] += 1j / 3 * ph * V[k1] / k1 * S[k2] * V[k3]
        if P != 0:
            w = ph / (k1 * P)
            out["B2"][k + N] += 1 / 18 * w * (V[k1] + S[k1]) * V[k2] * V[k3]
            out["R4"][k + N] += 1 / 18 * w * dS[k1] * V[k2] * V[k3]
            out["D"][k + N] += DERIVED_L1["D"] * w * S[k1] * S[k2] * V[k3]
    return out


def resonant_direct(v: FourierField, ctx: NFContext) -> dict:
    N = ctx.N
    S = dict(zip(lattice(N), ctx.S))
    out = {n: np.zeros(2 * N + 1, dtype=complex) for n in ("R11", "R12", "R13", "R14")}
    for k in lattice(N):
        if k == 0:
            continue
        out["R11"][k + N] = -1j / 6 * v[k] * abs(v[k]) ** 2 / k
        out["R12"][k + N] = -1j / 6 * S[-k] * v[k] ** 2 / k
        out["R13"][k + N] = 1j / 3 * v[k] * sum(S[j] * v[-j] / j for j in lattice(N) if j and abs(j) != abs(k))
        out["R14"][k + N] = -1j / 3 * S[k] / k * sum(S[-j] * v[j] for j in lattice(N))
    return out


@pytest.fixture(scope="module")
def small(wave):
    return NFContext(wave.Phi, wave.mean, t=0.37, N=6, galerkin=False)


@pytest.fixture
def v6():
    return random_v(6, np.random.default_rng(7))


class TestContext:
    def test_rejects_mean(self, wave):
        Phi = FourierField(wave.Phi.coeffs + np.eye(1, wave.Phi.coeffs.size, wave.Phi.N)[0])
        with pytest.raises(ValueError):
            NFContext(Phi, 0.0)

    def test_S_phase(self, wave):
        ctx = NFContext(wave.Phi, wave.mean, t=0.2, N=5)
        k = np.arange(-5, 6)
        assert np.allclose(ctx.S, wave.Phi.resize(5).coeffs * np.exp(-0.2j * (k**3 - wave.mean * k)))

    def test_rejects_mismatched_v(self, small):
        with pytest.raises(ValueError):
            apply_K(random_v(8, np.random.default_rng(0)), small)


class TestOperatorsAgainstLoops:
    @pytest.mark.parametrize("name", ["K", "L0", "D"])
    def test_linear_terms(self, name, v6, small):
        ref = direct_terms(v6, small)[name]
        got = {"K": apply_K, "L0": apply_L0, "D": apply_D}[name](v6, small).coeffs
        assert np.allclose(got, ref, atol=1e-14)

    def test_B_components(self, small):
        v = random_v(6, np.random.default_rng(3), "power")
        total, parts = apply_B(v, small, components=True)
        ref = direct_terms(v, small)
        for n in ("B1", "B2"):
            assert np.linalg.norm(parts[n].coeffs - ref[n]) <= 1e-13 * np.linalg.norm(ref[n])
        assert np.allclose(total.coeffs, ref["B1"] + ref["B2"], atol=1e-15)

    def test_B_at_N8(self, wave):
        ctx = NFContext(wave.Phi, wave.mean, t=0.11, N=8, galerkin=False)
        v = random_v(8, np.random.default_rng(11))
        ref = direct_terms(v, ctx)
        got = apply_B(v, ctx).coeffs
        assert np.linalg.norm(got - ref["B1"] - ref["B2"]) <= 1e-13 * np.linalg.norm(ref["B1"] + ref["B2"])

    def test_remainder_cubic_and_resonant(self, v6, small):
        _, parts = apply_R(v6, small, components=True)
        ref = direct_terms(v6, small) | resonant_direct(v6, small)
        for n in ("R11", "R12", "R13", "R14", "R2", "R3", "R4"):
            assert np.allclose(parts[n].coeffs, ref[n], atol=1e-14), n
        assert not np.any(parts["R1b"].coeffs)

    @pytest.mark.parametrize("which", ["R5", "R6"])
    def test_quartic_factored_matches_direct(self, which, v6, small):
        _, parts = apply_R(v6, small, components=True)
        assert np.allclose(parts[which].coeffs, quartic_direct(v6, small, which).coeffs, atol=1e-15)

    def test_quartic_galerkin(self, wave):
        ctx = NFContext(wave.Phi, wave.mean, t=0.2, N=5)
        v = random_v(5, np.random.default_rng(2))
        _, parts = apply_R(v, ctx, components=True)
        for which in ("R5", "R6"):
            assert np.allclose(parts[which].coeffs, quartic_direct(v, ctx, which).coeffs, atol=1e-15)

    def test_quintic_factored_matches_direct(self, wave):
        ctx = NFContext(wave.Phi, wave.mean, t=0.3, N=4, galerkin=False)
        v = random_v(4, np.random.default_rng(5))
        _, parts = apply_E(v, ctx, components=True)
        assert np.allclose(parts["E4"].coeffs, quintic_direct(v, ctx).coeffs, atol=1e-15)

    def test_K_hand_sum(self):
        # Phi = cos x, v = cos 2x, t = 0: (k1, k2) = (1, 2), (-1, -2), (1, -2), (-1, 2)
        Phi = FourierField.from_modes(4, {1: 0.5})
        ctx = NFContext(Phi, 0.0, N=4, galerkin=False)
        K = apply_K(FourierField.from_modes(4, {2: 0.5}), ctx)
        assert K[3] == pytest.approx(-1 / 24) and K[1] == pytest.approx(1 / 24)
        assert K[-3] == pytest.approx(-1 / 24) and K[-1] == pytest.approx(1 / 24)
        assert K[2] == 0 and K[4] == 0

    def test_L0_is_P_at_time_zero(self, wave, rng):
        ctx = NFContext(wave.Phi, wave.mean, t=0.0, N=10, galerkin=False)
        v = random_v(10, rng)
        assert np.allclose(apply_L0(v, ctx).coeffs, apply_P(v, wave.Phi.resize(10)).coeffs, atol=1e-15)

    @pytest.mark.parametrize("op", [apply_K, apply_B, apply_L0, apply_R, apply_D, apply_E])
    def test_zero_input(self, op, small):
        assert not np.any(op(FourierField.zeros(6), small).coeffs)


class TestChainRule:
    @given(st.floats(0.0, 2.0), st.integers(0, 2**32 - 1), st.booleans())
    @settings(max_examples=15, deadline=None)
    def test_dbp_identity_pointwise(self, wave, t, seed, galerkin):
        ctx = NFContext(wave.Phi, wave.mean, t=t, N=7, galerkin=galerkin)
        v = random_v(7, np.random.default_rng(seed))
        lhs, rhs = dbp_lhs(v, ctx).coeffs, dbp_rhs(v, ctx).coeffs
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)

    @given(st.floats(0.0, 2.0), st.integers(0, 2**32 - 1))
    @settings(max_examples=15, deadline=None)
    def test_de_identity_pointwise(self, wave, t, seed):
        ctx = NFContext(wave.Phi, wave.mean, t=t, N=7)
        v = random_v(7, np.random.default_rng(seed))
        lhs, rhs = de_lhs(v, ctx).coeffs, apply_E(v, ctx).coeffs
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)

    def test_boundary_term_only_under_galerkin_cut(self, wave, rng):
        v = random_v(8, rng)
        on = NFContext(wave.Phi, wave.mean, t=0.1, N=8)
        _, parts = apply_R(v, on, components=True)
        assert np.linalg.norm(parts["R1b"].coeffs) > 0
        _, parts = apply_R(v, on.full_lattice(), components=True)
        assert not np.any(parts["R1b"].coeffs)


class TestOracle:
    def test_derived_closes(self, wave):
        ctx = NFContext(wave.Phi, wave.mean, t=0.3, N=8)
        rep = oracle_dbp(random_v(8, np.random.default_rng(0)), ctx)
        assert rep.residuals["identity_derived"] < 1e-12
        assert rep.residuals["B2_vs_M3_N3"] < 1e-14
        assert rep.comparisons["derived"]["divergent_terms"] == []
        assert max(rep.comparisons["derived"]["term_rel_diff"].values()) < 1e-12

    def test_displayed_convention_is_pinpointed(self, wave):
        ctx = NFContext(wave.Phi, wave.mean, t=0.3, N=8)
        rep = oracle_dbp(random_v(8, np.random.default_rng(0)), ctx)
        for key in ("displayed[R13 abs]", "displayed[R13 signed]"):
            comp = rep.comparisons[key]
            assert comp["identity_rel_residual"] > 0.1
            assert "L0" in comp["divergent_terms"] and "B2" in comp["divergent_terms"]
        assert rep.comparisons["displayed[R13 signed]"]["real_valued"] is False

    def test_single_mode_resonant_term(self):
        # Phi = 0 and v on k = +-3 only: the oracle's resonant part is R11 alone
        ctx = NFContext(FourierField.zeros(6), 0.0, t=0.0, N=6, galerkin=False)
        v = FourierField.from_modes(6, {3: 0.4 - 0.3j})
        rep = oracle_dbp(v, ctx)
        r11 = rep.terms["oracle"]["R11"]
        vk = v[3]
        assert r11[3] == pytest.approx(DERIVED["R11"] * vk * abs(vk) ** 2 / 3, abs=1e-16)

    def test_size_limit(self, wave):
        with pytest.raises(ValueError):
            oracle_dbp(random_v(20, np.random.default_rng(0)), NFContext(wave.Phi, wave.mean, N=20))


@pytest.fixture(scope="module")
def kdv_traj(wave):
    g = band_field(16, 4, 8, np.random.default_rng(1))
    return evolve_kdv(wave.field(16) + g, SolverConfig(16, 2.5e-5, 4e-3, monitor_every=1))


class TestTrajectoryIdentity:
    def test_second_order(self, wave, kdv_traj):
        ctx = NFContext(wave.Phi, wave.mean, N=16)
        steps = [2.5e-5, 5e-5, 1e-4, 2e-4]
        res = [verify_dbp_identity(kdv_traj, ctx, h, [2e-3]).rel_residual[0] for h in steps]
        assert abs(convergence_order(steps, res) - 2.0) < 0.1

    def test_zero_data(self, wave):
        # a trajectory sitting on the wave has u = 0: both sides vanish
        ctx = NFContext(wave.Phi, wave.mean, N=16)
        times = np.linspace(0, 2e-3, 3)
        traj = Trajectory(times, np.tile(wave.field(16).coeffs, (3, 1)), {})
        res = verify_dbp_identity(traj, ctx, 1e-3, [1e-3])
        assert res.abs_residual[0] == 0 and res.rhs_norm[0] == 0

    def test_free_flow_without_wave(self, rng):
        # Phi = 0: v is constant along the Airy flow and K, L0 vanish
        ctx = NFContext(FourierField.zeros(8), 0.0, N=8)
        g = FourierField.from_modes(8, {5: 0.3j})
        times = np.linspace(0, 1e-2, 5)
        traj = Trajectory(times, np.array([airy_flow(g, t, 0.0).coeffs for t in times]), {})
        vs = trajectory_to_v(traj, ctx)
        assert all(np.allclose(x.coeffs, g.coeffs, atol=1e-15) for x in vs)
        assert not np.any(apply_K(vs[0], ctx).coeffs) and not np.any(apply_L0(vs[0], ctx).coeffs)

    def test_de_second_order(self, wave):
        g = band_field(16, 2, 10, np.random.default_rng(4))
        traj = modified_flow(g, 4e-3, wave, SolverConfig(16, 2.5e-5, 4e-3, monitor_every=1), "expm")
        ctx = NFContext(wave.Phi, wave.mean, N=16)
        steps = [2.5e-5, 5e-5, 1e-4, 2e-4]
        res = [verify_de_identity(traj, ctx, h, [2e-3]).rel_residual[0] for h in steps]
        assert abs(convergence_order(steps, res) - 2.0) < 0.1

    def test_probe_finer_than_samples(self, wave, kdv_traj):
        ctx = NFContext(wave.Phi, wave.mean, N=16)
        with pytest.raises(ValueError):
            verify_dbp_identity(kdv_traj, ctx, 1e-5, [2e-3])

    def test_convergence_order_exact(self):
        h = np.array([1e-3, 2e-3, 4e-3])
        assert convergence_order(h, 7 * h**2) == pytest.approx(2.0, abs=1e-12)


class TestFredholm:
    def test_zero_wave(self):
        ctx = NFContext(FourierField.zeros(16), 0.0, N=16)
        assert fredholm_sigma_min(ctx, 16, 0.25) == pytest.approx(1.0, abs=1e-15)

    def test_norm_bound(self, wave):
        ctx = NFContext(wave.Phi, wave.mean, N=64)
        assert ktilde_norm(ctx, 64, 0.25) <= 2 * l2_norm(wave.Phi)

    def test_truncation_stable(self, wave):
        ctx = NFContext(wave.Phi, wave.mean, N=64)
        sig = [fredholm_sigma_min(ctx, n, 0.25) for n in (16, 32, 64)]
        assert min(sig) > 0
        assert abs(sig[2] - sig[1]) < 0.1 * sig[1]

    def test_matrix_is_K_at_t0(self, wave, rng):
        # unweighted K~ acting on u is the K operator at t = 0
        ctx = NFContext(wave.Phi, wave.mean, N=12, galerkin=False)
        u = random_v(12, rng)
        k = np.arange(-12, 13)
        M = ktilde_matrix(ctx, 12, 0.0)
        nz = k != 0
        assert np.allclose(M @ u.coeffs[nz], apply_K(u, ctx).coeffs[nz], atol=1e-14)


@pytest.fixture(scope="module")
def report(wave):
    return bound_report(NFContext(wave.Phi, wave.mean, N=16), 0.25, 30, seed=3).bounds


class TestBounds:
    def test_no_chain_violations(self, report):
        assert not any(report["chain_violations"].values())

    def test_no_constant_violations(self, report):
        assert not any(report["constant_violations"].values())

    def test_ratios_stable_in_N(self, wave, report):
        doubled = bound_report(NFContext(wave.Phi, wave.mean, N=32), 0.25, 30, seed=3).bounds
        for key, r in report["constant_max_ratio"].items():
            assert 0.5 < doubled["constant_max_ratio"][key] / r < 2.0, key

    def test_negative_norm_below_l2(self, wave, rng):
        ctx = NFContext(wave.Phi, wave.mean, N=16)
        K = apply_K(random_v(16, rng), ctx)
        assert sobolev_norm(K, 0.25, "homogeneous") <= l2_norm(K)

    def test_rejects_bad_s(self, wave):
        with pytest.raises(ValueError):
            bound_report(NFContext(wave.Phi, wave.mean, N=8), 0.5, 1)

    @pytest.mark.parametrize("law", ["flat", "high", "power"])
    def test_random_v_unit(self, law, rng):
        v = random_v(16, rng, law)
        assert l2_norm(v) == pytest.approx(1.0, rel=1e-14) and v[0] == 0
