from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from secure_stn.channel_models import ChannelSet, RobustSpec
from secure_stn.optimizer import solve_perfect
from secure_stn.rate_metrics import CovarianceTriple, ScenarioConfig, rate_eve
from secure_stn.sdp_formulation import (
    Constraint,
    ConicProgram,
    Variable,
    build_perfect_program,
    build_robust_program,
    constant,
    embed,
    eve_null_basis,
    gamma_e_lmi,
    gamma_p_lmi,
    lemma1_lmi,
    pu_constraint,
    realify,
    solve,
    trace_with,
    triple_vars,
    unembed,
)
from secure_stn.validation import random_scalar_instance

from helpers import cn, random_channels


def _psd(rng, n, rank=None):
    A = cn(rng, n, rank or n)
    return A @ A.conj().T


def _values(Qp, Qs, Qz, **scalars):
    return {"q_p": Qp, "q_s": Qs, "q_z": Qz, **scalars}


CFG3 = ScenarioConfig(n_t=3, n_s=3, n_r=2, tau_p=1.0, tau_s=1.0)


class TestEveRateLmi:
    def test_zero_at_unit_beta(self, rng):
        ch = random_channels(rng)
        tv = triple_vars(3, 3)
        M = lemma1_lmi(tv, 1.0, ch.H_e, ch.G_e, 1.0).value(_values(np.zeros((3, 3)), _psd(rng, 3), _psd(rng, 3)))
        np.testing.assert_array_equal(M, 0)

    def test_hand_assembled(self, rng):
        H, G = cn(rng, 2, 2), cn(rng, 2, 2)
        Qp, Qs, Qz = _psd(rng, 2), _psd(rng, 2), _psd(rng, 2)
        M = lemma1_lmi(triple_vars(2, 2), 2.0, H, G, 0.8).value(_values(Qp, Qs, Qz))
        expect = (G.conj().T @ (Qs + Qz) @ G + 0.8 * np.eye(2)) - H.conj().T @ Qp @ H
        np.testing.assert_allclose(M, expect, atol=1e-12)

    def test_equivalence_with_determinant(self, rng):
        tv = triple_vars(3, 3)
        disagree = 0
        for _ in range(500):
            H, G = cn(rng, 3, 2), cn(rng, 3, 2)
            w = cn(rng, 3)
            Qp = np.outer(w, w.conj())
            Qs, Qz = _psd(rng, 3, 1), _psd(rng, 3, 1)
            N = G.conj().T @ (Qs + Qz) @ G + np.eye(2)
            det = np.linalg.det(np.eye(2) + np.linalg.solve(N, H.conj().T @ Qp @ H)).real
            for beta in (det * (1 - 1e-6), det * (1 + 1e-6)):
                lam = np.linalg.eigvalsh(lemma1_lmi(tv, beta, H, G, 1.0).value(_values(Qp, Qs, Qz)))[0]
                scale = max(1.0, np.abs(H.conj().T @ Qp @ H).max())
                disagree += (lam >= -1e-8 * scale) != (beta >= det)
        assert disagree == 0

    def test_rejects_beta_below_one(self, rng):
        with pytest.raises(ValueError):
            lemma1_lmi(triple_vars(2, 2), 0.9, cn(rng, 2, 1), cn(rng, 2, 1), 1.0)


class TestGammaP:
    def test_zero_radius_reduces_to_perfect(self, rng):
        ch = random_channels(rng)
        tv = triple_vars(3, 3)
        mu = Variable("mu_p", "nonneg")
        vals = _values(_psd(rng, 3), _psd(rng, 3), _psd(rng, 3), mu_p=0.0)
        M = gamma_p_lmi(tv, 1.5, mu, ch.g_p, 0.0, ch.h_p, 1.0, 1.0).value(vals)
        alpha = 1 - 1.5 * 2.0
        perfect = pu_constraint(tv, alpha, ch.h_p, ch.g_p, 1.0).value(vals)
        assert M[-1, -1] == pytest.approx(perfect[0, 0], abs=1e-12)
        S = vals["q_s"] + vals["q_z"]
        np.testing.assert_allclose(M[:3, :3], alpha * S, atol=1e-12)

    def test_hand_assembled(self, rng):
        g, h = cn(rng, 2), cn(rng, 2)
        Qp, Qs, Qz = _psd(rng, 2), _psd(rng, 2), _psd(rng, 2)
        mu, eps, beta, tau, s2 = 0.7, 0.1, 1.3, 0.5, 1.2
        M = gamma_p_lmi(triple_vars(2, 2), beta, Variable("mu_p", "nonneg"), g, eps, h, s2, tau).value(
            _values(Qp, Qs, Qz, mu_p=mu))
        a = 1 - beta * 2**tau
        S = Qs + Qz
        expect = np.block([
            [mu * np.eye(2) + a * S, a * (S @ g)[:, None]],
            [a * (g.conj() @ S)[None, :], np.array([[a * g.conj() @ S @ g + h.conj() @ Qp @ h + a * s2 - mu * eps**2]])],
        ])
        np.testing.assert_allclose(M, expect, atol=1e-12)


class TestGammaE:
    def test_zero_point(self, rng):
        tv = triple_vars(3, 3)
        M = gamma_e_lmi(tv, 1.0, Variable("mu_e", "nonneg"), cn(rng, 3, 2), 0.1, cn(rng, 3, 2)).value(
            _values(np.zeros((3, 3)), _psd(rng, 3), _psd(rng, 3), mu_e=0.0))
        np.testing.assert_array_equal(M, 0)

    def test_hand_assembled(self, rng):
        G, H = cn(rng, 2, 2), cn(rng, 3, 2)
        Qp, Qs, Qz = _psd(rng, 3), _psd(rng, 2), _psd(rng, 2)
        mu, eps, beta, s2 = 0.4, 0.2, 1.7, 0.9
        M = gamma_e_lmi(triple_vars(3, 2), beta, Variable("mu_e", "nonneg"), G, eps, H, s2).value(
            _values(Qp, Qs, Qz, mu_e=mu))
        b1 = beta - 1
        S = Qs + Qz
        tl = b1 * s2 * np.eye(2) - mu * np.eye(2) + b1 * G.conj().T @ S @ G - H.conj().T @ Qp @ H
        expect = np.block([[tl, b1 * G.conj().T @ S], [b1 * S @ G, b1 * S + mu / eps**2 * np.eye(2)]])
        np.testing.assert_allclose(M, expect, atol=1e-12)

    def test_needs_positive_radius(self, rng):
        with pytest.raises(ValueError):
            gamma_e_lmi(triple_vars(2, 2), 1.2, Variable("mu_e", "nonneg"), cn(rng, 2, 1), 0.0, cn(rng, 2, 1))


class TestPrograms:
    def test_perfect_structure(self, rng):
        ch = random_channels(rng)
        p = build_perfect_program(ch, CFG3, 1.5)
        c = p.counts()
        assert c["psd_variables"] == 3 and c["scalar_variables"] == 0
        assert c["lmis"] == 1 and p.lmi_sizes() == [2]
        assert c["scalar_constraints"] == 3

    def test_robust_structure(self, rng):
        ch = random_channels(rng)
        p = build_robust_program(ch, RobustSpec.around(ch, 0.1), CFG3, 1.5)
        assert len(p.variables) == 5
        assert p.lmi_sizes() == [3 + 1, 2 + 3]
        assert p.counts()["scalar_constraints"] == 2

    def test_no_an_drops_noise(self, rng):
        p = build_perfect_program(random_channels(rng), CFG3, 1.5, with_an=False)
        assert [v.name for v in p.variables] == ["q_p", "q_s"]

    def test_beta_outside_interval(self, rng):
        ch = random_channels(rng)
        hi = 1 + CFG3.p_th * np.linalg.norm(ch.h_p) ** 2
        with pytest.raises(ValueError):
            build_perfect_program(ch, CFG3, hi * 1.01)
        with pytest.raises(ValueError):
            build_perfect_program(ch, CFG3, 0.5)

    def test_trivial_targets_zero_optimum(self, rng):
        ch = random_channels(rng)
        res = solve(build_perfect_program(ch, CFG3.with_(tau_p=0.0, tau_s=0.0), 1.0))
        assert res.optimal
        assert res.objective == pytest.approx(0.0, abs=1e-7)
        assert all(np.abs(res.values[k]).max() < 1e-6 for k in ("q_p", "q_s"))

    def test_unit_beta_silences_eve(self, rng):
        ch = random_channels(rng, n_t=4, n_r=2)
        cfg = ScenarioConfig(n_t=4, n_s=3, n_r=2, tau_p=1.0, tau_s=1.0)
        res = solve(build_perfect_program(ch, cfg, 1.0))
        assert res.optimal
        assert np.abs(ch.H_e.conj().T @ res.values["q_p"] @ ch.H_e).max() < 1e-9
        assert eve_null_basis(ch.H_e).shape == (4, 2)

    def test_eve_determinant_bound_on_solutions(self, rng):
        for _ in range(10):
            ch = random_channels(rng)
            beta = 1.2 + rng.uniform()
            res = solve(build_perfect_program(ch, CFG3, beta))
            if not res.optimal:
                continue
            v = res.values
            t = CovarianceTriple(v["q_p"], v["q_s"], v["q_z"])
            assert 2.0 ** rate_eve(t, ch, CFG3) <= beta + 1e-6 or np.linalg.matrix_rank(v["q_p"], 1e-6) > 1

    def test_robust_continuity(self, rng):
        checked = 0
        for _ in range(20):
            ch = random_channels(rng)
            beta = 1.5
            perfect = solve(build_perfect_program(ch, CFG3, beta))
            if not perfect.optimal:
                continue
            robust = solve(build_robust_program(ch, RobustSpec.around(ch, 1e-6), CFG3, beta))
            assert robust.optimal
            assert robust.objective == pytest.approx(perfect.objective, rel=0.005)
            checked += 1
        assert checked >= 5

    def test_robust_costs_more(self, rng):
        checked = 0
        for _ in range(100):
            ch = random_channels(rng)
            beta = 1.0 + 2 * rng.uniform()
            perfect = solve(build_perfect_program(ch, CFG3, beta))
            robust = solve(build_robust_program(ch, RobustSpec.around(ch, 0.1), CFG3, beta))
            if robust.optimal:
                assert perfect.optimal
                assert robust.objective >= perfect.objective - 1e-6 * max(1.0, perfect.objective)
                checked += 1
        assert checked >= 20


class TestRealify:
    def test_identity_embedding(self):
        np.testing.assert_array_equal(embed(np.eye(2)), np.eye(4))
        X = Variable("x", "hermitian_psd", 2)
        p = ConicProgram([X], trace_with(X, np.eye(2)), [])
        r = realify(p)
        assert r.variables[0].kind == "symmetric_psd" and r.variables[0].dim == 4
        assert r.domain == "real"

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5))
    def test_round_trip(self, seed, n):
        A = cn(np.random.default_rng(seed), n, n)
        H = A + A.conj().T
        np.testing.assert_allclose(unembed(embed(H)), H, atol=1e-14)
        assert np.allclose(embed(H), embed(H).T)

    def test_psd_preserved(self, rng):
        H = _psd(rng, 3)
        assert np.linalg.eigvalsh(embed(H)).min() >= -1e-12
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(embed(H)))[::2], np.linalg.eigvalsh(H), atol=1e-10)

    def test_scalar_instance_agrees_with_grid(self, rng):
        for _ in range(3):
            ch, cfg = random_scalar_instance(rng)
            try:
                beta = solve_perfect(ch, cfg, rng=rng).beta_star
            except Exception:
                continue
            res = solve(build_perfect_program(ch, cfg, beta))
            assert res.optimal
            oracle = _fixed_beta_scalar_grid(ch, cfg, beta)
            assert res.objective == pytest.approx(oracle, rel=0.01)


def _fixed_beta_scalar_grid(ch: ChannelSet, cfg: ScenarioConfig, beta: float) -> float:
    """Zooming grid over (q_s, q_z); q_p is the smallest PU-feasible value."""
    g = {k: abs(getattr(ch, k).ravel()[0]) ** 2 for k in ("h_p", "h_s", "H_e", "g_p", "g_s", "G_e")}
    t, gamma = 2.0**cfg.tau_p, 2.0**cfg.tau_s - 1
    lo_s = lo_z = 0.0
    hi_s = hi_z = cfg.p_th
    best = np.inf
    for n in (601,) + (201,) * 30:
        qs, qz = np.meshgrid(np.linspace(lo_s, hi_s, n), np.linspace(lo_z, hi_z, n), indexing="ij")
        I = qs + qz
        qp = np.maximum(beta * t - 1, 0) * (g["g_p"] * I + cfg.sigma2_p) / g["h_p"]
        ok = (g["H_e"] * qp <= (beta - 1) * (g["G_e"] * I + cfg.sigma2_e) * (1 + 1e-12))
        ok &= g["g_s"] * qs >= gamma * (g["g_s"] * qz + g["h_s"] * qp + cfg.sigma2_s)
        ok &= qp + qs + qz <= cfg.p_th
        obj = np.where(ok, qp + qs, np.inf)
        k = np.unravel_index(np.argmin(obj), obj.shape)
        if not np.isfinite(obj[k]):
            break
        best = min(best, obj[k])
        ds, dz = (hi_s - lo_s) / (n - 1), (hi_z - lo_z) / (n - 1)
        lo_s, hi_s = max(0.0, qs[k] - 8 * ds), min(cfg.p_th, qs[k] + 8 * ds)
        lo_z, hi_z = max(0.0, qz[k] - 8 * dz), min(cfg.p_th, qz[k] + 8 * dz)
    return best


class TestSolve:
    def test_trivially_feasible(self):
        X = Variable("x", "hermitian_psd", 2)
        res = solve(ConicProgram([X], trace_with(X, np.eye(2)), []))
        assert res.optimal and res.objective == pytest.approx(0.0, abs=1e-8)

    def test_trivially_infeasible(self):
        X = Variable("x", "hermitian_psd", 2)
        bad = Constraint("ge", constant(-1.0) - trace_with(X, np.eye(2)), "neg_trace")
        assert solve(ConicProgram([X], trace_with(X, np.eye(2)), [bad])).status == "infeasible"

    def test_complex_off_diagonal_recovered(self):
        # min Tr X s.t. Re/Im parts of X[0,1] pinned, X psd -> X = [[1, c], [c*, 1]] with |c| = 1
        X = Variable("x", "hermitian_psd", 2)
        c = (1 + 1j) / np.sqrt(2)
        e01 = np.zeros((2, 2), dtype=complex)
        e01[1, 0] = 1.0
        pin_re = Constraint("eq", 0.5 * (trace_with(X, e01) + trace_with(X, e01.conj().T)) - constant(c.real), "re")
        pin_im = Constraint("eq", (-0.5j) * (trace_with(X, e01) - trace_with(X, e01.conj().T)) - constant(c.imag), "im")
        res = solve(ConicProgram([X], trace_with(X, np.eye(2)), [pin_re, pin_im]))
        assert res.optimal
        assert res.values["x"][0, 1] == pytest.approx(c, abs=1e-6)
        assert res.objective == pytest.approx(2.0, abs=1e-6)

    def test_undeclared_variable_rejected(self):
        X, Y = Variable("x", "hermitian_psd", 1), Variable("y", "hermitian_psd", 1)
        with pytest.raises(ValueError):
            ConicProgram([X], trace_with(X, np.eye(1)), [Constraint("ge", trace_with(Y, np.eye(1)))])
