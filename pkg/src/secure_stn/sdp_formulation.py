"""Fixed-slack SDPs for secure beamforming and a small conic-program toolkit.

A :class:`ConicProgram` is a list of affine constraints over named
variables.  Affine expressions store one dense coefficient tensor per
variable, so building, evaluating, realifying and lowering to the solver
all go through the same representation.  Programs are small (matrices of
size at most ``n_r + n_s``), so dense storage is the simplest choice.

The solver backend is Clarabel (interior point, PSD-triangle cones); the
complex program is first mapped to an equivalent real one by
:func:`realify`.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple

import clarabel
import numpy as np
import scipy.sparse as sp

from .channel_models import ChannelSet, RobustSpec
from .rate_metrics import ScenarioConfig

SOLVER_TOL = 1e-8
MAX_ITER = 200
# Clarabel's "AlmostSolved" is accepted as optimal only within this residual.
ACCEPT_TOL = 1e-6
# Sign of the multiplier term in the top-left block of the worst-case Eve LMI.
# Only mutation tests change it.
_GAMMA_E_MU_SIGN = -1.0

MATRIX_KINDS = ("hermitian_psd", "symmetric_psd")
SCALAR_KINDS = ("nonneg", "free")


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str
    dim: int = 1

    def __post_init__(self):
        if self.kind not in MATRIX_KINDS + SCALAR_KINDS:
            raise ValueError(f"unknown variable kind {self.kind!r}")

    @property
    def is_matrix(self) -> bool:
        return self.kind in MATRIX_KINDS


class AffineExpr:
    """Affine map ``C + sum_v L_v(v)`` with values of shape ``(rows, cols)``.

    For a matrix variable ``X`` the coefficient is a tensor ``T`` of shape
    ``(rows, cols, n, n)`` with ``L(X)[a, b] = sum_ij T[a, b, i, j] X[i, j]``;
    for a scalar variable ``t`` it is a ``(rows, cols)`` matrix ``M`` with
    ``L(t) = t M``.
    """

    def __init__(self, const: np.ndarray, terms: dict[Variable, np.ndarray] | None = None):
        self.const = np.atleast_2d(np.asarray(const))
        self.terms: dict[Variable, np.ndarray] = dict(terms or {})

    @property
    def shape(self) -> tuple[int, int]:
        return self.const.shape

    @classmethod
    def zeros(cls, rows: int, cols: int) -> AffineExpr:
        return cls(np.zeros((rows, cols), dtype=complex))

    def __add__(self, other: AffineExpr) -> AffineExpr:
        if not isinstance(other, AffineExpr):
            other = AffineExpr(np.broadcast_to(other, self.shape))
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        terms = dict(self.terms)
        for v, T in other.terms.items():
            terms[v] = terms[v] + T if v in terms else T
        return AffineExpr(self.const + other.const, terms)

    __radd__ = __add__

    def __mul__(self, c: float) -> AffineExpr:
        return AffineExpr(c * self.const, {v: c * T for v, T in self.terms.items()})

    __rmul__ = __mul__

    def __neg__(self) -> AffineExpr:
        return self * -1.0

    def __sub__(self, other: AffineExpr) -> AffineExpr:
        return self + (-other)

    def variables(self) -> set[Variable]:
        return set(self.terms)

    def value(self, values: dict[str, np.ndarray | float]) -> np.ndarray:
        out = np.array(self.const, dtype=complex)
        for v, T in self.terms.items():
            x = values[v.name]
            if v.is_matrix:
                out = out + np.tensordot(T, x, axes=([2, 3], [0, 1]))
            else:
                out = out + float(x) * T
        return out


def constant(C) -> AffineExpr:
    return AffineExpr(np.atleast_2d(np.asarray(C, dtype=complex)))


def sandwich(var: Variable, left: np.ndarray, right: np.ndarray) -> AffineExpr:
    """``left @ X @ right`` for a matrix variable ``X``."""
    left, right = np.atleast_2d(left), np.atleast_2d(right)
    T = np.einsum("ai,jb->abij", left, right)
    return AffineExpr(np.zeros((left.shape[0], right.shape[1]), dtype=complex), {var: T})


def trace_with(var: Variable, A: np.ndarray) -> AffineExpr:
    """``Tr(A X)`` as a 1x1 expression."""
    return AffineExpr(np.zeros((1, 1), dtype=complex), {var: np.asarray(A, dtype=complex).T[None, None]})


def scaled(var: Variable, M) -> AffineExpr:
    """``t * M`` for a scalar variable ``t``."""
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    return AffineExpr(np.zeros_like(M), {var: M})


def block(rows: list[list[AffineExpr]]) -> AffineExpr:
    """Assemble a block matrix of affine expressions."""
    heights = [r[0].shape[0] for r in rows]
    widths = [e.shape[1] for e in rows[0]]
    out_shape = (sum(heights), sum(widths))
    const = np.zeros(out_shape, dtype=complex)
    terms: dict[Variable, np.ndarray] = {}
    r0 = 0
    for row, h in zip(rows, heights):
        c0 = 0
        for e, w in zip(row, widths):
            if e.shape != (h, w):
                raise ValueError(f"block of shape {e.shape} does not fit ({h}, {w})")
            const[r0:r0 + h, c0:c0 + w] = e.const
            for v, T in e.terms.items():
                if v not in terms:
                    tail = (v.dim, v.dim) if v.is_matrix else ()
                    terms[v] = np.zeros(out_shape + tail, dtype=T.dtype if np.iscomplexobj(T) else complex)
                terms[v][r0:r0 + h, c0:c0 + w] = T
            c0 += w
        r0 += h
    return AffineExpr(const, terms)


@dataclass
class Constraint:
    """``expr >= 0`` (scalar ``ge``), ``expr == 0`` (``eq``) or ``expr >= 0`` in the PSD order (``psd``)."""

    kind: str
    expr: AffineExpr
    label: str = ""


@dataclass
class ConicProgram:
    """Minimise a real linear objective subject to affine conic constraints."""

    variables: list[Variable]
    objective: AffineExpr
    constraints: list[Constraint]
    domain: str = "complex"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        declared = set(self.variables)
        for c in self.constraints:
            unknown = c.expr.variables() - declared
            if unknown:
                raise ValueError(f"constraint {c.label!r} uses undeclared variables {sorted(v.name for v in unknown)}")
            if c.kind == "psd":
                r, k = c.expr.shape
                if r != k or not np.allclose(c.expr.const, c.expr.const.conj().T, atol=1e-12):
                    raise ValueError(f"PSD constraint {c.label!r} has a non-Hermitian constant block")
            elif c.kind in ("ge", "eq"):
                if c.expr.shape != (1, 1):
                    raise ValueError(f"scalar constraint {c.label!r} has shape {c.expr.shape}")
            else:
                raise ValueError(f"unknown constraint kind {c.kind!r}")

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def counts(self) -> dict[str, int]:
        return {
            "psd_variables": sum(v.is_matrix for v in self.variables),
            "scalar_variables": sum(not v.is_matrix for v in self.variables),
            "lmis": sum(c.kind == "psd" for c in self.constraints),
            "scalar_constraints": sum(c.kind in ("ge", "eq") for c in self.constraints),
        }

    def lmi_sizes(self) -> list[int]:
        return [c.expr.shape[0] for c in self.constraints if c.kind == "psd"]

    def dump(self, precision: int = 4) -> str:
        """Human-readable text dump of every block, for fixtures and debugging."""
        fmt = {"float_kind": lambda x: f"{x:.{precision}g}", "complex_kind": lambda z: f"{z:.{precision}g}"}
        lines = [f"ConicProgram ({self.domain})"]
        lines += [f"  var {v.name}: {v.kind}({v.dim})" for v in self.variables]
        lines.append("  minimize:")
        lines += _dump_expr(self.objective, fmt)
        for c in self.constraints:
            rel = {"ge": ">= 0", "eq": "== 0", "psd": ">> 0"}[c.kind]
            lines.append(f"  subject to [{c.label}] {c.expr.shape[0]}x{c.expr.shape[1]} {rel}:")
            lines += _dump_expr(c.expr, fmt)
        return "\n".join(lines)


def _dump_expr(expr: AffineExpr, fmt) -> list[str]:
    out = ["    const = " + np.array2string(expr.const, formatter=fmt).replace("\n", "\n            ")]
    for v, T in sorted(expr.terms.items(), key=lambda kv: kv[0].name):
        out.append(f"    coef[{v.name}] shape {T.shape} = " + np.array2string(T.reshape(T.shape[0] * T.shape[1], -1), formatter=fmt).replace("\n", "\n      "))
    return out


class TripleVars(NamedTuple):
    """Covariance variables; ``Q_p = B X B^H`` when ``p_basis`` ``B`` is set."""

    q_p: Variable
    q_s: Variable
    q_z: Variable | None
    p_basis: np.ndarray | None = None

    def variables(self) -> list[Variable]:
        return [v for v in (self.q_p, self.q_s, self.q_z) if v is not None]


def triple_vars(n_t: int, n_s: int, with_an: bool = True, p_basis: np.ndarray | None = None) -> TripleVars:
    return TripleVars(
        Variable("q_p", "hermitian_psd", n_t if p_basis is None else p_basis.shape[1]),
        Variable("q_s", "hermitian_psd", n_s),
        Variable("q_z", "hermitian_psd", n_s) if with_an else None,
        p_basis,
    )


def _sat_cov(tv: TripleVars, left: np.ndarray, right: np.ndarray) -> AffineExpr:
    """``left Q_p right``."""
    left, right = np.atleast_2d(left), np.atleast_2d(right)
    if tv.p_basis is None:
        return sandwich(tv.q_p, left, right)
    B = tv.p_basis
    return sandwich(tv.q_p, left @ B, B.conj().T @ right)


def _bs_cov(tv: TripleVars, left: np.ndarray, right: np.ndarray) -> AffineExpr:
    """``left (Q_s + Q_z) right``."""
    e = sandwich(tv.q_s, left, right)
    if tv.q_z is not None:
        e = e + sandwich(tv.q_z, left, right)
    return e


@dataclass(frozen=True)
class SearchState:
    """Slack ``beta`` together with the derived constants ``alpha`` and ``gamma``."""

    beta: float
    tau_p: float
    tau_s: float

    def __post_init__(self):
        if self.beta < 1:
            raise ValueError(f"beta must be >= 1, got {self.beta}")

    @property
    def alpha(self) -> float:
        return 1.0 - self.beta * 2.0**self.tau_p

    @property
    def gamma(self) -> float:
        return 2.0**self.tau_s - 1.0


def lemma1_lmi(tv: TripleVars, beta: float, H_e: np.ndarray, G_e: np.ndarray, sigma2_e: float) -> AffineExpr:
    """``(beta-1)(G_e^H (Q_s+Q_z) G_e + sigma_e^2 I) - H_e^H Q_p H_e`` (``n_r x n_r``).

    PSD-ness of this matrix is necessary for Eve's ``det(I + ...) <= beta``
    and sufficient when ``Q_p`` has rank one.
    """
    if beta < 1:
        raise ValueError(f"beta must be >= 1, got {beta}")
    H_e, G_e = np.atleast_2d(H_e), np.atleast_2d(G_e)
    if _sat_dim(tv) != H_e.shape[0] or tv.q_s.dim != G_e.shape[0] or H_e.shape[1] != G_e.shape[1]:
        raise ValueError("channel dimensions do not match the covariance variables")
    n_r = H_e.shape[1]
    jam = _bs_cov(tv, G_e.conj().T, G_e)
    return (beta - 1.0) * (jam + constant(sigma2_e * np.eye(n_r))) - _sat_cov(tv, H_e.conj().T, H_e)


def pu_constraint(tv: TripleVars, alpha: float, h_p: np.ndarray, g_p: np.ndarray, sigma2_p: float) -> AffineExpr:
    """``alpha g_p^H (Q_s+Q_z) g_p + h_p^H Q_p h_p + alpha sigma_p^2`` (1x1)."""
    g = g_p.reshape(-1, 1)
    h = h_p.reshape(-1, 1)
    return alpha * _bs_cov(tv, g.conj().T, g) + _sat_cov(tv, h.conj().T, h) + constant(alpha * sigma2_p)


def su_constraint(tv: TripleVars, gamma: float, g_s: np.ndarray, h_s: np.ndarray, sigma2_s: float) -> AffineExpr:
    """``g_s^H (Q_s - gamma Q_z) g_s - gamma (h_s^H Q_p h_s + sigma_s^2)`` (1x1)."""
    g = g_s.reshape(-1, 1)
    h = h_s.reshape(-1, 1)
    e = sandwich(tv.q_s, g.conj().T, g) - gamma * _sat_cov(tv, h.conj().T, h) - constant(gamma * sigma2_s)
    if tv.q_z is not None:
        e = e - gamma * sandwich(tv.q_z, g.conj().T, g)
    return e


def _sat_dim(tv: TripleVars) -> int:
    return tv.q_p.dim if tv.p_basis is None else tv.p_basis.shape[0]


def _sat_power(tv: TripleVars) -> AffineExpr:
    """``Tr(Q_p)``."""
    if tv.p_basis is None:
        return trace_with(tv.q_p, np.eye(tv.q_p.dim))
    return trace_with(tv.q_p, tv.p_basis.conj().T @ tv.p_basis)


def budget_constraint(tv: TripleVars, p_th: float) -> AffineExpr:
    e = constant(p_th) - _sat_power(tv) - trace_with(tv.q_s, np.eye(tv.q_s.dim))
    if tv.q_z is not None:
        e = e - trace_with(tv.q_z, np.eye(tv.q_z.dim))
    return e


def signal_power_objective(tv: TripleVars) -> AffineExpr:
    return _sat_power(tv) + trace_with(tv.q_s, np.eye(tv.q_s.dim))


def gamma_p_lmi(
    tv: TripleVars,
    beta_bar: float,
    mu_p: Variable,
    nominal_g_p: np.ndarray,
    eps_p: float,
    h_p: np.ndarray,
    sigma2_p: float,
    tau_p: float,
) -> AffineExpr:
    """S-procedure LMI of size ``n_s + 1`` for the worst-case PU constraint.

    ``[[mu I + a S, a S g], [g^H a S, a g^H S g + h^H Q_p h + a sigma^2 - mu eps^2]]``
    with ``S = Q_s + Q_z`` and ``a = 1 - beta_bar 2^tau_p``.
    """
    if beta_bar < 1:
        raise ValueError(f"beta_bar must be >= 1, got {beta_bar}")
    if eps_p < 0:
        raise ValueError(f"eps_p must be >= 0, got {eps_p}")
    g = np.asarray(nominal_g_p, dtype=complex).reshape(-1, 1)
    n_s = g.shape[0]
    if tv.q_s.dim != n_s or _sat_dim(tv) != np.asarray(h_p).size:
        raise ValueError("channel dimensions do not match the covariance variables")
    a = 1.0 - beta_bar * 2.0**tau_p
    eye = np.eye(n_s)
    top_left = scaled(mu_p, eye) + a * _bs_cov(tv, eye, eye)
    top_right = a * _bs_cov(tv, eye, g)
    bottom_left = a * _bs_cov(tv, g.conj().T, eye)
    bottom_right = pu_constraint(tv, a, np.asarray(h_p).reshape(-1), g.reshape(-1), sigma2_p) + scaled(mu_p, -(eps_p**2))
    return block([[top_left, top_right], [bottom_left, bottom_right]])


def gamma_e_lmi(
    tv: TripleVars,
    beta_bar: float,
    mu_e: Variable,
    nominal_G_e: np.ndarray,
    eps_e: float,
    H_e: np.ndarray,
    sigma2_e: float = 1.0,
    normalized: bool = False,
) -> AffineExpr:
    """Worst-case Eve LMI of size ``n_r + n_s`` from the matrix S-procedure.

    ``[[(b-1) sigma_e^2 I - mu I + G^H (b-1) S G - H^H Q_p H, G^H (b-1) S],
      [(b-1) S G, (b-1) S + (mu / eps^2) I]]`` with ``b = beta_bar``.

    With ``normalized`` the variable holds ``t = mu / eps^2`` instead of
    ``mu``, which keeps the coefficients bounded for tiny ``eps``.
    """
    if beta_bar < 1:
        raise ValueError(f"beta_bar must be >= 1, got {beta_bar}")
    if not eps_e > 0:
        raise ValueError("eps_e must be > 0; use lemma1_lmi at the nominal channel for eps_e = 0")
    G = np.atleast_2d(np.asarray(nominal_G_e, dtype=complex))
    H = np.atleast_2d(np.asarray(H_e, dtype=complex))
    n_s, n_r = G.shape
    if tv.q_s.dim != n_s or _sat_dim(tv) != H.shape[0] or H.shape[1] != n_r:
        raise ValueError("channel dimensions do not match the covariance variables")
    b1 = beta_bar - 1.0
    c_top, c_bottom = (eps_e**2, 1.0) if normalized else (1.0, 1.0 / eps_e**2)
    top_left = lemma1_lmi(tv, beta_bar, H, G, sigma2_e) + scaled(mu_e, _GAMMA_E_MU_SIGN * c_top * np.eye(n_r))
    top_right = b1 * _bs_cov(tv, G.conj().T, np.eye(n_s))
    bottom_left = b1 * _bs_cov(tv, np.eye(n_s), G)
    bottom_right = b1 * _bs_cov(tv, np.eye(n_s), np.eye(n_s)) + scaled(mu_e, c_bottom * np.eye(n_s))
    return block([[top_left, top_right], [bottom_left, bottom_right]])


def beta_upper(h_p: np.ndarray, p_th: float) -> float:
    return 1.0 + p_th * float(np.vdot(h_p, h_p).real)


def _check_beta(beta: float, channels: ChannelSet, config: ScenarioConfig) -> None:
    hi = beta_upper(channels.h_p, config.p_th)
    if not 1.0 <= beta <= hi * (1 + 1e-12):
        raise ValueError(f"beta={beta} outside search interval [1, {hi}]")


def eve_null_basis(H_e: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the satellite beams Eve cannot hear (``B^H H_e = 0``).

    Has zero columns when ``H_e`` has full row rank.
    """
    U, s, _ = np.linalg.svd(np.atleast_2d(H_e), full_matrices=True)
    rank = int(np.sum(s > rtol * max(s.max(initial=0.0), 1e-300)))
    return U[:, rank:]


def _at_unit_beta(beta: float) -> bool:
    return beta <= 1.0 + 1e-12


def _unit_beta_vars(channels: ChannelSet, with_an: bool) -> TripleVars:
    """At ``beta = 1`` Eve must receive nothing, so ``Q_p`` lives in null(H_e^H).

    The Eve LMI then vanishes identically; dropping it and parametrising
    ``Q_p`` on the null space avoids a constraint with empty interior.
    """
    B = eve_null_basis(channels.H_e)
    if B.shape[1] == 0:
        B = np.zeros((channels.n_t, 1), dtype=complex)
    return triple_vars(channels.n_t, channels.n_s, with_an, p_basis=B)


def build_perfect_program(
    channels: ChannelSet, config: ScenarioConfig, beta: float, with_an: bool = True
) -> ConicProgram:
    """Perfect-CSI SDP at fixed ``beta``.

    Variables ``q_p``, ``q_s``, ``q_z`` (``q_z`` dropped when ``with_an`` is
    False); objective ``Tr(Q_p) + Tr(Q_s)``.
    """
    _check_beta(beta, channels, config)
    state = SearchState(beta, config.tau_p, config.tau_s)
    unit = _at_unit_beta(beta)
    tv = _unit_beta_vars(channels, with_an) if unit else triple_vars(channels.n_t, channels.n_s, with_an)
    constraints = [Constraint("ge", pu_constraint(tv, state.alpha, channels.h_p, channels.g_p, config.sigma2_p), "pu_rate")]
    if not unit:
        constraints.append(Constraint("psd", lemma1_lmi(tv, beta, channels.H_e, channels.G_e, config.sigma2_e), "eve_lmi"))
    constraints += [
        Constraint("ge", su_constraint(tv, state.gamma, channels.g_s, channels.h_s, config.sigma2_s), "su_rate"),
        Constraint("ge", budget_constraint(tv, config.p_th), "power_budget"),
    ]
    return ConicProgram(
        variables=tv.variables(),
        objective=signal_power_objective(tv),
        constraints=constraints,
        meta={"kind": "perfect", "beta": beta, "with_an": with_an, "q_p_basis": tv.p_basis},
    )


def build_robust_program(
    channels: ChannelSet,
    robust: RobustSpec,
    config: ScenarioConfig,
    beta_bar: float,
    with_an: bool = True,
) -> ConicProgram:
    """Worst-case SDP at fixed ``beta_bar`` for norm-bounded errors on ``g_p`` and ``G_e``.

    A zero error bound falls back to the corresponding perfect-CSI
    constraint at the nominal channel (the S-procedure multiplier would be
    unbounded there).
    """
    _check_beta(beta_bar, channels, config)
    state = SearchState(beta_bar, config.tau_p, config.tau_s)
    unit = _at_unit_beta(beta_bar)
    tv = _unit_beta_vars(channels, with_an) if unit else triple_vars(channels.n_t, channels.n_s, with_an)
    variables = tv.variables()
    constraints = []
    if robust.eps_p > 0:
        mu_p = Variable("mu_p", "nonneg")
        variables.append(mu_p)
        constraints.append(Constraint("psd", gamma_p_lmi(
            tv, beta_bar, mu_p, robust.nominal_g_p, robust.eps_p, channels.h_p, config.sigma2_p, config.tau_p), "gamma_p"))
    else:
        constraints.append(Constraint("ge", pu_constraint(tv, state.alpha, channels.h_p, robust.nominal_g_p, config.sigma2_p), "pu_rate"))
    if unit:
        pass  # Q_p already restricted to null(H_e^H); Eve hears nothing whatever G_e is
    elif robust.eps_e > 0:
        # t_e = mu_e / eps_e^2 keeps the LMI well scaled as eps_e -> 0
        t_e = Variable("t_e", "nonneg")
        variables.append(t_e)
        constraints.append(Constraint("psd", gamma_e_lmi(
            tv, beta_bar, t_e, robust.nominal_G_e, robust.eps_e, channels.H_e, config.sigma2_e,
            normalized=True), "gamma_e"))
    else:
        constraints.append(Constraint("psd", lemma1_lmi(tv, beta_bar, channels.H_e, robust.nominal_G_e, config.sigma2_e), "eve_lmi"))
    constraints += [
        Constraint("ge", su_constraint(tv, state.gamma, channels.g_s, channels.h_s, config.sigma2_s), "su_rate"),
        Constraint("ge", budget_constraint(tv, config.p_th), "power_budget"),
    ]
    return ConicProgram(
        variables=variables,
        objective=signal_power_objective(tv),
        constraints=constraints,
        meta={"kind": "robust", "beta": beta_bar, "with_an": with_an, "eps_p": robust.eps_p,
              "eps_e": robust.eps_e, "q_p_basis": tv.p_basis},
    )


def min_noise_program(program: ConicProgram, signal_cap: float) -> ConicProgram:
    """Same constraints, minimising ``Tr(Q_z)`` with signal power capped at ``signal_cap``.

    The signal-power objective ignores ``Q_z``, so optimal artificial noise
    is not unique; this picks the least-noise point among (near-)optimal
    solutions.
    """
    q_z = program.variable("q_z")
    cap = Constraint("ge", constant(signal_cap) - program.objective, "signal_cap")
    return ConicProgram(
        variables=list(program.variables),
        objective=trace_with(q_z, np.eye(q_z.dim)),
        constraints=[*program.constraints, cap],
        domain=program.domain,
        meta={**program.meta, "signal_cap": signal_cap},
    )


# ---------------------------------------------------------------------------
# complex -> real embedding


def embed(H: np.ndarray) -> np.ndarray:
    """``H -> [[Re H, -Im H], [Im H, Re H]]``."""
    H = np.asarray(H)
    return np.block([[H.real, -H.imag], [H.imag, H.real]])


def unembed(Y: np.ndarray) -> np.ndarray:
    """Inverse of :func:`embed`, averaging the redundant blocks."""
    n = Y.shape[0] // 2
    re = 0.5 * (Y[:n, :n] + Y[n:, n:])
    im = 0.5 * (Y[n:, :n] - Y[:n, n:])
    return re + 1j * im


def _unembed_tensor(n: int) -> np.ndarray:
    """Tensor ``P`` with ``unembed(Y)[i, j] = sum_pq P[i, j, p, q] Y[p, q]``."""
    P = np.zeros((n, n, 2 * n, 2 * n), dtype=complex)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    P[i, j, i, j] += 0.5
    P[i, j, n + i, n + j] += 0.5
    P[i, j, n + i, j] += 0.5j
    P[i, j, i, n + j] -= 0.5j
    return P


def _embed_tensor(T: np.ndarray) -> np.ndarray:
    """Apply :func:`embed` to the leading two axes of ``T``."""
    re, im = T.real, T.imag
    top = np.concatenate([re, -im], axis=1)
    bottom = np.concatenate([im, re], axis=1)
    return np.concatenate([top, bottom], axis=0)


def realify(program: ConicProgram) -> ConicProgram:
    """Equivalent real program.

    Each Hermitian ``n x n`` variable ``X`` becomes a symmetric ``2n x 2n``
    variable ``Y`` with ``X = unembed(Y)``; matrix constraints are embedded,
    scalar constraints keep their real part.  Because ``unembed`` maps PSD
    matrices to PSD matrices, optima coincide, and the objective
    (``Tr(X) = Tr(Y)/2``) is reported in complex-domain units.
    """
    if program.domain == "real":
        return program
    mapping = {}
    variables = []
    for v in program.variables:
        rv = Variable(v.name, "symmetric_psd", 2 * v.dim) if v.kind == "hermitian_psd" else v
        mapping[v] = rv
        variables.append(rv)
    P = {v.dim: _unembed_tensor(v.dim) for v in program.variables if v.kind == "hermitian_psd"}

    def convert(expr: AffineExpr, matrix: bool) -> AffineExpr:
        terms = {}
        for v, T in expr.terms.items():
            if v.kind == "hermitian_psd":
                T = np.tensordot(T, P[v.dim], axes=([2, 3], [0, 1]))
            terms[mapping[v]] = _embed_tensor(T) if matrix else T.real
        const = embed(expr.const) if matrix else expr.const.real
        return AffineExpr(const, terms)

    constraints = [Constraint(c.kind, convert(c.expr, c.kind == "psd"), c.label) for c in program.constraints]
    return ConicProgram(variables, convert(program.objective, False), constraints, domain="real", meta=dict(program.meta))


def complex_values(program: ConicProgram, real_values: dict) -> dict:
    """Map a solution of ``realify(program)`` back to the complex variables."""
    out = {}
    for v in program.variables:
        x = real_values[v.name]
        out[v.name] = unembed(x) if v.kind == "hermitian_psd" else x
    return out


# ---------------------------------------------------------------------------
# solver


@dataclass
class SolveOutcome:
    status: str
    values: dict = field(default_factory=dict)
    objective: float = float("nan")
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    iterations: int = 0
    solve_time: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _triu(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Upper-triangle indices in Clarabel's column-major svec order."""
    rows, cols = [], []
    for j in range(n):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    return np.array(rows), np.array(cols)


class _Layout:
    def __init__(self, variables: list[Variable]):
        self.offsets = {}
        k = 0
        for v in variables:
            self.offsets[v] = k
            k += v.dim * (v.dim + 1) // 2 if v.is_matrix else 1
        self.size = k

    def coefficients(self, expr: AffineExpr, entries: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
        """Rows: selected output entries of ``expr``; columns: solver variables."""
        r, c = entries
        A = np.zeros((r.size, self.size))
        for v, T in expr.terms.items():
            k = self.offsets[v]
            if v.is_matrix:
                ti, tj = _triu(v.dim)
                sym = T[r, c][:, ti, tj] + T[r, c][:, tj, ti]
                sym[:, ti == tj] *= 0.5
                A[:, k:k + ti.size] = np.real(sym)
            else:
                A[:, k] = np.real(T[r, c])
        return A

    def unpack(self, x: np.ndarray, variables: list[Variable]) -> dict:
        out = {}
        for v in variables:
            k = self.offsets[v]
            if v.is_matrix:
                ti, tj = _triu(v.dim)
                Y = np.zeros((v.dim, v.dim))
                Y[ti, tj] = x[k:k + ti.size]
                Y[tj, ti] = x[k:k + ti.size]
                out[v.name] = Y
            else:
                out[v.name] = float(x[k])
        return out


def _svec_weights(n: int) -> np.ndarray:
    ti, tj = _triu(n)
    return np.where(ti == tj, 1.0, np.sqrt(2.0))


def primal_violation(program: ConicProgram, values: dict) -> float:
    """Largest constraint violation of ``values`` (0 when feasible)."""
    worst = 0.0
    for v in program.variables:
        x = values[v.name]
        if v.is_matrix:
            worst = max(worst, -float(np.linalg.eigvalsh(0.5 * (x + np.conj(x).T))[0]))
        elif v.kind == "nonneg":
            worst = max(worst, -float(x))
    for c in program.constraints:
        val = c.expr.value(values)
        if c.kind == "psd":
            worst = max(worst, -float(np.linalg.eigvalsh(0.5 * (val + val.conj().T))[0]))
        elif c.kind == "ge":
            worst = max(worst, -float(val[0, 0].real))
        else:
            worst = max(worst, abs(float(val[0, 0].real)))
    return worst


def _settings(tol: float, max_iter: int, equilibrate: bool):
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.max_threads = 1
    settings.chordal_decomposition_enable = False
    settings.equilibrate_enable = equilibrate
    return settings


def _accepted(sol) -> bool:
    status = str(sol.status)
    return status == "Solved" or (status == "AlmostSolved" and max(sol.r_prim, sol.r_dual) <= ACCEPT_TOL)


def solve(program: ConicProgram, tol: float = SOLVER_TOL, max_iter: int = MAX_ITER) -> SolveOutcome:
    """Solve with the Clarabel interior-point method.

    Returns status ``optimal``, ``infeasible`` (primal infeasibility
    certificate) or ``numerical_failure`` (anything else, including the
    iteration cap).
    """
    real = realify(program)
    layout = _Layout(real.variables)
    zero_rows, zero_b, nonneg_rows, nonneg_b, psd_rows, psd_b, psd_dims = [], [], [], [], [], [], []
    for c in real.constraints:
        if c.kind == "psd":
            n = c.expr.shape[0]
            entries = _triu(n)
            w = _svec_weights(n)
            psd_rows.append(-w[:, None] * layout.coefficients(c.expr, entries))
            psd_b.append(w * c.expr.const[entries].real)
            psd_dims.append(n)
        else:
            rows = layout.coefficients(c.expr, (np.array([0]), np.array([0])))
            (zero_rows if c.kind == "eq" else nonneg_rows).append(-rows)
            (zero_b if c.kind == "eq" else nonneg_b).append(np.array([c.expr.const[0, 0].real]))
    for v in real.variables:
        k = layout.offsets[v]
        if v.is_matrix:
            n = v.dim
            m = n * (n + 1) // 2
            rows = np.zeros((m, layout.size))
            rows[np.arange(m), k + np.arange(m)] = -_svec_weights(n)
            psd_rows.append(rows)
            psd_b.append(np.zeros(m))
            psd_dims.append(n)
        elif v.kind == "nonneg":
            row = np.zeros((1, layout.size))
            row[0, k] = -1.0
            nonneg_rows.append(row)
            nonneg_b.append(np.zeros(1))
    blocks = zero_rows + nonneg_rows + psd_rows
    A = sp.csc_matrix(np.vstack(blocks))
    b = np.concatenate(zero_b + nonneg_b + psd_b)
    cones = []
    if zero_rows:
        cones.append(clarabel.ZeroConeT(len(zero_rows)))
    if nonneg_rows:
        cones.append(clarabel.NonnegativeConeT(len(nonneg_rows)))
    cones += [clarabel.PSDTriangleConeT(n) for n in psd_dims]
    q = layout.coefficients(real.objective, (np.array([0]), np.array([0])))[0]
    obj_const = float(real.objective.const[0, 0].real)

    P = sp.csc_matrix((layout.size, layout.size))
    # Default equilibration occasionally stalls on the robust LMIs with a
    # ~1e-6 dual residual; a second pass without it resolves those cases.
    t0 = time.perf_counter()
    for equilibrate in (True, False):
        sol = clarabel.DefaultSolver(P, q, A, b, cones, _settings(tol, max_iter, equilibrate)).solve()
        if _accepted(sol) or str(sol.status) in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            break
    elapsed = time.perf_counter() - t0
    status = str(sol.status)
    if _accepted(sol):
        values = complex_values(program, layout.unpack(np.asarray(sol.x), real.variables))
        violation = primal_violation(program, values)
        return SolveOutcome(
            status="optimal",
            values=expand_values(program, values),
            objective=float(sol.obj_val) + obj_const,
            primal_residual=max(float(sol.r_prim), violation),
            dual_residual=float(sol.r_dual),
            iterations=int(sol.iterations),
            solve_time=elapsed,
        )
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return SolveOutcome(status="infeasible", iterations=int(sol.iterations), solve_time=elapsed)
    return SolveOutcome(status="numerical_failure", iterations=int(sol.iterations), solve_time=elapsed)


def expand_values(program: ConicProgram, values: dict) -> dict:
    """Undo the null-space parametrisation of ``q_p`` used at ``beta = 1``."""
    B = program.meta.get("q_p_basis")
    if B is None or "q_p" not in values:
        return values
    out = dict(values)
    out["q_p"] = B @ values["q_p"] @ B.conj().T
    return out
