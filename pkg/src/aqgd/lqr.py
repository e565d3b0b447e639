"""Discrete-time LQR: exact cost/gradient via Lyapunov solves, policy
smoothness/domination constants, trajectory simulation, the perturbed
single-trajectory gradient estimator, and its high-probability error
schedule.  A vector adapter exposes policies to the generic optimizer.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import Unstabilizing
from .linalg import solve_dare, solve_discrete_lyapunov, spectral_radius
from .optimize import GradOracle

STATE_BLOWUP = 1e12


def _check_spd(M: np.ndarray, name: str, strict: bool = True) -> None:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.allclose(M, M.T, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    lam = float(np.linalg.eigvalsh(M)[0])
    if strict and lam <= 0:
        raise ValueError(f"{name} must be positive definite (lambda_min = {lam:.3g})")
    if not strict and lam < -1e-12:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class LtiSystem:
    """x_{k+1} = A x_k + B u_k + w_k with stage cost x'Qx + u'Ru and
    process noise w_k ~ N(0, Sigma_w).  Sigma_w may be zero (noise-free
    simulation mode); Q and R must be strictly positive definite."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Sigma_w: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        W = np.atleast_2d(np.asarray(self.Sigma_w, dtype=float))
        n, m = B.shape
        if A.shape != (n, n) or Q.shape != (n, n) or W.shape != (n, n):
            raise ValueError("A, Q, Sigma_w must be n x n matching B's rows")
        if R.shape != (m, m):
            raise ValueError("R must be m x m matching B's columns")
        _check_spd(Q, "Q")
        _check_spd(R, "R")
        _check_spd(W, "Sigma_w", strict=False)
        for name, val in (("A", A), ("B", B), ("Q", Q), ("R", R), ("Sigma_w", W)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"{self.n} {self.m}\n")
            for M in (self.A, self.B, self.Q, self.R, self.Sigma_w):
                fh.write("\n")
                for row in M:
                    fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")

    @classmethod
    def load(cls, path) -> "LtiSystem":
        with open(path) as fh:
            text = fh.read()
        blocks = [blk for blk in text.split("\n\n") if blk.strip()]
        header = blocks[0].splitlines()[0].split()
        n, m = int(header[0]), int(header[1])
        rest = "\n".join(blocks[0].splitlines()[1:])
        mats = ([rest] if rest.strip() else []) + blocks[1:]
        if len(mats) != 5:
            raise ValueError(f"expected 5 matrix blocks, found {len(mats)}")
        parsed = []
        for blk, (r, c) in zip(mats, [(n, n), (n, m), (n, n), (m, m), (n, n)]):
            rows = [[float(tok) for tok in line.split()] for line in blk.splitlines()
                    if line.strip()]
            M = np.array(rows, dtype=float)
            if M.shape != (r, c):
                raise ValueError(f"matrix block has shape {M.shape}, expected {(r, c)}")
            parsed.append(M)
        return cls(*parsed)


def _closed_loop_solves(sys: LtiSystem, K: np.ndarray):
    """P_K and Sigma_K for a stabilizing K, raising Unstabilizing otherwise."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    M = sys.A + sys.B @ K
    rho = spectral_radius(M)
    if rho >= 1.0:
        raise Unstabilizing(f"closed loop has spectral radius {rho:.6g} >= 1")
    P = solve_discrete_lyapunov(M, sys.Q + K.T @ sys.R @ K).P
    Sig = solve_discrete_lyapunov(M, sys.Sigma_w, transpose=True).P
    return K, P, Sig


def lqr_cost(sys: LtiSystem, K) -> float:
    """Steady-state cost trace(P_K Sigma_w), cross-checked against the
    dual closed form trace((Q + K'RK) Sigma_K)."""
    K, P, Sig = _closed_loop_solves(sys, K)
    J = float(np.trace(P @ sys.Sigma_w))
    J_dual = float(np.trace((sys.Q + K.T @ sys.R @ K) @ Sig))
    scale = max(abs(J), abs(J_dual), 1e-30)
    if abs(J - J_dual) > 1e-8 * scale:
        raise ArithmeticError(
            f"cost duality violated: {J:.12g} vs {J_dual:.12g}"
        )
    return J


def lqr_grad(sys: LtiSystem, K) -> np.ndarray:
    """Exact policy gradient 2((R + B'P_K B)K + B'P_K A) Sigma_K."""
    K, P, Sig = _closed_loop_solves(sys, K)
    return 2.0 * ((sys.R + sys.B.T @ P @ sys.B) @ K + sys.B.T @ P @ sys.A) @ Sig


def dare_optimum(sys: LtiSystem, tol: float = 1e-12):
    """(Pstar, Kstar, Jstar) for the infinite-horizon problem."""
    return solve_dare(sys.A, sys.B, sys.Q, sys.R, Sigma_w=sys.Sigma_w, tol=tol)


@dataclass(frozen=True)
class LqrConstants:
    """Landscape constants of the cost over the sublevel set
    {K : J(K) <= Jbar}: decay envelope (zeta, eta), gradient bound G,
    local smoothness L, smoothness radius D, local Lipschitz bound Gbar,
    and gradient-domination constant mu."""

    beta0: float
    beta1: float
    sigma_w_sq: float
    psi: float
    Jbar: float
    n: int
    zeta: float = field(init=False)
    eta: float = field(init=False)
    G: float = field(init=False)
    L: float = field(init=False)
    D: float = field(init=False)
    Gbar: float = field(init=False)
    mu: float = field(init=False)

    def __post_init__(self):
        b0, s2, psi, J = self.beta0, self.sigma_w_sq, self.psi, self.Jbar
        zeta = math.sqrt(J / (b0 * s2))
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "eta", 1.0 - 1.0 / (2.0 * zeta * zeta))
        object.__setattr__(self, "G",
                           (2.0 * J / (b0 * s2)) * math.sqrt((s2 + psi * psi * J) * J))
        object.__setattr__(self, "L",
                           112.0 * math.sqrt(self.n) * J * psi * psi * zeta**8 / b0)
        object.__setattr__(self, "D", 1.0 / (psi * zeta**3))
        object.__setattr__(self, "Gbar", 4.0 * psi * J * zeta**7 / b0)
        object.__setattr__(self, "mu", 2.0 * J / zeta**4)


def lqr_constants(beta0: float, beta1: float, sigma_w_sq: float, psi: float,
                  Jbar: float, n: int) -> LqrConstants:
    for name, v in (("beta0", beta0), ("beta1", beta1), ("sigma_w_sq", sigma_w_sq),
                    ("psi", psi), ("Jbar", Jbar)):
        if v <= 0:
            raise ValueError(f"{name} must be positive")
    if beta1 > 1.0:
        warnings.warn(
            f"beta1 = {beta1:.3g} > 1; the landscape constants assume a "
            "cost normalization with beta1 <= 1", stacklevel=2,
        )
    return LqrConstants(beta0, beta1, sigma_w_sq, psi, Jbar, n)


def constants_for(sys: LtiSystem, Jbar: float | None = None,
                  K0=None) -> LqrConstants:
    """Read (beta0, beta1, sigma_w^2, psi) off the system matrices and
    default Jbar to 4 J(K0) with K0 = 0."""
    if Jbar is None:
        K0 = np.zeros((sys.m, sys.n)) if K0 is None else np.asarray(K0, dtype=float)
        Jbar = 4.0 * lqr_cost(sys, K0)
    beta0 = float(min(np.linalg.eigvalsh(sys.Q)[0], np.linalg.eigvalsh(sys.R)[0]))
    beta1 = float(np.linalg.eigvalsh(sys.R)[-1])
    sigma_w_sq = float(np.linalg.eigvalsh(sys.Sigma_w)[0])
    psi = float(max(np.linalg.norm(sys.A, 2), np.linalg.norm(sys.B, 2), 1.0))
    return lqr_constants(beta0, beta1, sigma_w_sq, psi, Jbar, sys.n)


@dataclass(frozen=True)
class PolicyVecAdapter:
    """Column-major bijection between m x n gain matrices and mn-vectors;
    Frobenius norm maps to Euclidean norm exactly."""

    m: int
    n: int

    @property
    def dim(self) -> int:
        return self.m * self.n

    def to_vec(self, K) -> np.ndarray:
        K = np.asarray(K, dtype=float)
        if K.shape != (self.m, self.n):
            raise ValueError(f"expected {(self.m, self.n)} gain, got {K.shape}")
        return K.reshape(-1, order="F").copy()

    def to_mat(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"expected length-{self.dim} vector, got {v.shape}")
        return v.reshape((self.m, self.n), order="F").copy()


@dataclass(frozen=True)
class EstimatorConfig:
    """Perturbed-trajectory gradient estimator settings: ell trajectories
    of length N, perturbation radius r, base seed for the per-trajectory
    RNG streams."""

    ell: int
    N: int
    r: float
    seed: int = 0

    def __post_init__(self):
        if self.ell < 1 or self.N < 1:
            raise ValueError("ell and N must be positive")
        if self.r <= 0:
            raise ValueError("perturbation radius r must be positive")


def _noise_chol(sys: LtiSystem) -> np.ndarray | None:
    if not np.any(sys.Sigma_w):
        return None
    # tiny jitter-free PSD factorization via eigendecomposition
    lam, V = np.linalg.eigh(sys.Sigma_w)
    lam = np.clip(lam, 0.0, None)
    return V * np.sqrt(lam)


def rollout(sys: LtiSystem, K_play, N: int, rng: np.random.Generator):
    """Simulate N steps from x0 = 0 under u_k = K_play x_k.

    Returns (states, inputs, cost_sum) with states of shape (N+1, n),
    inputs of shape (N, m), and cost_sum the total stage cost over
    k = 0..N-1.  Aborts if the state norm exceeds 1e12.
    """
    K_play = np.atleast_2d(np.asarray(K_play, dtype=float))
    n, m = sys.n, sys.m
    C = _noise_chol(sys)
    states = np.zeros((N + 1, n))
    inputs = np.zeros((N, m))
    x = np.zeros(n)
    cost = 0.0
    for k in range(N):
        u = K_play @ x
        inputs[k] = u
        cost += float(x @ sys.Q @ x + u @ sys.R @ u)
        w = C @ rng.standard_normal(n) if C is not None else 0.0
        x = sys.A @ x + sys.B @ u + w
        if np.linalg.norm(x) > STATE_BLOWUP:
            raise Unstabilizing(
                f"state norm exceeded {STATE_BLOWUP:.0e} at step {k + 1}"
            )
        states[k + 1] = x
    return states, inputs, cost


def estimate_gradient(sys: LtiSystem, K, cfg: EstimatorConfig, t: int = 0) -> np.ndarray:
    """Single-trajectory perturbed gradient estimate.

    Each of the ell trajectories draws its own RNG stream keyed by
    (cfg.seed, t, i), samples a unit-Frobenius-norm perturbation U_i,
    plays u = (K + r U_i) x for N steps, and contributes
    (mn / (r N)) * cost_sum_i * U_i; the output is the mean.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n, m = sys.n, sys.m
    ell, N, r = cfg.ell, cfg.N, cfg.r
    C = _noise_chol(sys)

    U = np.empty((ell, m, n))
    W = np.zeros((ell, N, n)) if C is not None else None
    for i in range(ell):
        g = np.random.default_rng(np.random.SeedSequence([cfg.seed, t, i]))
        Ui = g.standard_normal((m, n))
        U[i] = Ui / np.linalg.norm(Ui)
        if C is not None:
            W[i] = g.standard_normal((N, n)) @ C.T

    Kp = K[None, :, :] + r * U                      # (ell, m, n)
    M = sys.A[None, :, :] + np.einsum("ij,tjk->tik", sys.B, Kp)
    Qeff = sys.Q[None, :, :] + np.einsum("tji,jk,tkl->til", Kp, sys.R, Kp)

    x = np.zeros((ell, n))
    costs = np.zeros(ell)
    for k in range(N):
        costs += np.einsum("ti,tij,tj->t", x, Qeff, x)
        x = np.einsum("tij,tj->ti", M, x)
        if W is not None:
            x = x + W[:, k, :]
        if np.max(np.einsum("ti,ti->t", x, x)) > STATE_BLOWUP**2:
            raise Unstabilizing(
                f"state norm exceeded {STATE_BLOWUP:.0e} during estimation"
            )
    scale = m * n / (r * N * ell)
    return scale * np.einsum("t,tij->ij", costs, U)


def epsilon_schedule(consts: LqrConstants, m: int, n: int, r: float, ell: int,
                     N: int, T: int, delta: float, tr_Sigma_w: float) -> float:
    """High-probability bound on the gradient-estimate error: bias term
    L r plus three concentration terms shrinking in ell and N."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if min(m, n, ell, N, T) < 1 or r <= 0:
        raise ValueError("counts must be positive and r > 0")
    z, eta = consts.zeta, consts.eta
    b1, J = consts.beta1, consts.Jbar
    mn = m * n
    term1 = consts.L * r
    term2 = (mn * J / (r * math.sqrt(ell))) * math.sqrt(8.0 * math.log(45.0 * T / delta))
    term3 = (10.0 * mn * b1 * z**4 * tr_Sigma_w / (3.0 * T * N * r * (1.0 - eta))) \
        * math.log(27.0 * T * N / delta)
    term4 = (10.0 * mn * b1 * z * z * tr_Sigma_w / (r * (1.0 - eta) ** 2)) \
        * math.log(3.0 * N * ell * T / delta) \
        * ((1.0 + z * z) / math.sqrt(ell) * math.sqrt(2.0 * math.log(45.0 * T / delta))
           + z**4 / (N * (1.0 - eta)))
    return term1 + term2 + term3 + term4


def random_stable_instance(n: int, m: int, seed: int, rho_target: float = 0.8,
                           q_scale: float = 5.0, r_scale: float = 5.0) -> LtiSystem:
    """Gaussian A rescaled to spectral radius rho_target, Gaussian B,
    Q = q_scale I, R = r_scale I, Sigma_w = I."""
    if not 0.0 < rho_target < 1.0:
        raise ValueError("rho_target must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    A *= rho_target / spectral_radius(A)
    B = rng.standard_normal((n, m))
    return LtiSystem(A, B, q_scale * np.eye(n), r_scale * np.eye(m), np.eye(n))


def estimate_local_smoothness(sys: LtiSystem, K0, radius: float,
                              samples: int = 40, seed: int = 0,
                              safety: float = 1.5) -> float:
    """Empirical Lipschitz constant of the gradient near K0: the max
    gradient-difference ratio over random perturbation pairs within the
    given radius, inflated by a safety factor."""
    K0 = np.atleast_2d(np.asarray(K0, dtype=float))
    rng = np.random.default_rng(seed)
    g0 = lqr_grad(sys, K0)
    best = 0.0
    for _ in range(samples):
        d = rng.standard_normal(K0.shape)
        d *= radius * rng.uniform(0.1, 1.0) / np.linalg.norm(d)
        try:
            g1 = lqr_grad(sys, K0 + d)
        except Unstabilizing:
            continue
        best = max(best, float(np.linalg.norm(g1 - g0) / np.linalg.norm(d)))
    if best == 0.0:
        raise ValueError("no stabilizing perturbation found; shrink the radius")
    return safety * best


def calibrate_noise(sys: LtiSystem, K0, cfg: EstimatorConfig, calls: int = 5,
                    safety: float = 1.5) -> float:
    """Empirical bound on the estimator error: max Frobenius distance
    between the estimate and the exact gradient over repeated calls,
    inflated by a safety factor."""
    K0 = np.atleast_2d(np.asarray(K0, dtype=float))
    g = lqr_grad(sys, K0)
    worst = 0.0
    for c in range(calls):
        # iteration keys >= 10^9 so calibration streams never collide
        # with the streams used by the optimization run itself
        ghat = estimate_gradient(sys, K0, cfg, t=10**9 + c)
        worst = max(worst, float(np.linalg.norm(ghat - g)))
    return safety * worst


class LqrOracle(GradOracle):
    """Vector-space view of the policy-gradient problem over vec(K).

    Exact mode serves analytic gradients; model-free mode serves
    perturbed-trajectory estimates (keyed to the iteration counter so
    streams never repeat).  Cost and exact gradient are cached per
    iterate, because the optimizer evaluates both at each point.
    """

    def __init__(self, sys: LtiSystem, mode: str = "exact",
                 cfg: EstimatorConfig | None = None,
                 consts: LqrConstants | None = None,
                 K0=None, L_override: float | None = None):
        if mode not in ("exact", "modelfree"):
            raise ValueError(f"unknown oracle mode {mode!r}")
        if mode == "modelfree" and cfg is None:
            raise ValueError("model-free mode needs an EstimatorConfig")
        self.sys = sys
        self.mode = mode
        self.cfg = cfg
        self.adapter = PolicyVecAdapter(sys.m, sys.n)
        self.d = self.adapter.dim
        self.K0 = (np.zeros((sys.m, sys.n)) if K0 is None
                   else np.atleast_2d(np.asarray(K0, dtype=float)))
        self.consts = consts if consts is not None else constants_for(sys, K0=self.K0)
        self.L = L_override if L_override is not None else self.consts.L
        self.mu = self.consts.mu
        self.G = self.consts.G
        self.D = self.consts.D
        _, _, Jstar = dare_optimum(sys)
        self.f_star = Jstar
        self._cache_key = None
        self._cache_val = None

    def x0(self) -> np.ndarray:
        return self.adapter.to_vec(self.K0)

    def _exact(self, x):
        key = x.tobytes()
        if key != self._cache_key:
            K = self.adapter.to_mat(x)
            self._cache_val = (lqr_cost(self.sys, K), lqr_grad(self.sys, K))
            self._cache_key = key
        return self._cache_val

    def eval_f(self, x) -> float:
        return self._exact(np.asarray(x, dtype=float))[0]

    def eval_grad(self, x) -> np.ndarray:
        return self.adapter.to_vec(self._exact(np.asarray(x, dtype=float))[1])

    def eval_noisy_grad(self, x, t: int) -> np.ndarray:
        if self.mode != "modelfree":
            raise NotImplementedError("exact-mode oracle has no noisy gradient")
        K = self.adapter.to_mat(np.asarray(x, dtype=float))
        return self.adapter.to_vec(estimate_gradient(self.sys, K, self.cfg, t=t))


def make_lqr_oracle(sys: LtiSystem, mode: str = "exact",
                    cfg: EstimatorConfig | None = None, **kwargs) -> LqrOracle:
    return LqrOracle(sys, mode=mode, cfg=cfg, **kwargs)
