"""Model-free off-policy learning of the discounted game value function.

Windows of recorded state, applied input, and known exploration disturbance
are turned into one linear equation each in the unknown value parameters
(quadratic matrix, affine vector, offset) and the next-iteration policies.
Iterating the least-squares solve reproduces the model-based design without
ever touching the plant matrices: the data carry them implicitly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import InsufficientExcitation, NoConvergence, SingularRegression
from .hinf_controller import GareSolution

__all__ = [
    "ProbeSpec",
    "DataTuple",
    "ValueParameters",
    "n_unknowns",
    "sym_basis",
    "sym_from_vec",
    "make_tuple",
    "collect_from_trace",
    "collect",
    "bellman_lsq",
    "bellman_residual",
    "learn_from_tuples",
    "learn",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProbeSpec:
    """Sum-of-sinusoids exploration signal with seeded random phases."""

    amplitude: float = 1.0
    n_components: int = 8
    freq_lo: float = 0.1
    freq_hi: float = 20.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_components < 1:
            raise ValueError("need at least one component")
        if not 0.0 < self.freq_lo <= self.freq_hi:
            raise ValueError("need 0 < freq_lo <= freq_hi")

    @property
    def frequencies(self) -> np.ndarray:
        if self.n_components == 1:
            return np.array([self.freq_lo])
        return np.logspace(math.log10(self.freq_lo), math.log10(self.freq_hi),
                           self.n_components)

    @property
    def phases(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.uniform(0.0, 2.0 * math.pi, self.n_components)

    def signal(self, t):
        """Evaluate the probe at time t (scalar or array)."""
        t = np.asarray(t, dtype=float)
        comps = np.sin(np.multiply.outer(t, self.frequencies) + self.phases)
        return self.amplitude * comps.sum(axis=-1)


def n_unknowns(n2: int, m: int, d: int) -> int:
    """Unknown count of one regression row.

    Symmetric quadratic block, affine vector, offset, plus the
    next-iteration control and disturbance policies (gain and constant
    each); the policies must be unknowns too, otherwise the update would
    need the input matrices.
    """
    return n2 * (n2 + 1) // 2 + n2 + 1 + m * n2 + m + d * n2 + d


def sym_basis(X: np.ndarray) -> np.ndarray:
    """Quadratic feature vector matching the symmetric parameterization.

    Entry order is row-major over the upper triangle; off-diagonal features
    carry the factor 2 so the coefficients are the matrix entries.
    """
    X = np.asarray(X, dtype=float)
    n2 = X.shape[-1]
    iu, ju = np.triu_indices(n2)
    feats = X[..., iu] * X[..., ju]
    feats = np.where(iu == ju, feats, 2.0 * feats)
    return feats


def sym_from_vec(theta: np.ndarray, n2: int) -> np.ndarray:
    """Inverse of sym_basis coefficient packing."""
    M = np.zeros((n2, n2))
    iu, ju = np.triu_indices(n2)
    M[iu, ju] = theta
    M[ju, iu] = theta
    return M


def _quad_weights(ts: np.ndarray) -> np.ndarray:
    """Composite Simpson weights on a uniform grid, trapezoid fallback.

    Simpson needs an odd sample count; window sampling is sized for that,
    but a stray even count degrades gracefully instead of failing.
    """
    S = len(ts)
    if S < 2:
        raise ValueError("window needs at least two samples")
    h = (ts[-1] - ts[0]) / (S - 1)
    if S % 2 == 1 and S >= 3:
        w = np.ones(S)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return w * (h / 3.0)
    w = np.full(S, h)
    w[0] = w[-1] = h / 2.0
    return w


@dataclass(frozen=True)
class DataTuple:
    """One collection window: raw samples plus the cached moments.

    The moments are the discounted in-window integrals every iteration of
    the learner needs; caching them makes each least-squares assembly a few
    small matrix products instead of a pass over the raw samples.
    """

    t_start: float
    t_end: float
    alpha: float
    ts: np.ndarray
    X: np.ndarray
    u: np.ndarray
    omega: np.ndarray
    X0: np.ndarray = field(init=False, repr=False)
    X1: np.ndarray = field(init=False, repr=False)
    S0: np.ndarray = field(init=False, repr=False)
    S1: np.ndarray = field(init=False, repr=False)
    edisc: float = field(init=False, repr=False)
    W0: float = field(init=False, repr=False)
    M_X: np.ndarray = field(init=False, repr=False)
    M_XX: np.ndarray = field(init=False, repr=False)
    M_u: np.ndarray = field(init=False, repr=False)
    M_uX: np.ndarray = field(init=False, repr=False)
    M_w: np.ndarray = field(init=False, repr=False)
    M_wX: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        ts = np.asarray(self.ts, dtype=float)
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        u = np.asarray(self.u, dtype=float).reshape(len(ts), -1)
        omega = np.asarray(self.omega, dtype=float).reshape(len(ts), -1)
        if X.shape[0] != len(ts):
            raise ValueError("sample count mismatch between ts and X")
        disc = np.exp(-self.alpha * (ts - ts[0]))
        qw = _quad_weights(ts) * disc
        set_ = object.__setattr__
        set_(self, "ts", ts)
        set_(self, "X", X)
        set_(self, "u", u)
        set_(self, "omega", omega)
        set_(self, "X0", X[0].copy())
        set_(self, "X1", X[-1].copy())
        set_(self, "S0", sym_basis(X[0]))
        set_(self, "S1", sym_basis(X[-1]))
        set_(self, "edisc", float(np.exp(-self.alpha * (ts[-1] - ts[0]))))
        set_(self, "W0", float(qw.sum()))
        set_(self, "M_X", qw @ X)
        set_(self, "M_XX", np.einsum("s,si,sj->ij", qw, X, X))
        set_(self, "M_u", qw @ u)
        set_(self, "M_uX", np.einsum("s,sa,si->ai", qw, u, X))
        set_(self, "M_w", qw @ omega)
        set_(self, "M_wX", np.einsum("s,sa,si->ai", qw, omega, X))

    @property
    def n2(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @property
    def d(self) -> int:
        return self.omega.shape[1]


def make_tuple(ts: np.ndarray, X: np.ndarray, u: np.ndarray, omega: np.ndarray,
               alpha: float) -> DataTuple:
    ts = np.asarray(ts, dtype=float)
    return DataTuple(t_start=float(ts[0]), t_end=float(ts[-1]), alpha=float(alpha),
                     ts=ts, X=X, u=u, omega=omega)


@dataclass(frozen=True)
class ValueParameters:
    """Iterate of the learner: value parameters plus the implied policies.

    The policies are carried because the next regression needs the current
    ones to form its off-policy correction terms; they start at zero, which
    is admissible for the discounted cost on the systems handled here.
    """

    P: np.ndarray
    Pi: np.ndarray
    Gamma: float
    K: np.ndarray
    g: np.ndarray
    W: np.ndarray
    w: np.ndarray
    k: int = 0
    fit_residual: float = float("nan")
    cond: float = float("nan")

    def __post_init__(self) -> None:
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        object.__setattr__(self, "P", 0.5 * (P + P.T))
        object.__setattr__(self, "Pi", np.asarray(self.Pi, dtype=float).ravel())
        object.__setattr__(self, "K", np.atleast_2d(np.asarray(self.K, dtype=float)))
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float).ravel())
        object.__setattr__(self, "W", np.atleast_2d(np.asarray(self.W, dtype=float)))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).ravel())

    @classmethod
    def initial(cls, n2: int, m: int, d: int) -> "ValueParameters":
        return cls(P=np.zeros((n2, n2)), Pi=np.zeros(n2), Gamma=0.0,
                   K=np.zeros((m, n2)), g=np.zeros(m), W=np.zeros((d, n2)),
                   w=np.zeros(d), k=0)

    def vecs(self) -> np.ndarray:
        """Pack the parameters in regression-unknown order."""
        iu, ju = np.triu_indices(self.P.shape[0])
        return np.concatenate([
            self.P[iu, ju], self.Pi, [self.Gamma],
            self.K.ravel(), self.g, self.W.ravel(), self.w,
        ])


def _assemble(tuples: list[DataTuple], params: "ValueParameters", Q: np.ndarray,
              R: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Regression matrix and right-hand side for one policy iteration."""
    first = tuples[0]
    n2, m, d = first.n2, first.m, first.d
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    K, g, W, w = params.K, params.g, params.W, params.w
    g2 = float(gamma) ** 2
    rows = []
    rhs = []
    for tp in tuples:
        cu = tp.M_uX - K @ tp.M_XX - np.outer(g, tp.M_X)
        cu0 = tp.M_u - K @ tp.M_X - g * tp.W0
        cw = tp.M_wX - W @ tp.M_XX - np.outer(w, tp.M_X)
        cw0 = tp.M_w - W @ tp.M_X - w * tp.W0
        row = np.concatenate([
            tp.edisc * tp.S1 - tp.S0,
            2.0 * (tp.edisc * tp.X1 - tp.X0),
            [tp.edisc - 1.0],
            (2.0 * (R @ cu)).ravel(),
            2.0 * (R @ cu0),
            (-2.0 * g2 * cw).ravel(),
            -2.0 * g2 * cw0,
        ])
        cost = float(np.sum(Q * tp.M_XX))
        cost += float(np.sum((K.T @ R @ K) * tp.M_XX))
        cost += 2.0 * float(g @ R @ K @ tp.M_X) + float(g @ R @ g) * tp.W0
        cost -= g2 * (float(np.sum((W.T @ W) * tp.M_XX))
                      + 2.0 * float(w @ W @ tp.M_X) + float(w @ w) * tp.W0)
        rows.append(row)
        rhs.append(-cost)
    return np.vstack(rows), np.asarray(rhs)


_RANK_RTOL = 1e-9
_NULL_SUPPORT_TOL = 1e-6


def regression_nullspace(G: np.ndarray,
                         rel_tol: float = _RANK_RTOL) -> tuple[int, np.ndarray]:
    """Numerical rank of the stacked rows plus an orthonormal null basis."""
    s, Vh = np.linalg.svd(G)[1:]
    cut = s[0] * rel_tol if s.size else 0.0
    rank = int(np.sum(s > cut))
    return rank, Vh[rank:]


def _offset_only(null_vecs: np.ndarray, n2: int) -> bool:
    """True when no free direction touches the linear term or the policies.

    Directions confined to the quadratic weight and the constant offset
    cannot move the recovered gains, and minimum-norm least squares resolves
    them deterministically. One such direction always appears when the
    reference trajectory conserves a quadratic form, because that form is
    then indistinguishable from a constant.
    """
    nP = n2 * (n2 + 1) // 2
    mask = np.ones(null_vecs.shape[1], dtype=bool)
    mask[:nP] = False
    mask[nP + n2] = False
    return bool(np.all(np.abs(null_vecs[:, mask]) < _NULL_SUPPORT_TOL))


def bellman_lsq(tuples: list[DataTuple], params: "ValueParameters", Q: np.ndarray,
                R: np.ndarray, alpha: float, gamma: float) -> "ValueParameters":
    """One policy-evaluation-plus-improvement step as a least-squares solve.

    Raises SingularRegression when the stacked rows do not pin down the gain
    blocks (which is what identically zero probes produce). Free directions
    that only trade the quadratic weight against the constant offset are
    tolerated and resolved to minimum norm.
    """
    if not tuples:
        raise SingularRegression("no data windows supplied")
    first = tuples[0]
    n2, m, d = first.n2, first.m, first.d
    n_theta = n_unknowns(n2, m, d)
    G, b = _assemble(tuples, params, Q, R, gamma)
    if G.shape[0] < n_theta:
        raise SingularRegression(
            f"{G.shape[0]} windows cannot determine {n_theta} unknowns")
    theta, _, rank, _ = sla.lstsq(G, b, cond=_RANK_RTOL,
                                  lapack_driver="gelsy")
    if rank < n_theta:
        _, null_vecs = regression_nullspace(G)
        if not _offset_only(null_vecs, n2):
            raise SingularRegression(
                f"regression rank {rank} below unknown count {n_theta} "
                "with unexcited gain directions")
        log.debug("iteration %d: %d offset-only free directions resolved "
                  "to minimum norm", params.k + 1, n_theta - rank)
    sv = np.linalg.svd(G, compute_uv=False)
    cond = float(sv[0] / sv[rank - 1])
    fit = float(np.linalg.norm(G @ theta - b))
    log.debug("lsq iteration %d: rank=%d cond=%.3e fit=%.3e",
              params.k + 1, rank, cond, fit)
    nP = n2 * (n2 + 1) // 2
    parts = np.split(theta, np.cumsum([nP, n2, 1, m * n2, m, d * n2]))
    return ValueParameters(
        P=sym_from_vec(parts[0], n2),
        Pi=parts[1],
        Gamma=float(parts[2][0]),
        K=parts[3].reshape(m, n2),
        g=parts[4],
        W=parts[5].reshape(d, n2),
        w=parts[6],
        k=params.k + 1,
        fit_residual=fit,
        cond=cond,
    )


def bellman_residual(tuples: list[DataTuple], params: "ValueParameters",
                     Q: np.ndarray, R: np.ndarray, alpha: float,
                     gamma: float) -> np.ndarray:
    """Per-window equation error with params as both policy and solution.

    A fixed point of the iteration (in particular the model-based design)
    makes every entry vanish up to quadrature error.
    """
    G, b = _assemble(tuples, params, Q, R, gamma)
    return G @ params.vecs() - b


def collect_from_trace(ts: np.ndarray, X: np.ndarray, u: np.ndarray,
                       omega: np.ndarray, alpha: float, sample_interval: float,
                       n_windows: int, window_start: float,
                       window_spacing: float) -> list[DataTuple]:
    """Slice a recorded trajectory into learning windows.

    The samples stay at trace resolution inside each window. No rank check
    happens here; collect() layers that on top.
    """
    ts = np.asarray(ts, dtype=float)
    X = np.asarray(X, dtype=float)
    u = np.asarray(u, dtype=float).reshape(len(ts), -1)
    omega = np.asarray(omega, dtype=float).reshape(len(ts), -1)
    dt = float(ts[1] - ts[0])
    span = int(round(sample_interval / dt))
    if span < 2:
        raise ValueError("sample_interval must cover at least two trace steps")
    tuples = []
    for j in range(n_windows):
        start = window_start + j * window_spacing
        i0 = int(round(start / dt))
        i1 = i0 + span
        if i1 >= len(ts):
            raise ValueError(
                f"window {j} ends at t={start + sample_interval:.3f}, "
                "beyond the recorded trace")
        sl = slice(i0, i1 + 1)
        tuples.append(make_tuple(ts[sl], X[sl], u[sl], omega[sl], alpha))
    return tuples


def collect(scenario, n_windows: int | None = None,
            sample_interval: float | None = None) -> list[DataTuple]:
    """Run the scenario's collection phase and window the learner's data.

    The regression must already pin down every gain block with the zero
    initial policies, otherwise no amount of iterating will help; that
    check runs here so bad probe settings fail before any learning. Free
    directions confined to the quadratic weight and the constant offset
    are reported but allowed, since minimum-norm resolution leaves the
    recovered gains untouched.
    """
    from . import engine

    rl = scenario.rl
    if rl is None:
        raise ValueError("scenario has no learning section")
    T_s = rl.sample_interval if sample_interval is None else float(sample_interval)
    nw = rl.n_windows if n_windows is None else int(n_windows)
    trace = engine.run_collection(scenario)
    agent = rl.agent
    tuples = collect_from_trace(
        trace.ts, trace.X[:, agent - 1], trace.u[:, agent - 1],
        trace.omega[:, agent - 1], scenario.controller.alpha, T_s, nw,
        rl.window_start, rl.window_spacing)
    first = tuples[0]
    n_theta = n_unknowns(first.n2, first.m, first.d)
    zero = ValueParameters.initial(first.n2, first.m, first.d)
    Q = augmented_weight(scenario)
    G, _ = _assemble(tuples, zero, Q, scenario.controller.R,
                     scenario.controller.gamma)
    rank, null_vecs = regression_nullspace(G)
    if rank < n_theta and not _offset_only(null_vecs, first.n2):
        raise InsufficientExcitation(
            f"collected data has regression rank {rank}, need {n_theta}; "
            "increase probe richness or window count")
    log.info("collected %d windows, regression rank %d/%d%s", len(tuples),
             rank, n_theta,
             "" if rank == n_theta else
             f" ({n_theta - rank} offset-only free directions)")
    return tuples


def augmented_weight(scenario) -> np.ndarray:
    Q1 = np.atleast_2d(np.asarray(scenario.controller.Q1, dtype=float))
    n = Q1.shape[0]
    Q = np.zeros((2 * n, 2 * n))
    Q[:n, :n] = Q1
    return Q


def learn_from_tuples(tuples: list[DataTuple], Q: np.ndarray, R: np.ndarray,
                      alpha: float, gamma: float, tol: float = 1e-6,
                      k_max: int = 50) -> tuple[GareSolution, list["ValueParameters"]]:
    """Iterate the least-squares Bellman solve to a value-function fixed point.

    Returns the learned solution and the iterate history. Convergence is
    declared on the Frobenius change of the quadratic block; an infinite
    tolerance therefore returns after a single iteration.
    """
    first = tuples[0]
    params = ValueParameters.initial(first.n2, first.m, first.d)
    history = [params]
    for _ in range(int(k_max)):
        nxt = bellman_lsq(tuples, params, Q, R, alpha, gamma)
        history.append(nxt)
        drift = float(np.linalg.norm(nxt.P - params.P))
        params = nxt
        if drift < tol:
            sol = GareSolution(
                aug=None, P=params.P, K=params.K.copy(), W=params.W.copy(),
                residual_norm=params.fit_residual, pi_mode="quasi_steady",
                source="learned", Pi_const=params.Pi.copy(),
                g_const=params.g.copy(), w_const=params.w.copy(),
                Gamma_const=params.Gamma)
            return sol, history
    raise NoConvergence(
        f"no fixed point within {k_max} iterations (last drift {drift:.3e})",
        history=history)


def learn(scenario, tol: float = 1e-6, k_max: int = 50) -> GareSolution:
    """Collect scenario data and learn the controller from it."""
    tuples = collect(scenario)
    Q = augmented_weight(scenario)
    sol, history = learn_from_tuples(
        tuples, Q, scenario.controller.R, scenario.controller.alpha,
        scenario.controller.gamma, tol=tol, k_max=k_max)
    log.info("learning converged after %d iterations", history[-1].k)
    return sol
