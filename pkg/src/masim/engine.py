"""Coupled fixed-step integration of the whole multi-agent stack.

One flat state vector carries the leader, every follower plant, the
observer layer, the monitor filters, and any controller filter states; a
single classical fourth-order step advances all of them together so every
layer sees the same time grid. Monitor-driven excision is the only
discrete action and it latches at step boundaries.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import baseline_protocol, hinf_controller, observer, trust_monitor
from .errors import NonFinite, ScenarioError
from .graph import GraphMatrices, build_matrices
from .hinf_controller import GareSolution
from .plant import AttackKind
from .rl_learner import ProbeSpec
from .scenario import Scenario

__all__ = [
    "RunContext",
    "SimResult",
    "CollectionTrace",
    "build_context",
    "initial_state",
    "step",
    "run_sim",
    "run_collection",
]

_PI_DIVERGENCE_LIMIT = 1e12


@dataclass
class RunContext:
    """Compiled run: design results, index layout, and latched excisions."""

    scenario: Scenario
    gm: GraphMatrices
    baseline: baseline_protocol.BaselineGains | None
    obs_gains: observer.ObserverGains | None
    gare: GareSolution | None
    collection: bool = False
    u_probes: tuple[ProbeSpec, ...] = ()
    w_probes: tuple[ProbeSpec, ...] = ()
    # state layout (slices into the flat vector)
    sl_leader: slice = slice(0)
    sl_x: slice = slice(0)
    sl_r: slice | None = None
    sl_C: slice | None = None
    sl_d: slice | None = None
    sl_pi: slice | None = None
    sl_gamma: slice | None = None
    state_size: int = 0
    # edge bookkeeping for the monitor filters
    edge_senders: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    edge_receivers: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    h_mean: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    capacity: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    # mutable across the run
    control_mask: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    alarmed: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    excisions: list[tuple[float, int, int]] = field(default_factory=list)

    @property
    def has_observer(self) -> bool:
        return self.sl_r is not None

    @property
    def has_monitor(self) -> bool:
        return self.sl_C is not None


def _design_controllers(scenario: Scenario, gm: GraphMatrices,
                        learned: GareSolution | None):
    ctl = scenario.controller
    model = scenario.model
    base = None
    obs = None
    gare = None
    if ctl.kind == "baseline":
        base = baseline_protocol.design_baseline_gains(
            model, gm, state_weight=ctl.state_weight, gain_scale=ctl.gain_scale,
            c1_margin=ctl.c1_margin, c2_margin=ctl.c2_margin)
    else:
        obs = observer.design_gains(
            model, gm, state_weight=ctl.observer_state_weight,
            c_margin=ctl.observer_c_margin, rho_margin=ctl.observer_rho_margin)
        if ctl.kind == "hinf":
            aug = hinf_controller.assemble(model, ctl.Q1, ctl.R, ctl.alpha,
                                           ctl.gamma)
            gare = hinf_controller.solve(aug, pi_mode=ctl.pi_mode)
        else:
            if learned is None:
                raise ScenarioError(
                    "hinf-rl run needs a learned solution (gains file or learn step)")
            gare = learned
    return base, obs, gare


def build_context(scenario: Scenario, learned: GareSolution | None = None,
                  collection: bool = False) -> RunContext:
    """Design the gains and lay out the flat state vector for a run."""
    gm = build_matrices(scenario.topology)
    model = scenario.model
    n, N = model.n, scenario.n_agents
    if collection:
        base, gare = None, None
        obs = observer.design_gains(
            model, gm, state_weight=scenario.controller.observer_state_weight,
            c_margin=scenario.controller.observer_c_margin,
            rho_margin=scenario.controller.observer_rho_margin)
    else:
        base, obs, gare = _design_controllers(scenario, gm, learned)

    ctx = RunContext(scenario=scenario, gm=gm, baseline=base, obs_gains=obs,
                     gare=gare, collection=collection)
    pos = 0
    ctx.sl_leader = slice(pos, pos + n)
    pos += n
    ctx.sl_x = slice(pos, pos + N * n)
    pos += N * n
    if obs is not None:
        ctx.sl_r = slice(pos, pos + N * n)
        pos += N * n
    monitored = scenario.monitor.enabled and obs is not None
    if monitored:
        ctx.sl_C = slice(pos, pos + N)
        pos += N
        E = len(scenario.topology.edges)
        ctx.sl_d = slice(pos, pos + E)
        pos += E
        ctx.edge_senders = np.array(
            [e[0] - 1 for e in scenario.topology.edges], dtype=int)
        ctx.edge_receivers = np.array(
            [e[1] - 1 for e in scenario.topology.edges], dtype=int)
        h_mean = np.zeros((N, N))
        for s, r in zip(ctx.edge_senders, ctx.edge_receivers):
            h_mean[r, s] = 1.0
        indeg = h_mean.sum(axis=1, keepdims=True)
        np.divide(h_mean, indeg, out=h_mean, where=indeg > 0)
        ctx.h_mean = h_mean
        ctx.capacity = trust_monitor.excision_capacity(scenario.topology)
    if gare is not None and gare.source == "model" and gare.pi_mode == "filter":
        ctx.sl_pi = slice(pos, pos + N * 2 * n)
        pos += N * 2 * n
    if gare is not None and gare.source == "model":
        ctx.sl_gamma = slice(pos, pos + N)
        pos += N
    ctx.state_size = pos
    ctx.control_mask = np.ones((N, N))
    ctx.alarmed = np.zeros(N, dtype=bool)

    if collection:
        rl = scenario.rl
        if rl is None:
            raise ScenarioError("collection run needs an [rl] section")
        base_u, base_w = rl.probe.seed, rl.disturb.seed
        ctx.u_probes = tuple(
            dataclasses.replace(rl.probe, seed=base_u * 1000 + 1 + i)
            for i in range(N))
        ctx.w_probes = tuple(
            dataclasses.replace(rl.disturb, seed=base_w * 1000 + 501 + i)
            for i in range(N))
    return ctx


def initial_state(ctx: RunContext) -> np.ndarray:
    sc = ctx.scenario
    y = np.zeros(ctx.state_size)
    y[ctx.sl_leader] = sc.leader_x0
    y[ctx.sl_x] = sc.agent_x0.ravel()
    if ctx.sl_r is not None:
        y[ctx.sl_r] = sc.observer_r0.ravel()
    if ctx.sl_C is not None:
        y[ctx.sl_C] = 1.0
        y[ctx.sl_d] = 1.0
    return y


def _attack_terms(ctx: RunContext, t: float):
    """Active attack injections: plant channel, observer channel, link data."""
    sc = ctx.scenario
    model = sc.model
    N, d = sc.n_agents, model.d
    omega_x = np.zeros((N, d))
    omega_r = np.zeros((N, d))
    links = []
    for spec in sc.attacks:
        w = spec.applied(t)
        if spec.kind is AttackKind.TYPE1:
            omega_x[spec.target - 1] += w
        elif spec.kind is AttackKind.TYPE2_NODE:
            omega_r[spec.target - 1] += w
        else:
            links.append((spec.link[0] - 1, spec.link[1] - 1,
                          model.D @ w, w))
    return omega_x, omega_r, links


def _trust_matrix(ctx: RunContext, C: np.ndarray, dval: np.ndarray) -> np.ndarray:
    """Edge trust values max(C_receiver, d_edge), ones off-edge."""
    N = ctx.scenario.n_agents
    T = np.ones((N, N))
    T[ctx.edge_receivers, ctx.edge_senders] = np.maximum(
        C[ctx.edge_receivers], dval)
    if ctx.scenario.monitor.params.normalize:
        for i in np.unique(ctx.edge_receivers):
            sel = ctx.edge_receivers == i
            senders = ctx.edge_senders[sel]
            total = T[i, senders].sum()
            if total > 0.0:
                T[i, senders] = T[i, senders] / total
    return T


def _eval_rhs(ctx: RunContext, t: float, y: np.ndarray, want_aux: bool):
    sc = ctx.scenario
    model = sc.model
    ctl = sc.controller
    gm = ctx.gm
    n, N, m, d = model.n, sc.n_agents, model.m, model.d
    A, B, D = model.A, model.B, model.D
    ydot = np.zeros_like(y)
    aux = {} if want_aux else None

    zeta = y[ctx.sl_leader]
    x = y[ctx.sl_x].reshape(N, n)
    v0 = model.leader_input(t)
    ydot[ctx.sl_leader] = A @ zeta + B @ v0
    omega_x, omega_r, links = _attack_terms(ctx, t)

    r = None
    eta_ctl = None
    ups = None
    trust = None
    if ctx.has_observer:
        r = y[ctx.sl_r].reshape(N, n)
        if ctx.has_monitor:
            C = y[ctx.sl_C]
            dval = y[ctx.sl_d]
            trust = _trust_matrix(ctx, C, dval)
        mask = ctx.control_mask if ctx.control_mask.size else None
        eta_ctl = observer.eta_all(r, zeta, gm, trust_weights=trust,
                                   control_mask=mask)
        for s_idx, r_idx, pert, _ in links:
            w_eff = gm.adjacency[r_idx, s_idx] * ctx.control_mask[r_idx, s_idx]
            if trust is not None:
                w_eff *= trust[r_idx, s_idx]
            eta_ctl[r_idx] += w_eff * pert
        ups = observer.observer_input_all(eta_ctl, ctx.obs_gains,
                                          eps=ctl.observer_boundary_layer)
        ydot[ctx.sl_r] = (r @ A.T + ups @ B.T + omega_r @ D.T).ravel()

    if ctx.collection:
        u = np.empty((N, m))
        w_probe = np.empty((N, d))
        for i in range(N):
            u[i] = ctx.u_probes[i].signal(t)
            w_probe[i] = ctx.w_probes[i].signal(t)
        dx = x @ A.T + u @ B.T + (w_probe + omega_x) @ D.T
        if want_aux:
            aux["u"] = u
            aux["omega"] = w_probe
    elif ctx.baseline is not None:
        u = baseline_protocol.control_all(x, zeta, ctx.baseline, gm,
                                          eps=ctl.boundary_layer)
        dx = x @ A.T + u @ B.T + omega_x @ D.T
        if want_aux:
            aux["u"] = u
            aux["omega"] = omega_x
    else:
        sol = ctx.gare
        X = np.hstack([x - r, r])
        u = X @ sol.K.T
        if sol.source == "learned":
            u = u + sol.g_const
        elif sol.pi_mode == "filter":
            Pi = y[ctx.sl_pi].reshape(N, 2 * n)
            Rinv = np.linalg.inv(sol.aug.R)
            u = u - (Pi @ sol.aug.B1) @ Rinv
            ydot[ctx.sl_pi] = (Pi @ sol.A_pi.T - ups @ (sol.P @ sol.aug.E1).T).ravel()
        else:
            u = u + ups @ sol.G_ff.T
        dx = x @ A.T + u @ B.T + omega_x @ D.T
        if ctx.sl_gamma is not None:
            if sol.pi_mode == "filter":
                Pi_rows = y[ctx.sl_pi].reshape(N, 2 * n)
            else:
                Pi_rows = ups @ sol.M_pi.T
            Gamma = y[ctx.sl_gamma]
            dG = np.empty(N)
            for i in range(N):
                dG[i] = hinf_controller.gamma_rate(sol, Gamma[i], Pi_rows[i],
                                                   ups[i])
            ydot[ctx.sl_gamma] = dG
        if want_aux:
            aux["u"] = u
            aux["omega"] = omega_x + omega_r
    ydot[ctx.sl_x] = dx.ravel()

    if ctx.has_monitor:
        params = sc.monitor.params
        diff = r[None, :, :] - r[:, None, :]
        for s_idx, r_idx, pert, _ in links:
            diff[r_idx, s_idx] = diff[r_idx, s_idx] + pert
        dist = np.linalg.norm(diff, axis=2)
        lead_dist = np.linalg.norm(zeta[None, :] - r, axis=1)
        s_stat = (gm.adjacency * dist).sum(axis=1) + gm.pinning * lead_dist
        o_stat = np.linalg.norm(eta_ctl, axis=1)
        q = params.delta / (params.delta + np.abs(s_stat - o_stat))
        ydot[ctx.sl_C] = params.beta * (q - y[ctx.sl_C])
        h = ctx.h_mean @ r
        for s_idx, r_idx, pert, _ in links:
            h[r_idx] = h[r_idx] + ctx.h_mean[r_idx, s_idx] * pert
        gap = r[ctx.edge_senders] - h[ctx.edge_receivers]
        for s_idx, r_idx, pert, _ in links:
            on_edge = (ctx.edge_senders == s_idx) & (ctx.edge_receivers == r_idx)
            gap[on_edge] += pert
        l_stat = params.theta / (np.linalg.norm(gap, axis=1) + params.theta)
        ydot[ctx.sl_d] = params.kappa * (l_stat - y[ctx.sl_d])
        if want_aux:
            aux["o"] = o_stat
            aux["s"] = s_stat
            aux["C"] = y[ctx.sl_C].copy()
            aux["T"] = trust

    if want_aux:
        aux["e"] = np.linalg.norm(
            baseline_protocol.local_tracking_errors(x, zeta, gm), axis=1)
        if eta_ctl is not None:
            aux["eta"] = np.linalg.norm(eta_ctl, axis=1)
        aux["x"] = x.copy()
        aux["r"] = None if r is None else r.copy()
        aux["leader"] = zeta.copy()
    return ydot, aux


def step(ctx: RunContext, t: float, y: np.ndarray, dt: float,
         k1: np.ndarray | None = None) -> np.ndarray:
    """One classical fourth-order step of the full coupled stack."""
    if k1 is None:
        k1 = _eval_rhs(ctx, t, y, False)[0]
    k2 = _eval_rhs(ctx, t + 0.5 * dt, y + 0.5 * dt * k1, False)[0]
    k3 = _eval_rhs(ctx, t + 0.5 * dt, y + 0.5 * dt * k2, False)[0]
    k4 = _eval_rhs(ctx, t + dt, y + dt * k3, False)[0]
    y_next = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(y_next)):
        raise NonFinite(f"state diverged at t={t + dt:.6f}", t=t + dt)
    if ctx.sl_pi is not None:
        if np.abs(y_next[ctx.sl_pi]).max() > _PI_DIVERGENCE_LIMIT:
            raise NonFinite(
                f"affine-term filter diverged at t={t + dt:.6f}", t=t + dt)
    return y_next


def _maybe_excise(ctx: RunContext, t: float, y: np.ndarray) -> None:
    """Latch excisions for agents whose confidence crossed the alarm level.

    Alarms only arm after params.arm_time so the initial consensus
    transient, when observers legitimately disagree, cannot trip them.
    """
    params = ctx.scenario.monitor.params
    if not params.excision or t < params.arm_time:
        return
    C = y[ctx.sl_C]
    dval = y[ctx.sl_d]
    for i in map(int, np.nonzero((C < params.alarm_level) & ~ctx.alarmed)[0]):
        ctx.alarmed[i] = True
        cap = int(ctx.capacity[i])
        if cap <= 0:
            continue
        sel = ctx.edge_receivers == i
        d_by_sender = {int(s) + 1: float(v)
                       for s, v in zip(ctx.edge_senders[sel], dval[sel])}
        for sender in trust_monitor.select_excision(d_by_sender, cap):
            ctx.control_mask[i, sender - 1] = 0.0
            ctx.excisions.append((float(t), i + 1, sender))


@dataclass
class SimResult:
    """Recorded run: uniform grid arrays, one row block per agent."""

    scenario: Scenario
    ts: np.ndarray
    leader: np.ndarray
    x: np.ndarray
    u: np.ndarray
    omega: np.ndarray
    e_norm: np.ndarray
    r: np.ndarray | None = None
    eta_norm: np.ndarray | None = None
    o: np.ndarray | None = None
    s: np.ndarray | None = None
    C: np.ndarray | None = None
    T: np.ndarray | None = None
    gamma_final: np.ndarray | None = None
    excisions: list[tuple[float, int, int]] = field(default_factory=list)

    @property
    def n_agents(self) -> int:
        return self.x.shape[1]

    def deviation(self, agent: int) -> np.ndarray:
        """Time series of ||x_agent - leader|| (agent is 1-based)."""
        return np.linalg.norm(self.x[:, agent - 1] - self.leader, axis=1)


def run_sim(scenario: Scenario, learned: GareSolution | None = None,
            horizon: float | None = None) -> SimResult:
    """Integrate a scenario and record the full trace at every step."""
    ctx = build_context(scenario, learned=learned)
    y = initial_state(ctx)
    dt = scenario.dt
    span = scenario.horizon if horizon is None else float(horizon)
    n_steps = int(round(span / dt))
    sc = scenario
    N, n, m, d = sc.n_agents, sc.model.n, sc.model.m, sc.model.d
    S = n_steps + 1
    mon = ctx.has_monitor
    obs = ctx.has_observer

    ts = np.empty(S)
    leader = np.empty((S, n))
    xs = np.empty((S, N, n))
    us = np.empty((S, N, m))
    omegas = np.empty((S, N, d))
    e_norms = np.empty((S, N))
    rs = np.empty((S, N, n)) if obs else None
    eta_norms = np.empty((S, N)) if obs else None
    os_ = np.empty((S, N)) if mon else None
    ss_ = np.empty((S, N)) if mon else None
    Cs = np.empty((S, N)) if mon else None
    Ts = np.empty((S, N, N)) if mon else None

    t = 0.0
    for k in range(S):
        ydot, aux = _eval_rhs(ctx, t, y, True)
        ts[k] = t
        leader[k] = aux["leader"]
        xs[k] = aux["x"]
        us[k] = aux["u"]
        omegas[k] = aux["omega"]
        e_norms[k] = aux["e"]
        if obs:
            rs[k] = aux["r"]
            eta_norms[k] = aux["eta"]
        if mon:
            os_[k] = aux["o"]
            ss_[k] = aux["s"]
            Cs[k] = aux["C"]
            Ts[k] = aux["T"]
        if k == n_steps:
            break
        y = step(ctx, t, y, dt, k1=ydot)
        t = (k + 1) * dt
        if mon:
            _maybe_excise(ctx, t, y)

    gamma_final = None
    if ctx.sl_gamma is not None:
        gamma_final = y[ctx.sl_gamma].copy()
    return SimResult(
        scenario=scenario, ts=ts, leader=leader, x=xs, u=us, omega=omegas,
        e_norm=e_norms, r=rs, eta_norm=eta_norms, o=os_, s=ss_, C=Cs, T=Ts,
        gamma_final=gamma_final, excisions=list(ctx.excisions),
    )


@dataclass(frozen=True)
class CollectionTrace:
    """Learning-phase recording: augmented states and the known signals."""

    ts: np.ndarray
    X: np.ndarray
    u: np.ndarray
    omega: np.ndarray


def run_collection(scenario: Scenario) -> CollectionTrace:
    """Drive every agent with known probes and record the learner's signals.

    The behavior input is the probe itself (zero feedback) and the recorded
    disturbance is the known injected exploration signal, so the learner
    consumes only measured quantities.
    """
    if scenario.rl is None:
        raise ScenarioError("collection run needs an [rl] section")
    ctx = build_context(scenario, collection=True)
    y = initial_state(ctx)
    dt = scenario.dt
    n_steps = int(round(scenario.rl.collection_horizon / dt))
    N, n, m, d = scenario.n_agents, scenario.model.n, scenario.model.m, scenario.model.d
    S = n_steps + 1
    ts = np.empty(S)
    Xs = np.empty((S, N, 2 * n))
    us = np.empty((S, N, m))
    ws = np.empty((S, N, d))
    t = 0.0
    for k in range(S):
        ydot, aux = _eval_rhs(ctx, t, y, True)
        ts[k] = t
        x = aux["x"]
        r = aux["r"]
        Xs[k, :, :n] = x - r
        Xs[k, :, n:] = r
        us[k] = aux["u"]
        ws[k] = aux["omega"]
        if k == n_steps:
            break
        y = step(ctx, t, y, dt, k1=ydot)
        t = (k + 1) * dt
        if ctx.has_monitor:
            _maybe_excise(ctx, t, y)
    return CollectionTrace(ts=ts, X=Xs, u=us, omega=ws)
