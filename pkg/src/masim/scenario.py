"""Scenario files: TOML parsing, validation, and override handling.

A scenario bundles the plant model, the communication graph, the controller
selection with its design knobs, monitor parameters, attack specifications,
and optionally a learning section. Scenarios resolve either from a
filesystem path or from the packaged library by bare name.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .errors import MasimError, ScenarioError
from .graph import GraphTopology
from .plant import (AttackKind, AttackSpec, SystemModel, make_leader_input,
                    make_stealthy_attack)
from .rl_learner import ProbeSpec
from .trust_monitor import TrustParams

__all__ = [
    "ControllerConfig",
    "MonitorConfig",
    "RlConfig",
    "Scenario",
    "load_scenario",
    "packaged_scenarios",
    "read_raw",
]

_CONTROLLER_KINDS = ("baseline", "hinf", "hinf-rl")
_ROOT_KEYS = {"title", "horizon", "dt", "seed", "system", "graph",
              "controller", "monitor", "attack", "rl"}


@dataclass(frozen=True)
class ControllerConfig:
    """Controller selection plus every design margin in one place."""

    kind: str = "baseline"
    state_weight: np.ndarray | None = None
    gain_scale: float = 1.0
    c1_margin: float = 1.1
    c2_margin: float = 1.1
    boundary_layer: float = 1e-2
    Q1: np.ndarray = field(default_factory=lambda: 100.0 * np.eye(2))
    R: np.ndarray = field(default_factory=lambda: np.eye(1))
    alpha: float = 0.1
    gamma: float = 10.0
    pi_mode: str = "quasi_steady"
    observer_state_weight: np.ndarray | None = None
    observer_c_margin: float = 1.1
    observer_rho_margin: float = 1.1
    observer_boundary_layer: float = 1e-2
    gains_file: str | None = None


@dataclass(frozen=True)
class MonitorConfig:
    enabled: bool = False
    params: TrustParams = field(default_factory=TrustParams)


@dataclass(frozen=True)
class RlConfig:
    """Learning phase settings: windowing, probes, iteration limits."""

    agent: int = 1
    sample_interval: float = 0.05
    collection_horizon: float = 25.0
    n_windows: int = 38
    window_start: float = 0.5
    window_spacing: float = 0.6
    probe: ProbeSpec = field(default_factory=lambda: ProbeSpec(amplitude=2.0))
    disturb: ProbeSpec = field(default_factory=lambda: ProbeSpec(
        amplitude=1.0, n_components=6, freq_lo=0.3, freq_hi=15.0, seed=1))
    tol: float = 1e-6
    k_max: int = 50


@dataclass(frozen=True)
class Scenario:
    """Fully validated run description."""

    title: str
    horizon: float
    dt: float
    seed: int
    model: SystemModel
    topology: GraphTopology
    controller: ControllerConfig
    monitor: MonitorConfig
    attacks: tuple[AttackSpec, ...]
    rl: RlConfig | None
    leader_x0: np.ndarray
    agent_x0: np.ndarray
    observer_r0: np.ndarray

    @property
    def n_agents(self) -> int:
        return self.topology.n_agents


def packaged_scenarios() -> list[str]:
    """Names of the scenario files shipped inside the package."""
    pkg = resources.files("masim") / "scenarios"
    return sorted(p.name[:-5] for p in pkg.iterdir() if p.name.endswith(".toml"))


def read_raw(source: str | Path) -> dict:
    """Parsed-but-unvalidated scenario dictionary (for tooling like sweeps)."""
    text, origin = _read_source(source)
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{origin}: TOML parse error: {exc}") from exc


def _read_source(source: str | Path) -> tuple[str, str]:
    path = Path(source)
    if path.suffix == ".toml" and path.exists():
        return path.read_text(), str(path)
    if path.exists() and path.is_file():
        return path.read_text(), str(path)
    name = str(source)
    candidate = resources.files("masim") / "scenarios" / f"{name}.toml"
    if candidate.is_file():
        return candidate.read_text(), f"packaged:{name}"
    raise ScenarioError(
        f"scenario {source!r} is neither a readable file nor a packaged name "
        f"(packaged: {', '.join(packaged_scenarios())})")


def _apply_override(data: dict, assignment: str) -> None:
    """Apply one dotted-path key=value override, value in TOML syntax."""
    if "=" not in assignment:
        raise ScenarioError(f"override {assignment!r} is not of the form key=value")
    key, _, raw_value = assignment.partition("=")
    key = key.strip()
    if not key:
        raise ScenarioError(f"override {assignment!r} has an empty key")
    try:
        value = tomllib.loads(f"v = {raw_value.strip()}")["v"]
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(
            f"override value {raw_value.strip()!r} is not a TOML literal: {exc}"
        ) from exc
    node = data
    parts = key.split(".")
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ScenarioError(f"override {key!r} descends through non-table {part!r}")
        node = nxt
    node[parts[-1]] = value


def _matrix(value, name: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{name} is not a numeric array: {exc}") from exc
    return arr


def _build_model(sec: dict) -> tuple[SystemModel, np.ndarray, np.ndarray]:
    for req in ("A", "B", "D"):
        if req not in sec:
            raise ScenarioError(f"[system] is missing {req}")
    A = _matrix(sec["A"], "system.A")
    B = _matrix(sec["B"], "system.B")
    D = _matrix(sec["D"], "system.D")
    li_sec = sec.get("leader_input", {"kind": "zero"})
    try:
        leader_input = make_leader_input(
            kind=li_sec.get("kind", "zero"),
            amplitude=float(li_sec.get("amplitude", 0.0)),
            decay=float(li_sec.get("decay", 0.0)),
            frequency=float(li_sec.get("frequency", 0.0)),
            m=B.reshape(A.shape[0], -1).shape[1],
        )
        model = SystemModel(A=A, B=B, D=D, leader_input=leader_input,
                            v_m=float(sec.get("v_m", leader_input.bound())))
    except (ValueError, MasimError) as exc:
        raise ScenarioError(f"[system] invalid: {exc}") from exc
    leader_x0 = _matrix(sec.get("leader_x0", np.zeros(model.n)), "system.leader_x0").ravel()
    if leader_x0.shape != (model.n,):
        raise ScenarioError(f"system.leader_x0 must have {model.n} entries")
    if "agent_x0" not in sec:
        raise ScenarioError("[system] is missing agent_x0")
    agent_x0 = _matrix(sec["agent_x0"], "system.agent_x0")
    if agent_x0.ndim != 2 or agent_x0.shape[1] != model.n:
        raise ScenarioError(f"system.agent_x0 must be N x {model.n}")
    return model, leader_x0, agent_x0


def _build_topology(sec: dict, n_agents: int) -> GraphTopology:
    if "edges" not in sec:
        raise ScenarioError("[graph] is missing edges")
    if "pinned" not in sec:
        raise ScenarioError("[graph] is missing pinned (leader-connected agents)")
    try:
        edges = tuple((int(e[0]), int(e[1]), float(e[2]) if len(e) > 2 else 1.0)
                      for e in sec["edges"])
        pinning = [0.0] * n_agents
        for p in sec["pinned"]:
            idx = int(p)
            if not 1 <= idx <= n_agents:
                raise ValueError(f"pinned agent {idx} out of range 1..{n_agents}")
            pinning[idx - 1] = 1.0
        return GraphTopology(n_agents=n_agents, edges=edges,
                             pinning=tuple(pinning))
    except (TypeError, ValueError, IndexError, MasimError) as exc:
        raise ScenarioError(f"[graph] invalid: {exc}") from exc


def _build_controller(sec: dict, n: int, m: int) -> ControllerConfig:
    kind = sec.get("kind", "baseline")
    if kind not in _CONTROLLER_KINDS:
        raise ScenarioError(
            f"controller.kind {kind!r} not one of {_CONTROLLER_KINDS}")
    pi_mode = sec.get("pi_mode", "quasi_steady")
    if pi_mode not in ("quasi_steady", "filter"):
        raise ScenarioError(f"controller.pi_mode {pi_mode!r} unknown")

    def opt_matrix(key):
        return _matrix(sec[key], f"controller.{key}") if key in sec else None

    try:
        return ControllerConfig(
            kind=kind,
            state_weight=opt_matrix("state_weight"),
            gain_scale=float(sec.get("gain_scale", 1.0)),
            c1_margin=float(sec.get("c1_margin", 1.1)),
            c2_margin=float(sec.get("c2_margin", 1.1)),
            boundary_layer=float(sec.get("boundary_layer", 1e-2)),
            Q1=_matrix(sec.get("Q1", (100.0 * np.eye(n)).tolist()), "controller.Q1"),
            R=_matrix(sec.get("R", np.eye(m).tolist()), "controller.R"),
            alpha=float(sec.get("alpha", 0.1)),
            gamma=float(sec.get("gamma", 10.0)),
            pi_mode=pi_mode,
            observer_state_weight=opt_matrix("observer_state_weight"),
            observer_c_margin=float(sec.get("observer_c_margin", 1.1)),
            observer_rho_margin=float(sec.get("observer_rho_margin", 1.1)),
            observer_boundary_layer=float(sec.get("observer_boundary_layer", 1e-2)),
            gains_file=sec.get("gains_file"),
        )
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"[controller] invalid: {exc}") from exc


def _build_monitor(sec: dict) -> MonitorConfig:
    try:
        params = TrustParams(
            delta=float(sec.get("delta", 0.1)),
            theta=float(sec.get("theta", 0.1)),
            beta=float(sec.get("beta", 10.0)),
            kappa=float(sec.get("kappa", 10.0)),
            alarm_level=float(sec.get("alarm_level", 0.9)),
            arm_time=float(sec.get("arm_time", 0.0)),
            normalize=bool(sec.get("normalize_trust", False)),
            excision=bool(sec.get("excision", True)),
        )
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"[monitor] invalid: {exc}") from exc
    return MonitorConfig(enabled=bool(sec.get("enabled", False)), params=params)


def _build_attacks(tables: dict, model: SystemModel,
                   n_agents: int) -> tuple[AttackSpec, ...]:
    attacks = []
    for label in sorted(tables, key=str):
        sec = tables[label]
        if not isinstance(sec, dict):
            raise ScenarioError(f"[attack.{label}] must be a table")
        target = int(sec.get("target", 0))
        if not 1 <= target <= n_agents:
            raise ScenarioError(
                f"[attack.{label}] target {target} outside 1..{n_agents}")
        kind_raw = sec.get("kind", "type1")
        try:
            kind = AttackKind(kind_raw)
        except ValueError as exc:
            raise ScenarioError(
                f"[attack.{label}] kind {kind_raw!r} unknown") from exc
        link = None
        if kind is AttackKind.TYPE2_LINK:
            link_sec = sec.get("link")
            if not isinstance(link_sec, dict) or "from" not in link_sec or "to" not in link_sec:
                raise ScenarioError(
                    f"[attack.{label}] type2_link needs link = {{from=..., to=...}}")
            link = (int(link_sec["from"]), int(link_sec["to"]))
            if link[1] != target:
                raise ScenarioError(
                    f"[attack.{label}] link receiver {link[1]} must equal target {target}")
        try:
            generator = make_stealthy_attack(
                model.A, amplitude=float(sec.get("amplitude", 0.0)),
                frequency=float(sec.get("mode_frequency", 0.0)), d=model.d)
        except MasimError as exc:
            raise ScenarioError(f"[attack.{label}] invalid: {exc}") from exc
        attacks.append(AttackSpec(
            target=target, kind=kind, generator=generator,
            start_time=float(sec.get("start_time", 0.0)), link=link))
    return tuple(attacks)


def _build_rl(sec: dict, n_agents: int, seed: int) -> RlConfig:
    try:
        probe = ProbeSpec(
            amplitude=float(sec.get("probe_amplitude", 2.0)),
            n_components=int(sec.get("probe_components", 8)),
            freq_lo=float(sec.get("probe_freq_lo", 0.1)),
            freq_hi=float(sec.get("probe_freq_hi", 20.0)),
            seed=int(sec.get("probe_seed", seed)),
        )
        disturb = ProbeSpec(
            amplitude=float(sec.get("disturb_amplitude", 1.0)),
            n_components=int(sec.get("disturb_components", 6)),
            freq_lo=float(sec.get("disturb_freq_lo", 0.3)),
            freq_hi=float(sec.get("disturb_freq_hi", 15.0)),
            seed=int(sec.get("disturb_seed", seed + 1)),
        )
        cfg = RlConfig(
            agent=int(sec.get("agent", 1)),
            sample_interval=float(sec.get("sample_interval", 0.05)),
            collection_horizon=float(sec.get("collection_horizon", 25.0)),
            n_windows=int(sec.get("n_windows", 38)),
            window_start=float(sec.get("window_start", 0.5)),
            window_spacing=float(sec.get("window_spacing", 0.6)),
            probe=probe,
            disturb=disturb,
            tol=float(sec.get("tol", 1e-6)),
            k_max=int(sec.get("k_max", 50)),
        )
    except (TypeError, ValueError, MasimError) as exc:
        raise ScenarioError(f"[rl] invalid: {exc}") from exc
    if not 1 <= cfg.agent <= n_agents:
        raise ScenarioError(f"rl.agent {cfg.agent} outside 1..{n_agents}")
    last_end = cfg.window_start + (cfg.n_windows - 1) * cfg.window_spacing \
        + cfg.sample_interval
    if last_end > cfg.collection_horizon:
        raise ScenarioError(
            f"learning windows end at t={last_end:.2f}, beyond the collection "
            f"horizon {cfg.collection_horizon:.2f}")
    return cfg


def load_scenario(source: str | Path, overrides: tuple[str, ...] = (),
                  seed: int | None = None) -> Scenario:
    """Load, override, and validate a scenario.

    Overrides are dotted-path assignments whose right-hand side is parsed
    as a TOML literal, so strings need quotes: controller.gamma=5.0,
    title='"smoke"'. A seed argument beats both the file and overrides.
    """
    text, origin = _read_source(source)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{origin}: TOML parse error: {exc}") from exc
    data = copy.deepcopy(data)
    for assignment in overrides:
        _apply_override(data, assignment)
    if seed is not None:
        data["seed"] = int(seed)
    unknown = set(data) - _ROOT_KEYS
    if unknown:
        raise ScenarioError(
            f"{origin}: unknown root keys {sorted(unknown)}; "
            f"expected a subset of {sorted(_ROOT_KEYS)}")

    try:
        horizon = float(data.get("horizon", 0.0))
        dt = float(data.get("dt", 1e-3))
        seed_val = int(data.get("seed", 0))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{origin}: bad scalar root key: {exc}") from exc
    if horizon <= 0.0:
        raise ScenarioError(f"{origin}: horizon must be positive")
    if dt <= 0.0 or dt > horizon:
        raise ScenarioError(f"{origin}: dt must lie in (0, horizon]")

    if "system" not in data:
        raise ScenarioError(f"{origin}: missing [system]")
    model, leader_x0, agent_x0 = _build_model(data["system"])
    n_agents = agent_x0.shape[0]
    if "graph" not in data:
        raise ScenarioError(f"{origin}: missing [graph]")
    topology = _build_topology(data["graph"], n_agents)

    r0_raw = data["system"].get("observer_r0", "agents")
    if isinstance(r0_raw, str):
        if r0_raw == "agents":
            observer_r0 = agent_x0.copy()
        elif r0_raw == "leader":
            observer_r0 = np.tile(leader_x0, (n_agents, 1))
        else:
            raise ScenarioError(
                f"{origin}: observer_r0 {r0_raw!r} must be 'agents', 'leader', "
                "or an explicit array")
    else:
        observer_r0 = _matrix(r0_raw, "system.observer_r0")
        if observer_r0.shape != (n_agents, model.n):
            raise ScenarioError(
                f"{origin}: observer_r0 must be {n_agents} x {model.n}")

    controller = _build_controller(data.get("controller", {}), model.n, model.m)
    monitor = _build_monitor(data.get("monitor", {}))
    attacks = _build_attacks(data.get("attack", {}), model, n_agents)
    rl = _build_rl(data["rl"], n_agents, seed_val) if "rl" in data else None
    if controller.kind == "hinf-rl" and controller.gains_file is None and rl is None:
        raise ScenarioError(
            f"{origin}: hinf-rl needs either controller.gains_file or an [rl] section")

    return Scenario(
        title=str(data.get("title", Path(origin).stem)),
        horizon=horizon, dt=dt, seed=seed_val, model=model, topology=topology,
        controller=controller, monitor=monitor, attacks=attacks, rl=rl,
        leader_x0=leader_x0, agent_x0=agent_x0, observer_r0=observer_r0,
    )
