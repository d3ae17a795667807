"""Agent and leader dynamics, attack generators, and the fixed-step integrator.

The plant family is linear time-invariant: agent i obeys
``xdot = A x + B u + D w`` and the leader ``zdot = A z + B v0(t)``. Attack
signals enter through one of three doors: the physical channel D (kind
"type1"), the target's observer differential equation ("type2_node"), or a
single communication edge whose received value is falsified ("type2_link").
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import DimensionMismatch, ModeNotFound, NonFinite, SingularLf
from .graph import GraphMatrices

__all__ = [
    "SystemModel",
    "LeaderInput",
    "make_leader_input",
    "AttackKind",
    "AttackSpec",
    "StealthyGenerator",
    "make_stealthy_attack",
    "rk4_step",
    "relay_balance",
    "SteadyStateResult",
    "steady_state_under_attack",
]


@dataclass(frozen=True)
class LeaderInput:
    """Named deterministic leader input signal.

    kinds: "zero"; "constant" (value); "decaying_sine" with
    amplitude * exp(-decay t) * sin(frequency t).
    """

    kind: str
    amplitude: float = 0.0
    decay: float = 0.0
    frequency: float = 0.0
    m: int = 1

    def __call__(self, t: float) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(self.m)
        if self.kind == "constant":
            return np.full(self.m, self.amplitude)
        if self.kind == "decaying_sine":
            v = self.amplitude * math.exp(-self.decay * t) * math.sin(self.frequency * t)
            return np.full(self.m, v)
        raise ValueError(f"unknown leader input kind {self.kind!r}")

    def bound(self) -> float:
        """Supremum of |v0| over t >= 0."""
        if self.kind == "zero":
            return 0.0
        return abs(self.amplitude)


def make_leader_input(kind: str, *, amplitude: float = 0.0, decay: float = 0.0,
                      frequency: float = 0.0, m: int = 1) -> LeaderInput:
    sig = LeaderInput(kind=kind, amplitude=amplitude, decay=decay, frequency=frequency, m=m)
    sig(0.0)  # validate the kind eagerly
    return sig


@dataclass(frozen=True)
class SystemModel:
    """LTI agent/leader dynamics with a bounded leader input.

    v_m must dominate the leader input amplitude; the relay gains of both
    controller families are sized from it.
    """

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    leader_input: LeaderInput
    v_m: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        D = np.asarray(self.D, dtype=float).reshape(n, -1)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "D", D)
        if A.shape != (n, n):
            raise DimensionMismatch("A must be square")
        if self.v_m < self.leader_input.bound() - 1e-12:
            raise ValueError(
                f"v_m={self.v_m} does not dominate the leader input bound {self.leader_input.bound()}"
            )

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def d(self) -> int:
        return self.D.shape[1]


class AttackKind(str, Enum):
    TYPE1 = "type1"
    TYPE2_NODE = "type2_node"
    TYPE2_LINK = "type2_link"


@dataclass(frozen=True)
class StealthyGenerator:
    """Autonomous signal generator whose modes live inside the plant spectrum.

    The generator state obeys wdot = Gamma w from x0, and the emitted signal
    is output @ w(t). Construction verifies that every eigenvalue of Gamma
    is also an eigenvalue of the plant matrix it was built against.
    """

    Gamma: np.ndarray
    x0: np.ndarray
    output: np.ndarray
    plant_A: np.ndarray = field(repr=False)
    _frequency: float = field(repr=False, default=float("nan"))

    def __post_init__(self):
        Gamma = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        output = np.atleast_2d(np.asarray(self.output, dtype=float))
        object.__setattr__(self, "Gamma", Gamma)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "output", output)
        if Gamma.shape[0] != Gamma.shape[1] or x0.shape[0] != Gamma.shape[0]:
            raise DimensionMismatch("generator state dimensions inconsistent")
        if output.shape[1] != Gamma.shape[0]:
            raise DimensionMismatch("output map does not match generator state")
        plant_eigs = np.linalg.eigvals(np.atleast_2d(np.asarray(self.plant_A, dtype=float)))
        for lam in np.linalg.eigvals(Gamma):
            if np.abs(plant_eigs - lam).min() > 1e-9 * max(1.0, np.abs(plant_eigs).max()):
                raise ModeNotFound(
                    f"generator eigenvalue {lam:.6g} is not a plant eigenvalue"
                )

    @property
    def d(self) -> int:
        return self.output.shape[0]

    @property
    def frequency(self) -> float:
        """Mode frequency for rotation/constant generators, NaN otherwise."""
        return self._frequency

    @property
    def amplitude(self) -> float:
        """Largest output gain (the emitted amplitude for canonical generators)."""
        return float(np.linalg.norm(self.output, 2))

    def signal(self, t: float) -> np.ndarray:
        """Signal value at time t.

        Rotation/constant structures built by make_stealthy_attack evaluate
        in closed form; arbitrary generators fall back to the matrix
        exponential.
        """
        w0 = self._frequency
        if w0 == 0.0:
            return self.output @ self.x0
        if not math.isnan(w0):
            s, c = math.sin(w0 * t), math.cos(w0 * t)
            # planar rotation of the [sin, cos]-phased initial state
            w = np.array([self.x0[0] * c + self.x0[1] * s, -self.x0[0] * s + self.x0[1] * c])
            return self.output @ w
        import scipy.linalg as sla

        return self.output @ (sla.expm(self.Gamma * t) @ self.x0)


def make_stealthy_attack(A: np.ndarray, amplitude: float, frequency: float,
                         d: int = 1) -> StealthyGenerator:
    """Generator emitting amplitude*sin(frequency*t) on the first channel.

    frequency selects the plant mode pair +-i*frequency (frequency 0 selects
    a zero eigenvalue and emits a constant). Raises ModeNotFound when the
    requested mode is absent from the plant spectrum.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    out = np.zeros((d, 2)) if frequency != 0.0 else np.zeros((d, 1))
    out[0, 0] = amplitude
    if frequency == 0.0:
        return StealthyGenerator(
            Gamma=np.zeros((1, 1)), x0=np.array([1.0]), output=out, plant_A=A, _frequency=0.0
        )
    Gamma = np.array([[0.0, frequency], [-frequency, 0.0]])
    # state [sin(w t), cos(w t)]
    return StealthyGenerator(
        Gamma=Gamma, x0=np.array([0.0, 1.0]), output=out, plant_A=A, _frequency=float(frequency)
    )


@dataclass(frozen=True)
class AttackSpec:
    """One attack: which agent, which door, which signal, from when.

    For kind "type2_link", ``link`` names the (sender, receiver) edge whose
    received value is falsified; the receiver then sees
    r_sender + D * signal(t) in place of r_sender, while the sender's own
    state is untouched.
    """

    target: int
    kind: AttackKind
    generator: StealthyGenerator
    start_time: float = 0.0
    link: tuple[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        if self.start_time < 0.0:
            raise ValueError("start_time must be nonnegative")
        if self.target < 1:
            raise ValueError("attack target must be a follower id")
        if self.kind is AttackKind.TYPE2_LINK and self.link is None:
            raise ValueError("type2_link attacks must name the falsified edge")

    def applied(self, t: float) -> np.ndarray:
        """Signal value at time t, zero-padded before onset."""
        if t < self.start_time:
            return np.zeros(self.generator.d)
        return self.generator.signal(t)


def rk4_step(f: Callable[[float, np.ndarray], np.ndarray], t: float,
             y: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order step of ydot = f(t, y)."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def check_finite(y: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(y)):
        raise NonFinite(f"state diverged at t={t:.6f}", t=t)


def relay_balance(c1: float, c2: float, amplitude: float, frequency: float) -> tuple[float, float]:
    """Steady sliding-variable amplitude under a resonant channel injection.

    In the periodic steady state the fundamental of the two-term control
    (linear slope c1 plus relay level c2) must cancel the injected
    amplitude. For a sinusoid the relay contributes 4/pi of its level; for a
    constant (frequency 0) it contributes the level itself. Returns
    (s_hat, c_bar): the sliding-variable amplitude and the effective linear
    gain amplitude / s_hat. s_hat = 0 when the relay alone dominates the
    injection (no steady offset).
    """
    relay_fund = c2 * (4.0 / math.pi) if frequency != 0.0 else c2
    if amplitude <= relay_fund:
        return 0.0, math.inf
    s_hat = (amplitude - relay_fund) / c1
    return s_hat, amplitude / s_hat


@dataclass(frozen=True)
class SteadyStateResult:
    """Predicted periodic steady offsets under a resonant channel injection.

    peak_deviation[i] is the fundamental-orbit peak of ||x_i - leader||;
    mu[i] scales the shared mode orbit per agent; e_peak_target maps
    attacked agent id to its own steady neighborhood-error peak.
    """

    peak_deviation: np.ndarray
    mu: np.ndarray
    s_hat: dict[int, float]
    c_bar: dict[int, float]
    e_peak_target: dict[int, float]
    frequency: float


def steady_state_under_attack(gm: GraphMatrices, model: SystemModel, K: np.ndarray,
                              c1: float, c2: float, amplitudes: dict[int, float],
                              frequency: float) -> SteadyStateResult:
    """Analytic steady offsets for resonant channel injections on a synced network.

    amplitudes maps attacked agent id -> injection amplitude on the physical
    channel at the given plant-mode frequency. The attack excites the plant
    mode; every agent downstream of a target inherits a scaled copy of the
    mode orbit, with scales given by the inverse coupling matrix. Only
    single-input protocols are supported (the relay balance is scalar).
    """
    K = np.asarray(K, dtype=float).reshape(model.m, model.n)
    if model.m != 1:
        raise DimensionMismatch("steady-state prediction implemented for single-input protocols")
    A = model.A
    eigvals, eigvecs = np.linalg.eig(A)
    lam = 1j * frequency if frequency != 0.0 else 0.0 + 0.0j
    idx = int(np.argmin(np.abs(eigvals - lam)))
    if np.abs(eigvals[idx] - lam) > 1e-9 * max(1.0, np.abs(eigvals).max()):
        raise ModeNotFound(f"plant has no mode at frequency {frequency}")
    v = eigvecs[:, idx]
    # orbit xi(theta) = Re(v e^{i theta}); peak norm over a period:
    orbit_basis = np.column_stack([v.real, -v.imag])
    orbit_peak = float(np.linalg.svd(orbit_basis, compute_uv=False)[0])
    gain_along_mode = float(np.abs(K @ v).item())
    if gain_along_mode < 1e-12:
        raise SingularLf("protocol gain is blind to the attacked mode")

    n_agents = gm.n_agents
    try:
        Hinv = np.linalg.inv(gm.coupling)
    except np.linalg.LinAlgError as exc:
        raise SingularLf("coupling matrix singular: no steady state") from exc
    mu = np.zeros(n_agents)
    s_hat_map: dict[int, float] = {}
    c_bar_map: dict[int, float] = {}
    e_peak: dict[int, float] = {}
    for target, amp in amplitudes.items():
        s_hat, c_bar = relay_balance(c1, c2, amp, frequency)
        s_hat_map[target] = s_hat
        c_bar_map[target] = c_bar
        a_e = s_hat / gain_along_mode
        e_peak[target] = a_e * orbit_peak
        pattern = np.zeros(n_agents)
        pattern[target - 1] = 1.0
        mu = mu + (Hinv @ pattern) * a_e
    return SteadyStateResult(
        peak_deviation=np.abs(mu) * orbit_peak,
        mu=mu,
        s_hat=s_hat_map,
        c_bar=c_bar_map,
        e_peak_target=e_peak,
        frequency=frequency,
    )
