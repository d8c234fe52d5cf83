"""UAV trajectories, frequency-domain mmWave channels, codebook and beam oracle.

Geometry: the base station sits at the origin with its uniform linear array
laid along the +y axis, broadside facing +x.  A plane wave from position p
has direction cosine ``u = p_y / |p|`` along the array axis; the codebook and
channels are parameterised by ``u`` (sine space).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateGeometryError, DimensionError

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ChannelConfig:
    M: int = 16
    K: int = 8
    Q: int = 32
    D: int = 16  # cyclic prefix length, metadata only
    antenna_spacing: float = 0.5
    P: float = 1.0
    sigma2: float = 1e-10
    L: int = 2
    rician_K_dB: float = 10.0
    delay_spread: float = 20e-9
    carrier_hz: float = 28e9
    subcarrier_spacing_hz: float = 120e3 * 64

    def validate(self) -> "ChannelConfig":
        if self.M < 1 or self.K < 1 or self.Q < 1 or self.L < 0:
            raise ConfigError(f"need M, K, Q >= 1 and L >= 0, got {self}")
        if not (self.P > 0 and self.sigma2 > 0):
            raise ConfigError("P and sigma2 must be positive")
        if self.antenna_spacing <= 0 or self.delay_spread < 0 or self.carrier_hz <= 0:
            raise ConfigError("antenna_spacing, carrier_hz must be > 0 and delay_spread >= 0")
        return self

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


@dataclass
class Codebook:
    vectors: np.ndarray  # (Q, M) complex, one unit-norm beam per row
    grid: np.ndarray  # (Q,) direction cosines of the beams

    @property
    def Q(self) -> int:
        return self.vectors.shape[0]

    @property
    def M(self) -> int:
        return self.vectors.shape[1]


@dataclass
class UAVState:
    position: np.ndarray  # (3,) meters
    velocity: np.ndarray  # (3,) m/s
    posture: np.ndarray  # (roll, pitch, yaw) radians
    time: float


@dataclass
class ChannelRealization:
    h: np.ndarray  # (K, M) complex
    meta: UAVState | None = None


@dataclass(frozen=True)
class TrajectoryConfig:
    duration: float = 100.0
    step: float = 0.5
    speed: float = 8.0
    max_turn_rate: float = 0.8  # rad/s, horizontal heading
    max_climb_rate: float = 2.0  # m/s
    start: tuple | None = None  # (x, y, z); random inside the region when None
    waypoints: tuple | None = None  # explicit ((x, y, z), ...); random when None
    dist_range: tuple = (40.0, 150.0)  # horizontal distance from BS
    azimuth_range: tuple = (-1.05, 1.05)  # radians from +x
    alt_range: tuple = (15.0, 60.0)
    waypoint_radius: float = 15.0  # keep above speed / max_turn_rate or the UAV orbits
    posture_jitter: float = 0.03  # rad, uniform bound on posture perturbation
    bank_gain: float = 0.4  # roll per unit turn rate (s)
    tilt_gain: float = 0.01  # forward pitch per m/s

    def validate(self) -> "TrajectoryConfig":
        if self.duration <= 0 or self.step <= 0:
            raise ConfigError("duration and step must be positive")
        if self.speed < 0 or self.max_turn_rate < 0 or self.max_climb_rate < 0:
            raise ConfigError("speed and rate limits must be non-negative")
        if self.alt_range[0] < 0:
            raise ConfigError("altitude range must be non-negative")
        return self

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.duration / self.step + 1e-9))


def steering_vector(u, M: int, spacing: float = 0.5) -> np.ndarray:
    """Array response exp(j 2 pi spacing m u), m = 0..M-1 (not normalized)."""
    u = np.asarray(u, dtype=np.float64)
    m = np.arange(M)
    return np.exp(1j * 2.0 * np.pi * spacing * np.multiply.outer(u, m))


def codebook_grid(Q: int) -> np.ndarray:
    """Cell-centred uniform grid in sine space over (-1, 1)."""
    return -1.0 + (2.0 * np.arange(Q) + 1.0) / Q


def make_codebook(M: int, Q: int, spacing: float = 0.5) -> Codebook:
    if M < 1 or Q < 1:
        raise ConfigError(f"codebook needs M, Q >= 1, got M={M}, Q={Q}")
    grid = codebook_grid(Q)
    vecs = steering_vector(grid, M, spacing) / np.sqrt(M)
    return Codebook(vectors=vecs, grid=grid)


def direction_cosine(position) -> float:
    p = np.asarray(position, dtype=np.float64)
    r = float(np.linalg.norm(p))
    if r == 0.0:
        raise DegenerateGeometryError("UAV coincides with the base station")
    return float(p[1] / r)


# ---------------------------------------------------------------- trajectories


def _sample_waypoint(tcfg: TrajectoryConfig, rng: np.random.Generator) -> np.ndarray:
    d = rng.uniform(*tcfg.dist_range)
    az = rng.uniform(*tcfg.azimuth_range)
    z = rng.uniform(*tcfg.alt_range)
    return np.array([d * math.cos(az), d * math.sin(az), z])


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def sample_trajectory(tcfg: TrajectoryConfig, rng: np.random.Generator) -> list[UAVState]:
    """Turn-rate limited waypoint flight at constant speed.

    Heading steers toward the active waypoint by at most ``max_turn_rate``
    per second, climb is clipped to ``max_climb_rate``.  Posture is banked
    with the turn, tilted with speed and jittered uniformly.
    """
    tcfg.validate()
    dt = tcfg.step
    explicit = [np.asarray(w, dtype=np.float64) for w in tcfg.waypoints] if tcfg.waypoints else None
    pos = np.asarray(tcfg.start, dtype=np.float64) if tcfg.start is not None else _sample_waypoint(tcfg, rng)
    wp_idx = 0
    target = explicit[0] if explicit else _sample_waypoint(tcfg, rng)
    to = target - pos
    heading = math.atan2(to[1], to[0]) if np.hypot(to[0], to[1]) > 0 else 0.0

    # a waypoint is reached once it lies within one step of travel, so coarse steps cannot overshoot forever
    capture = max(tcfg.waypoint_radius, tcfg.speed * dt)
    states = []
    for i in range(tcfg.n_steps):
        to = target - pos
        horiz = float(np.hypot(to[0], to[1]))
        if horiz < capture and tcfg.speed > 0:
            if explicit:
                wp_idx = min(wp_idx + 1, len(explicit) - 1)
                target = explicit[wp_idx]
            else:
                target = _sample_waypoint(tcfg, rng)
            to = target - pos
            horiz = float(np.hypot(to[0], to[1]))
        desired = math.atan2(to[1], to[0]) if horiz > 0 else heading
        max_turn = tcfg.max_turn_rate * dt
        turn = float(np.clip(_wrap_angle(desired - heading), -max_turn, max_turn))
        heading = _wrap_angle(heading + turn)
        if horiz < capture and explicit and wp_idx == len(explicit) - 1:
            v_h = min(tcfg.speed, horiz / dt)
        else:
            v_h = tcfg.speed
        vz = float(np.clip(to[2] / dt, -tcfg.max_climb_rate, tcfg.max_climb_rate)) if tcfg.speed > 0 else 0.0
        vel = np.array([v_h * math.cos(heading), v_h * math.sin(heading), vz])
        jitter = rng.uniform(-tcfg.posture_jitter, tcfg.posture_jitter, size=3)
        roll = tcfg.bank_gain * turn / dt
        pitch = -tcfg.tilt_gain * v_h
        yaw = heading
        posture = np.array([roll, pitch, yaw]) + jitter
        states.append(UAVState(position=pos.copy(), velocity=vel, posture=posture, time=i * dt))
        pos = pos + vel * dt
        pos[2] = max(pos[2], 0.0)
    return states


# ---------------------------------------------------------------- channel


def synth_channel(state: UAVState, cfg: ChannelConfig, rng: np.random.Generator) -> ChannelRealization:
    """Geometric Rician multipath channel on K subcarriers.

    The LoS path arrives from the UAV's direction cosine; L NLoS paths have
    uniform random direction cosines, complex Gaussian gains and exponential
    excess delays with mean ``delay_spread``.  Every path shares the free
    space amplitude lambda / (4 pi r) and the common propagation delay r / c.
    """
    cfg.validate()
    p = np.asarray(state.position, dtype=np.float64)
    r = float(np.linalg.norm(p))
    if r == 0.0:
        raise DegenerateGeometryError("UAV coincides with the base station")
    u_los = p[1] / r
    amp = cfg.wavelength / (4.0 * math.pi * r)
    if math.isinf(cfg.rician_K_dB) and cfg.rician_K_dB > 0:
        k_lin = math.inf
    else:
        k_lin = 10.0 ** (cfg.rician_K_dB / 10.0)
    los_w = 1.0 if math.isinf(k_lin) else math.sqrt(k_lin / (k_lin + 1.0))
    nlos_w = 0.0 if math.isinf(k_lin) else math.sqrt(1.0 / (k_lin + 1.0))

    # draws happen unconditionally so the stream layout does not depend on K
    u_nlos = rng.uniform(-1.0, 1.0, size=cfg.L)
    g_nlos = (rng.standard_normal(cfg.L) + 1j * rng.standard_normal(cfg.L)) / math.sqrt(2.0 * max(cfg.L, 1))
    tau_nlos = rng.exponential(cfg.delay_spread, size=cfg.L) if cfg.delay_spread > 0 else np.zeros(cfg.L)

    k = np.arange(cfg.K)
    df = cfg.subcarrier_spacing_hz
    common = np.exp(-1j * 2.0 * math.pi * k * df * r / SPEED_OF_LIGHT)  # (K,)
    h = los_w * np.outer(np.ones(cfg.K), steering_vector(u_los, cfg.M, cfg.antenna_spacing))
    if cfg.L and nlos_w > 0:
        a = steering_vector(u_nlos, cfg.M, cfg.antenna_spacing)  # (L, M)
        phase = np.exp(-1j * 2.0 * math.pi * np.outer(k * df, tau_nlos))  # (K, L)
        h = h + nlos_w * (phase * g_nlos) @ a
    h = amp * common[:, None] * h
    return ChannelRealization(h=h, meta=state)


def avg_snr(h, f: np.ndarray, P: float, sigma2: float) -> float:
    """(1/K) sum_k (P / sigma2) |h_k^H f|^2."""
    hk = h.h if isinstance(h, ChannelRealization) else np.asarray(h)
    f = np.asarray(f)
    if hk.ndim != 2 or f.ndim != 1 or hk.shape[1] != f.shape[0]:
        raise DimensionError(f"channel {hk.shape} incompatible with beam {f.shape}")
    gains = np.abs(hk.conj() @ f) ** 2
    return float((P / sigma2) * gains.mean())


def beam_snrs(h, cb: Codebook, P: float, sigma2: float) -> np.ndarray:
    hk = h.h if isinstance(h, ChannelRealization) else np.asarray(h)
    if hk.shape[1] != cb.M:
        raise DimensionError(f"channel {hk.shape} incompatible with codebook M={cb.M}")
    gains = np.abs(hk.conj() @ cb.vectors.T) ** 2  # (K, Q)
    return (P / sigma2) * gains.mean(axis=0)


def oracle_beam(h, cb: Codebook, P: float, sigma2: float) -> int:
    """Index of the beam with the highest average SNR; ties go to the lowest index."""
    return int(np.argmax(beam_snrs(h, cb, P, sigma2)))
