"""Scenario configuration: JSON documents describing one closed-loop run.

A scenario pins everything a run needs: plant parameters, the scripted
operator trajectory, the time-tagged environment schedule, observer
selection and perturbation switches, coupling gains, estimator weights,
delay law, seed, duration and step.  Builders turn a config plus a fuzzy
model into a ready :class:`teleob.teleop.TeleopSimulation`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .fuzzy import Type2FuzzyModel
from .mhe import MheConfig, MovingHorizonEstimator
from .observers import (ForceObserverBank, NominalArmModel,
                        NonlinearDisturbanceObserver, ReactionForceObserver,
                        VelocityObserver)
from .plant import DisturbanceProcess, Environment, OperatorModel, PlantModel, PlantState
from .teleop import (BoundedDelayProcess, DelayChannel, NdobBank, NullBank,
                     ProposedBank, RfobBank, TeleopGains, TeleopSide,
                     TeleopSimulation, consistent_gains)

OBSERVER_CHOICES = ("proposed", "rfob", "ndob", "none")
PERTURB_CHOICES = ("none", "drop-gravity", "mass-x2")

# Wall presets: stiffness, damping (per-joint units).
WALL_PRESETS = {"hard": (200.0, 1.0), "soft": (30.0, 0.5)}


def reference_weights(n: int) -> dict:
    """Estimator weight diagonals scaled down from the 3-joint reference set."""
    prior = [15.0, 15.0, 15.0][:n] + [40.0, 40.0, 40.0][:n]
    meas = [30.0, 30.0, 30.0][:n] + [100.0, 100.0, 100.0][:n]
    lam = [0.35, 0.3, 0.4][:n]
    return {"prior": prior, "lam": lam, "meas": meas}


@dataclass
class SegmentConfig:
    """One schedule segment: [start, end) with an environment kind."""

    start: float
    end: float
    kind: str = "free"                    # free | soft | hard
    q_wall: list | None = None            # entries may be null (no wall there)
    stiffness: float | None = None
    damping: float | None = None

    def environment(self, n: int) -> Environment:
        if self.kind == "free":
            return Environment(kind="free")
        if self.kind not in WALL_PRESETS:
            raise ConfigurationError(f"unknown segment kind {self.kind!r}")
        k_e, b_e = WALL_PRESETS[self.kind]
        if self.stiffness is not None:
            k_e = self.stiffness
        if self.damping is not None:
            b_e = self.damping
        if self.q_wall is None:
            raise ConfigurationError(f"{self.kind} segment needs q_wall")
        wall = np.array([np.inf if w is None else float(w) for w in self.q_wall])
        if wall.shape != (n,):
            raise ConfigurationError(f"q_wall must list {n} entries")
        return Environment(kind="wall", q_wall=wall, stiffness=k_e, damping=b_e)


@dataclass
class ScenarioConfig:
    dof: int = 2
    duration: float = 25.0
    dt: float = 0.001
    seed: int = 0
    observer: str = "proposed"
    perturb: str = "none"
    model_path: str | None = None

    # plant
    masses: list = field(default_factory=lambda: [0.8, 0.6])
    lengths: list = field(default_factory=lambda: [0.35, 0.3])
    gravity: float = 9.81
    viscous: list = field(default_factory=lambda: [0.15, 0.12])
    coulomb: list = field(default_factory=lambda: [0.01, 0.008])
    q_noise_std: float = 1e-4
    v_noise_std: float = 0.01
    disturbance_amp: float = 0.0
    q0: list = field(default_factory=lambda: [-1.5708, 0.3])

    # operator
    op_times: list = field(default_factory=list)
    op_waypoints: list = field(default_factory=list)
    op_kp: float = 4.0
    op_kd: float = 1.0
    op_tau_max: float = 6.0

    # schedule
    schedule: list = field(default_factory=list)

    # coupling gains (scalars expanded to diagonal matrices)
    k_m: float = 0.1
    k_s: float = 1.0
    b_m: float = 0.2
    b_s: float = 0.2
    k_h: float = 0.2
    k_e: float = 3.0

    # delays
    delay_base: float = 0.1
    delay_variation: float = 0.05
    delay_max: float = 0.15

    # estimator
    mhe_horizon: int = 10
    mhe_prior_diag: list | None = None
    mhe_lam_diag: list | None = None
    mhe_meas_diag: list | None = None
    iss_diagnostic: bool = True

    # observers
    vel_obs_k1: float = 100.0
    vel_obs_k2: float = 10.0
    # Euler stability of the torque-estimate loop needs
    # dt * sigma / min_eig(M) * (1 + K_e) well below one.
    force_sigma: float = 4.0
    rfob_bandwidth: float = 500.0
    rfob_inertia: list | None = None
    ndob_gain: float = 50.0

    # metrics
    steady_fraction: float = 0.5

    def __post_init__(self):
        if self.observer not in OBSERVER_CHOICES:
            raise ConfigurationError(f"observer must be one of {OBSERVER_CHOICES}")
        if self.perturb not in PERTURB_CHOICES:
            raise ConfigurationError(f"perturb must be one of {PERTURB_CHOICES}")
        if self.duration <= 0.0 or self.dt <= 0.0:
            raise ConfigurationError("duration and dt must be positive")
        ticks = self.duration / self.dt
        if abs(ticks - round(ticks)) > 1e-9:
            raise ConfigurationError("duration must be an integer number of steps")
        self.schedule = [SegmentConfig(**s) if isinstance(s, dict) else s
                         for s in self.schedule]
        if self.schedule:
            if abs(self.schedule[0].start) > 1e-9:
                raise ConfigurationError("schedule must start at t = 0")
            for prev, cur in zip(self.schedule, self.schedule[1:]):
                if abs(prev.end - cur.start) > 1e-9:
                    raise ConfigurationError(
                        "schedule segments must be contiguous and non-overlapping")
            if self.schedule[-1].end < self.duration - 1e-9:
                raise ConfigurationError("schedule must cover the full duration")
        weights = reference_weights(self.dof)
        if self.mhe_prior_diag is None:
            self.mhe_prior_diag = weights["prior"]
        if self.mhe_lam_diag is None:
            self.mhe_lam_diag = weights["lam"]
        if self.mhe_meas_diag is None:
            self.mhe_meas_diag = weights["meas"]

    @property
    def ticks(self) -> int:
        return int(round(self.duration / self.dt))

    # -- document I/O ------------------------------------------------------

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["schedule"] = [asdict(s) for s in self.schedule]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**doc)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"scenario file is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    # -- component builders --------------------------------------------------

    def plant_model(self) -> PlantModel:
        return PlantModel(masses=np.asarray(self.masses),
                          lengths=np.asarray(self.lengths),
                          gravity=self.gravity,
                          viscous=np.asarray(self.viscous),
                          coulomb=np.asarray(self.coulomb),
                          disturbance_amp=self.disturbance_amp,
                          q_noise_std=self.q_noise_std,
                          v_noise_std=self.v_noise_std)

    def operator_model(self) -> OperatorModel:
        if not self.op_times:
            raise ConfigurationError("scenario has no operator waypoints")
        return OperatorModel(times=np.asarray(self.op_times),
                             waypoints=np.asarray(self.op_waypoints),
                             kp=self.op_kp, kd=self.op_kd,
                             tau_max=self.op_tau_max)

    def gains(self) -> TeleopGains:
        return consistent_gains(self.dof, k_m=self.k_m, k_s=self.k_s,
                                b_m=self.b_m, b_s=self.b_s, k_h=self.k_h,
                                k_e=self.k_e, t1_max=self.delay_max,
                                t2_max=self.delay_max)

    def mhe_config(self) -> MheConfig:
        return MheConfig(horizon=self.mhe_horizon,
                         prior_weight=np.diag(self.mhe_prior_diag),
                         lam_weight=np.diag(self.mhe_lam_diag),
                         meas_weight=np.diag(self.mhe_meas_diag))

    def environment_lookup(self):
        """Callable t -> Environment honouring segment boundaries exactly."""
        n = self.dof
        if not self.schedule:
            free = Environment(kind="free")
            return lambda t: free
        envs = [s.environment(n) for s in self.schedule]
        bounds = [s.end for s in self.schedule]

        def env_at(t: float) -> Environment:
            for end, env in zip(bounds, envs):
                if t < end - 1e-12:
                    return env
            return envs[-1]

        return env_at

    def segment_mask(self, times: np.ndarray, kinds) -> np.ndarray:
        """Boolean mask of samples whose segment kind is in `kinds`."""
        mask = np.zeros(times.shape[0], dtype=bool)
        if not self.schedule:
            if "free" in kinds:
                mask[:] = True
            return mask
        for seg in self.schedule:
            if seg.kind in kinds:
                mask |= (times >= seg.start - 1e-12) & (times < seg.end - 1e-12)
        return mask


def _make_bank(config: ScenarioConfig, gains_triple, plant: PlantModel):
    n = config.dof
    kind = config.observer
    if kind == "proposed":
        return ProposedBank(ForceObserverBank(n, config.force_sigma, gains_triple))
    if kind == "rfob":
        inertia = (config.rfob_inertia if config.rfob_inertia is not None
                   else [0.25] * n)
        return RfobBank(ReactionForceObserver(inertia, config.rfob_bandwidth))
    if kind == "ndob":
        nominal = NominalArmModel(
            plant,
            drop_gravity=(config.perturb == "drop-gravity"),
            mass_scale=(2.0 if config.perturb == "mass-x2" else 1.0))
        return NdobBank(NonlinearDisturbanceObserver(
            n, config.ndob_gain * np.eye(n), nominal))
    return NullBank(n)


def build_simulation(config: ScenarioConfig,
                     model: Type2FuzzyModel) -> TeleopSimulation:
    """Assemble all components of one run from a scenario and a model."""
    n = config.dof
    if model.dof != n:
        raise ConfigurationError(
            f"model dof {model.dof} does not match scenario dof {n}")
    plant = config.plant_model()
    gains = config.gains()
    mhe_cfg = config.mhe_config()
    seeds = np.random.SeedSequence(config.seed).spawn(6)
    q0 = np.asarray(config.q0, dtype=float)

    def make_side(noise_seed, dist_seed, bank_gains) -> TeleopSide:
        return TeleopSide(
            plant=plant,
            state=PlantState(q=q0.copy(), qdot=np.zeros(n)),
            vel_obs=VelocityObserver(n, config.vel_obs_k1, config.vel_obs_k2,
                                     q0=q0),
            estimator=MovingHorizonEstimator(mhe_cfg,
                                             iss_diagnostic=config.iss_diagnostic),
            model=model,
            bank=_make_bank(config, bank_gains, plant),
            noise_rng=np.random.default_rng(noise_seed),
            disturbance=DisturbanceProcess(n, config.disturbance_amp, dist_seed))

    master = make_side(seeds[0], seeds[1], gains.bank_h)
    slave = make_side(seeds[2], seeds[3], gains.bank_e)
    chan_fwd = DelayChannel(BoundedDelayProcess(
        config.delay_base, config.delay_variation, config.delay_max,
        seeds[4]), config.dt)
    chan_bwd = DelayChannel(BoundedDelayProcess(
        config.delay_base, config.delay_variation, config.delay_max,
        seeds[5]), config.dt)

    return TeleopSimulation(master=master, slave=slave, gains=gains,
                            operator=config.operator_model(),
                            env_at=config.environment_lookup(),
                            dt=config.dt, chan_fwd=chan_fwd, chan_bwd=chan_bwd)


# ---------------------------------------------------------------------------
# Stock scenarios
# ---------------------------------------------------------------------------

def free_hard_scenario(seed: int = 0, duration: float = 25.0,
                       observer: str = "proposed") -> ScenarioConfig:
    """Free motion followed by a hard-wall press on joint 0, then release."""
    rest = [-1.5708, 0.3]
    wall = rest[0] + 0.25
    swing = [
        (0.0, [rest[0], rest[1]]),
        (3.0, [rest[0] + 0.35, rest[1] + 0.25]),
        (6.0, [rest[0] - 0.3, rest[1] - 0.2]),
        (9.0, [rest[0] + 0.35, rest[1] + 0.25]),
        (12.0, [rest[0] - 0.3, rest[1] - 0.2]),
        (15.0, [rest[0] + 0.2, rest[1] + 0.15]),
        (17.0, [rest[0], rest[1]]),
        (19.0, [wall + 0.45, rest[1]]),
        (22.0, [wall + 0.45, rest[1]]),
        (23.5, [rest[0], rest[1]]),
        (25.0, [rest[0], rest[1]]),
    ]
    frac = duration / 25.0
    times = [t * frac for t, _ in swing]
    waypoints = [w for _, w in swing]
    schedule = [
        SegmentConfig(start=0.0, end=19.0 * frac, kind="free"),
        SegmentConfig(start=19.0 * frac, end=23.0 * frac, kind="hard",
                      q_wall=[wall, None]),
        SegmentConfig(start=23.0 * frac, end=duration, kind="free"),
    ]
    return ScenarioConfig(seed=seed, duration=duration, observer=observer,
                          op_times=times, op_waypoints=waypoints,
                          schedule=schedule)


def soft_hard_scenario(seed: int = 0, duration: float = 24.0,
                       observer: str = "proposed") -> ScenarioConfig:
    """Free motion, then a soft press, then a deeper hard press."""
    rest = [-1.5708, 0.3]
    wall = rest[0] + 0.25
    frac = duration / 24.0
    swing = [
        (0.0, [rest[0], rest[1]]),
        (2.5, [rest[0] + 0.3, rest[1] + 0.2]),
        (5.0, [rest[0] - 0.25, rest[1] - 0.15]),
        (7.0, [rest[0], rest[1]]),
        (9.0, [wall + 0.35, rest[1]]),
        (14.0, [wall + 0.35, rest[1]]),
        (15.5, [wall + 0.5, rest[1]]),
        (21.0, [wall + 0.5, rest[1]]),
        (22.5, [rest[0], rest[1]]),
        (24.0, [rest[0], rest[1]]),
    ]
    times = [t * frac for t, _ in swing]
    waypoints = [w for _, w in swing]
    schedule = [
        SegmentConfig(start=0.0, end=8.0 * frac, kind="free"),
        SegmentConfig(start=8.0 * frac, end=15.0 * frac, kind="soft",
                      q_wall=[wall, None]),
        SegmentConfig(start=15.0 * frac, end=duration, kind="hard",
                      q_wall=[wall, None]),
    ]
    return ScenarioConfig(seed=seed, duration=duration, observer=observer,
                          op_times=times, op_waypoints=waypoints,
                          schedule=schedule)
