"""Indoor deployment generation and the physical constants of the system.

Everything that is a "network given" lives here: node positions, antenna
geometries, the dual-band plan (THz fronthaul + sub-6 GHz access), power
budgets and noise accounting, and the THz multipath constants.  All defaults
can be overridden through a YAML config file (see `load_config`).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml

SPEED_OF_LIGHT = 299792458.0


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def dbm_to_watt(x_dbm):
    return 10.0 ** ((np.asarray(x_dbm, dtype=float) - 30.0) / 10.0)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UpaGeometry:
    """Uniform planar array: rows x cols elements, spacing in wavelengths."""

    rows: int
    cols: int
    element_spacing: float = 0.5

    @property
    def n_elements(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class BandPlan:
    """Dual-band plan: THz fronthaul grid plus the sub-6 GHz access band."""

    fronthaul_center_hz: float = 200e9
    fronthaul_bandwidth_hz: float = 1e9
    n_fronthaul_subcarriers: int = 32
    access_center_hz: float = 5e9
    access_bandwidth_hz: float = 100e6
    n_access_subcarriers: int = 1

    @property
    def b_fh(self) -> float:
        """Per-subcarrier fronthaul bandwidth in Hz."""
        return self.fronthaul_bandwidth_hz / self.n_fronthaul_subcarriers

    def subcarrier_frequencies(self) -> np.ndarray:
        """Center frequency of every fronthaul subcarrier, grid centered on the carrier."""
        m = np.arange(self.n_fronthaul_subcarriers, dtype=float)
        offset = m - (self.n_fronthaul_subcarriers - 1) / 2.0
        return self.fronthaul_center_hz + offset * self.b_fh


@dataclass(frozen=True)
class PowerBudget:
    """Transmit budgets and noise accounting.

    Noise variances are derived per link as density x bandwidth: the two
    fronthaul links see the per-subcarrier bandwidth b_fh, the access link the
    full access bandwidth, so the three variances generally differ.  Residual
    self-interference at a computational AP is Gaussian with variance
    ``si_offset`` relative to the fronthaul noise floor.
    """

    p_cpu: float = float(dbm_to_watt(35.0))
    p_ap: float = float(dbm_to_watt(45.0))
    noise_density: float = float(dbm_to_watt(-174.0))  # W/Hz
    si_offset_db: float = -10.0
    shadow_sigma_db: float = 4.0


@dataclass(frozen=True)
class ThzRayParams:
    """Constants of the THz tapped-delay-line model."""

    n_rays: int = 3
    n_taps: int = 6
    sample_interval: float = 7.8e-12
    cp_length: int = 16
    absorption: float = 0.0033          # 1/m
    fresnel_coeff: float = 0.15
    roughness: float = 0.088e-3         # surface roughness in meters
    tx_gain_dbi: float = 20.0
    rx_gain_dbi: float = 20.0

    @property
    def tx_gain(self) -> float:
        return float(db_to_linear(self.tx_gain_dbi))

    @property
    def rx_gain(self) -> float:
        return float(db_to_linear(self.rx_gain_dbi))


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to draw one random deployment."""

    area_x: float = 100.0
    area_y: float = 100.0
    roof_height: float = 10.0
    n_aps: int = 32
    n_devices: int = 8
    ap_height_min: float = 4.0
    ap_height_max: float = 6.0
    device_height: float = 1.0
    sc_cap_height: float = 5.0          # height of synthetic grid-cell CAPs
    cpu_rows: int = 8
    cpu_cols: int = 8
    ap_rows: int = 4
    ap_cols: int = 4
    u_max: int = 2
    c_max: int = 4
    band: BandPlan = field(default_factory=BandPlan)
    power: PowerBudget = field(default_factory=PowerBudget)
    ray: ThzRayParams = field(default_factory=ThzRayParams)


@dataclass(frozen=True)
class NetworkScenario:
    """One concrete deployment.  Immutable after construction."""

    cpu_position: np.ndarray
    ap_positions: np.ndarray            # (Q, 3)
    device_positions: np.ndarray        # (U, 3)
    cpu_array: UpaGeometry
    ap_array: UpaGeometry
    band: BandPlan
    power: PowerBudget
    ray: ThzRayParams
    u_max: int
    c_max: int
    rng_seed: int
    area_x: float
    area_y: float
    ap_height_min: float
    ap_height_max: float
    device_height: float
    sc_cap_height: float

    @property
    def n_aps(self) -> int:
        return self.ap_positions.shape[0]

    @property
    def n_devices(self) -> int:
        return self.device_positions.shape[0]

    @property
    def sigma2_fh(self) -> float:
        """Per-subcarrier noise variance on either fronthaul link (W)."""
        return self.power.noise_density * self.band.b_fh

    @property
    def sigma2_ad(self) -> float:
        """Noise variance on the access link (W)."""
        return self.power.noise_density * self.band.access_bandwidth_hz

    @property
    def sigma2_si(self) -> float:
        """Residual self-interference variance at a transmitting CAP (W)."""
        return float(db_to_linear(self.power.si_offset_db)) * self.sigma2_fh


# ---------------------------------------------------------------------------
# Generation and validation
# ---------------------------------------------------------------------------

def generate_scenario(config: ScenarioConfig, seed: int) -> NetworkScenario:
    """Draw a random indoor deployment, deterministic in ``seed``.

    The CPU sits at the area center at roof height, APs are uniform in the
    xy-plane with heights uniform in [ap_height_min, ap_height_max], devices
    are uniform on the floor plane at ``device_height``.
    """
    if config.area_x <= 0 or config.area_y <= 0:
        raise ValueError("area dimensions must be positive")
    if config.n_aps < 1:
        raise ValueError("need at least one AP")
    if config.n_devices < 1:
        raise ValueError("need at least one device")

    rng = np.random.default_rng(seed)
    ap_xy = rng.uniform([0.0, 0.0], [config.area_x, config.area_y], size=(config.n_aps, 2))
    ap_z = rng.uniform(config.ap_height_min, config.ap_height_max, size=config.n_aps)
    dev_xy = rng.uniform([0.0, 0.0], [config.area_x, config.area_y], size=(config.n_devices, 2))
    dev_z = np.full(config.n_devices, config.device_height)

    return NetworkScenario(
        cpu_position=np.array([config.area_x / 2.0, config.area_y / 2.0, config.roof_height]),
        ap_positions=np.column_stack([ap_xy, ap_z]),
        device_positions=np.column_stack([dev_xy, dev_z]),
        cpu_array=UpaGeometry(config.cpu_rows, config.cpu_cols),
        ap_array=UpaGeometry(config.ap_rows, config.ap_cols),
        band=config.band,
        power=config.power,
        ray=config.ray,
        u_max=config.u_max,
        c_max=config.c_max,
        rng_seed=seed,
        area_x=config.area_x,
        area_y=config.area_y,
        ap_height_min=config.ap_height_min,
        ap_height_max=config.ap_height_max,
        device_height=config.device_height,
        sc_cap_height=config.sc_cap_height,
    )


def validate_scenario(s: NetworkScenario) -> list[str]:
    """Return a list of invariant violations; empty means the scenario is sound."""
    bad = []
    for arr in (s.cpu_array, s.ap_array):
        if arr.rows * arr.cols < 1:
            bad.append(f"array {arr.rows}x{arr.cols} has no elements")
        if arr.element_spacing <= 0:
            bad.append("array element spacing must be > 0")
    if s.n_aps < 1:
        bad.append("Q must be >= 1")
    if s.n_devices < 1:
        bad.append("U must be >= 1")
    if s.u_max < 1:
        bad.append("U_max must be >= 1")
    if s.c_max < 1:
        bad.append("C_max must be >= 1")
    if s.band.b_fh <= 0:
        bad.append("fronthaul subcarrier bandwidth must be > 0")
    if s.band.fronthaul_center_hz <= s.band.access_center_hz:
        bad.append("fronthaul carrier must sit above the access carrier")
    if s.power.p_cpu <= 0 or s.power.p_ap <= 0:
        bad.append("power budgets must be > 0")
    if s.power.noise_density <= 0:
        bad.append("noise density must be > 0")
    for q, pos in enumerate(s.ap_positions):
        if not (0.0 <= pos[0] <= s.area_x and 0.0 <= pos[1] <= s.area_y):
            bad.append(f"AP {q} lies outside the area")
        if not (s.ap_height_min <= pos[2] <= s.ap_height_max):
            bad.append(f"AP {q} height {pos[2]:.3g} outside [{s.ap_height_min}, {s.ap_height_max}]")
    for u, pos in enumerate(s.device_positions):
        if not (0.0 <= pos[0] <= s.area_x and 0.0 <= pos[1] <= s.area_y):
            bad.append(f"device {u} lies outside the area")
        if pos[2] != s.device_height:
            bad.append(f"device {u} height {pos[2]:.3g} != {s.device_height}")
    return bad


# ---------------------------------------------------------------------------
# Config file round trip
# ---------------------------------------------------------------------------

_NESTED = {"band": BandPlan, "power": PowerBudget, "ray": ThzRayParams}


def config_to_dict(config: ScenarioConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(data: dict) -> ScenarioConfig:
    """Build a ScenarioConfig from a (possibly partial) nested dict.

    Unknown keys are rejected so that config-file typos fail loudly.
    """
    data = dict(data or {})
    kwargs = {}
    for name, cls in _NESTED.items():
        if name in data:
            sub = data.pop(name)
            allowed = {f.name for f in dataclasses.fields(cls)}
            unknown = set(sub) - allowed
            if unknown:
                raise ValueError(f"unknown {name} keys: {sorted(unknown)}")
            kwargs[name] = cls(**sub)
    allowed = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    kwargs.update(data)
    return ScenarioConfig(**kwargs)


def load_config(path) -> ScenarioConfig:
    """Load a scenario config from a YAML file; omitted keys keep their defaults."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if "scenario" in data:
        data = data["scenario"]
    return config_from_dict(data)
