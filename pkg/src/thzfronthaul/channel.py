"""Channel synthesis: per-subcarrier THz fronthaul vectors and sub-6 GHz access vectors.

The THz links follow a tapped-delay-line model: a deterministic LoS component
(spreading loss, molecular absorption, array steering toward the receiver)
plus ``n_rays`` reflected components with random departure angles, delays and
phases.  Subcarrier-domain vectors are the finite DFT of the taps.  All
randomness is a pure function of (inputs, seed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .scenario import SPEED_OF_LIGHT, NetworkScenario, UpaGeometry, ThzRayParams


# ---------------------------------------------------------------------------
# Array response and elementary gains
# ---------------------------------------------------------------------------

def upa_response(geom: UpaGeometry, azimuth: float, elevation: float) -> np.ndarray:
    """Unit-norm UPA steering vector with half-wavelength phase progression."""
    if not (np.isfinite(azimuth) and np.isfinite(elevation)):
        raise ValueError("angles must be finite")
    u = np.sin(azimuth) * np.cos(elevation)
    v = np.sin(elevation)
    r = np.arange(geom.rows)[:, None]
    c = np.arange(geom.cols)[None, :]
    phase = 2.0 * np.pi * geom.element_spacing * (r * u + c * v)
    a = np.exp(1j * phase).ravel()
    return a / np.sqrt(geom.n_elements)


def raised_cosine(t: np.ndarray, ts: float, rolloff: float = 1.0) -> np.ndarray:
    """Unit-peak raised-cosine pulse p(t); the removable singularity at
    t = +-ts/(2*rolloff) is replaced by its analytic limit."""
    x = np.asarray(t, dtype=float) / ts
    out = np.sinc(x) * np.cos(np.pi * rolloff * x)
    den = 1.0 - (2.0 * rolloff * x) ** 2
    sing = np.isclose(den, 0.0, atol=1e-12)
    out = np.where(sing, np.pi / 4.0 * np.sinc(1.0 / (2.0 * rolloff)), out / np.where(sing, 1.0, den))
    return out


def path_gain_los(f_hz, d_m, k_abs) -> np.ndarray:
    """Linear LoS power gain: free-space spreading times molecular absorption."""
    f = np.asarray(f_hz, dtype=float)
    if np.any(f <= 0):
        raise ValueError("frequency must be > 0")
    if np.any(np.asarray(d_m) <= 0):
        raise ValueError("distance must be > 0 (spreading loss is singular at d=0)")
    spread = (SPEED_OF_LIGHT / (4.0 * np.pi * f * d_m)) ** 2
    return spread * np.exp(-k_abs * d_m)


def reflection_coeff(f_hz, params: ThzRayParams) -> np.ndarray:
    """Amplitude factor of one reflected ray: Fresnel coefficient times the
    Rayleigh roughness attenuation exp(-g/2), g = (4 pi sigma f / c)^2."""
    g = (4.0 * np.pi * params.roughness * np.asarray(f_hz, dtype=float) / SPEED_OF_LIGHT) ** 2
    return params.fresnel_coeff * np.exp(-g / 2.0)


def nlos_gain(f_hz, d_m, params: ThzRayParams) -> np.ndarray:
    """Linear power gain of one reflected ray."""
    return reflection_coeff(f_hz, params) ** 2 * path_gain_los(f_hz, d_m, params.absorption)


def large_scale_fading_db(d_m, shadow_draw, sigma_sh_db) -> np.ndarray:
    """Access-link large-scale fading in dB with log-normal shadowing."""
    d = np.asarray(d_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be > 0")
    return -30.5 - 36.7 * np.log10(d) + sigma_sh_db * np.asarray(shadow_draw, dtype=float)


def access_channel(beta: float, n_ap: int, rng) -> np.ndarray:
    """Access channel vector: sqrt(beta) times i.i.d. unit-variance complex draws."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    rng = np.random.default_rng(rng)
    z = (rng.standard_normal(n_ap) + 1j * rng.standard_normal(n_ap)) / np.sqrt(2.0)
    return np.sqrt(beta) * z


# ---------------------------------------------------------------------------
# THz tapped-delay-line synthesis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RayDraws:
    """Random reflected-ray parameters, fixed per link."""

    delays: np.ndarray
    azimuths: np.ndarray
    elevations: np.ndarray
    phases: np.ndarray


@dataclass(frozen=True)
class TapChannel:
    taps: np.ndarray            # (n_taps, n_tx_elements)
    link_distance: float


def draw_rays(params: ThzRayParams, rng) -> RayDraws:
    rng = np.random.default_rng(rng)
    n = params.n_rays
    return RayDraws(
        delays=rng.uniform(0.0, params.cp_length * params.sample_interval, size=n),
        azimuths=rng.uniform(-np.pi, np.pi, size=n),
        elevations=rng.uniform(-np.pi / 2.0, np.pi / 2.0, size=n),
        phases=rng.uniform(0.0, 2.0 * np.pi, size=n),
    )


def _los_angles(tx_pos, rx_pos):
    d = np.asarray(rx_pos, dtype=float) - np.asarray(tx_pos, dtype=float)
    az = np.arctan2(d[1], d[0])
    el = np.arctan2(d[2], np.hypot(d[0], d[1]))
    return az, el


def thz_tap_channel(geom: UpaGeometry, tx_pos, rx_pos, params: ThzRayParams,
                    f_hz: float, rays: RayDraws | None = None, seed=None) -> TapChannel:
    """Delay-domain THz channel toward a single-antenna receiver.

    The LoS delay is folded onto tap 0 (receiver timing advance), so with a
    Nyquist pulse the LoS component occupies tap 0 exactly.  Reflected rays
    land at their drawn delays inside the cyclic-prefix window.
    """
    d = float(np.linalg.norm(np.asarray(rx_pos, dtype=float) - np.asarray(tx_pos, dtype=float)))
    if d <= 0:
        raise ValueError("tx and rx positions must be distinct")
    if rays is None:
        rays = draw_rays(params, np.random.default_rng(seed))

    n = geom.n_elements
    gain_amp = np.sqrt(params.tx_gain * params.rx_gain)
    t_grid = np.arange(params.n_taps) * params.sample_interval

    az, el = _los_angles(tx_pos, rx_pos)
    alos = np.sqrt(path_gain_los(f_hz, d, params.absorption)) * np.exp(-2j * np.pi * f_hz * d / SPEED_OF_LIGHT)
    taps = (np.sqrt(n) * alos * gain_amp) * np.outer(raised_cosine(t_grid, params.sample_interval),
                                                     upa_response(geom, az, el))

    if params.n_rays > 0:
        amp = reflection_coeff(f_hz, params) * np.abs(alos)
        steer = np.stack([upa_response(geom, a, e) for a, e in zip(rays.azimuths, rays.elevations)])
        pulse = raised_cosine(t_grid[:, None] - rays.delays[None, :], params.sample_interval)
        coeff = np.sqrt(n / params.n_rays) * gain_amp * amp * np.exp(1j * rays.phases)
        taps = taps + np.einsum("ti,i,ik->tk", pulse, coeff, steer)
    return TapChannel(taps=taps, link_distance=d)


def thz_subcarrier_channel(taps: TapChannel, m: int, n_sc: int) -> np.ndarray:
    """Subcarrier-m channel vector: finite DFT of the delay taps."""
    if not 0 <= m < n_sc:
        raise IndexError(f"subcarrier {m} outside [0, {n_sc})")
    t = np.arange(taps.taps.shape[0])
    twiddle = np.exp(-2j * np.pi * m * t / n_sc)
    return twiddle @ taps.taps


def link_subcarrier_channels(geom: UpaGeometry, tx_pos, rx_pos, params: ThzRayParams,
                             band, rng) -> np.ndarray:
    """All fronthaul subcarrier vectors of one link, shape (n_sc, n_elements).

    Ray parameters are drawn once per link; the deterministic per-frequency
    factors (absorption, spreading, reflection loss, carrier phase) are then
    evaluated at every subcarrier's center frequency before the DFT.
    """
    rays = draw_rays(params, rng)
    freqs = band.subcarrier_frequencies()
    n_sc = len(freqs)
    out = np.empty((n_sc, geom.n_elements), dtype=complex)
    for m, f in enumerate(freqs):
        taps = thz_tap_channel(geom, tx_pos, rx_pos, params, f, rays=rays)
        out[m] = thz_subcarrier_channel(taps, m, n_sc)
    return out


# ---------------------------------------------------------------------------
# Per-trial channel container
# ---------------------------------------------------------------------------

@dataclass
class LosGainTable:
    """LoS amplitude gains at the carrier frequency, used for CAP selection."""

    cc_amp: np.ndarray          # (Q,) |alpha_LoS| CPU -> AP q
    ca_amp: np.ndarray          # (Q, Q) |alpha_LoS| AP q -> AP q'


@dataclass
class ChannelSet:
    """All channels of one Monte Carlo draw.

    ``cc[node]`` is the CPU->node THz channel (n_sc, N_cpu); ``ca[(tx, rx)]``
    the node->AP THz channel (n_sc, N_ap); ``access[(node, u)]`` the node->device
    sub-6 GHz vector (N_ap,) with large-scale gain ``beta[(node, u)]``.  Node ids
    0..Q-1 are the real APs; synthetic grid-cell CAPs get ids >= Q.
    """

    cc: dict
    ca: dict
    access: dict
    beta: dict
    seed: int


def _link_rng(seed, tag, a, b):
    return np.random.default_rng(np.random.SeedSequence((int(seed), tag, int(a), int(b))))


def build_channel_set(scenario: NetworkScenario, seed: int) -> ChannelSet:
    """Synthesize every link of one trial; deterministic given ``seed``.

    Each link gets an independent RNG derived from (seed, link id), so the set
    is reproducible regardless of synthesis order.
    """
    q_all = range(scenario.n_aps)
    cc = {q: link_subcarrier_channels(scenario.cpu_array, scenario.cpu_position,
                                      scenario.ap_positions[q], scenario.ray,
                                      scenario.band, _link_rng(seed, 0, 0, q))
          for q in q_all}
    ca = {}
    for tx in q_all:
        for rx in q_all:
            if tx == rx:
                continue
            ca[(tx, rx)] = link_subcarrier_channels(
                scenario.ap_array, scenario.ap_positions[tx], scenario.ap_positions[rx],
                scenario.ray, scenario.band, _link_rng(seed, 1, tx, rx))

    access = {}
    beta = {}
    n_ap = scenario.ap_array.n_elements
    for q in q_all:
        for u in range(scenario.n_devices):
            d = np.linalg.norm(scenario.ap_positions[q] - scenario.device_positions[u])
            z = _link_rng(seed, 2, q, u).standard_normal()
            b = 10.0 ** (large_scale_fading_db(d, z, scenario.power.shadow_sigma_db) / 10.0)
            beta[(q, u)] = float(b)
            access[(q, u)] = access_channel(b, n_ap, _link_rng(seed, 3, q, u))
    return ChannelSet(cc=cc, ca=ca, access=access, beta=beta, seed=seed)


def extend_channel_set(scenario: NetworkScenario, chset: ChannelSet,
                       cap_positions: np.ndarray, tag: int) -> ChannelSet:
    """Add synthetic CAP nodes (grid-cell centers) to a channel set.

    Returns a new set with node ids Q, Q+1, ... appended; ``tag`` keeps the
    derived seeds distinct between different grid layouts.
    """
    cc = dict(chset.cc)
    ca = dict(chset.ca)
    access = dict(chset.access)
    beta = dict(chset.beta)
    n_ap = scenario.ap_array.n_elements
    for k, pos in enumerate(cap_positions):
        node = scenario.n_aps + k
        cc[node] = link_subcarrier_channels(scenario.cpu_array, scenario.cpu_position, pos,
                                            scenario.ray, scenario.band,
                                            _link_rng(chset.seed, 10 + tag, 0, node))
        for rx in range(scenario.n_aps):
            ca[(node, rx)] = link_subcarrier_channels(scenario.ap_array, pos,
                                                      scenario.ap_positions[rx],
                                                      scenario.ray, scenario.band,
                                                      _link_rng(chset.seed, 20 + tag, node, rx))
        for u in range(scenario.n_devices):
            d = np.linalg.norm(pos - scenario.device_positions[u])
            z = _link_rng(chset.seed, 30 + tag, node, u).standard_normal()
            b = 10.0 ** (large_scale_fading_db(d, z, scenario.power.shadow_sigma_db) / 10.0)
            beta[(node, u)] = float(b)
            access[(node, u)] = access_channel(b, n_ap, _link_rng(chset.seed, 40 + tag, node, u))
    return ChannelSet(cc=cc, ca=ca, access=access, beta=beta, seed=chset.seed)


def los_gain_table(scenario: NetworkScenario) -> LosGainTable:
    """Deterministic LoS amplitudes at the carrier, CPU->AP and AP->AP."""
    fc = scenario.band.fronthaul_center_hz
    k = scenario.ray.absorption
    d_cc = np.linalg.norm(scenario.ap_positions - scenario.cpu_position, axis=1)
    cc_amp = np.sqrt(path_gain_los(fc, d_cc, k))
    diff = scenario.ap_positions[:, None, :] - scenario.ap_positions[None, :, :]
    d_ca = np.linalg.norm(diff, axis=2)
    ca_amp = np.zeros_like(d_ca)
    off = ~np.eye(scenario.n_aps, dtype=bool)
    ca_amp[off] = np.sqrt(path_gain_los(fc, d_ca[off], k))
    return LosGainTable(cc_amp=cc_amp, ca_amp=ca_amp)


def dump_channels(chset: ChannelSet, path) -> None:
    """Write one trial's channels as CSV rows (link, tx, rx, subcarrier, element, re, im)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link", "tx", "rx", "subcarrier", "element", "re", "im"])
        for q, h in sorted(chset.cc.items()):
            for m in range(h.shape[0]):
                for i in range(h.shape[1]):
                    w.writerow(["cc", 0, q, m, i, repr(h[m, i].real), repr(h[m, i].imag)])
        for (tx, rx), h in sorted(chset.ca.items()):
            for m in range(h.shape[0]):
                for i in range(h.shape[1]):
                    w.writerow(["ca", tx, rx, m, i, repr(h[m, i].real), repr(h[m, i].imag)])
        for (q, u), h in sorted(chset.access.items()):
            for i in range(h.shape[0]):
                w.writerow(["ad", q, u, 0, i, repr(h[i].real), repr(h[i].imag)])
