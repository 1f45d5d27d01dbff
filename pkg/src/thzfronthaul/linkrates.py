"""SINR and achievable-rate evaluation for the three hops.

CPU->CAP and CAP->AP rates are per-subcarrier log sums with inter-CAP
(resp. intra- plus inter-cluster) interference; the access rate is a single
wideband log with a coherent desired sum over all serving clusters.  Every
expectation over unit-variance independent symbols reduces to a sum of
per-stream powers, each stream combined coherently over the antennas/APs that
carry it.

Absent legs (wired benchmarks, singleton clusters) are the tagged value
``None``; it never enters arithmetic and the min operators skip it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .association import ClusterAssignment, SubcarrierPartition
from .channel import ChannelSet
from .precoding import rzf, stacked_rzf_blocks

LOG2 = np.log(2.0)


def min_finite(values):
    """Minimum ignoring ``None`` sentinels; None if every leg is absent."""
    finite = [v for v in values if v is not None]
    return min(finite) if finite else None


# ---------------------------------------------------------------------------
# Power allocation container and constraint checks
# ---------------------------------------------------------------------------

@dataclass
class PowerAllocation:
    cc_power: dict = field(default_factory=dict)    # (l, u, m) -> W
    ca_power: dict = field(default_factory=dict)    # (l, q, u, m) -> W
    ad_power: dict = field(default_factory=dict)    # (l, q, u) -> W
    cc_gamma: dict = field(default_factory=dict)    # (l, u, m) -> {0, 1}
    ca_gamma: dict = field(default_factory=dict)    # (l, q, u, m) -> {0, 1}


def exclusivity_violations(alloc: PowerAllocation) -> list[str]:
    """Subcarrier-sharing checks: one device per (l, m) and per (l, q, m)."""
    bad = []
    slots = {}
    for (l, u, m), g in alloc.cc_gamma.items():
        if g:
            slots.setdefault((l, m), []).append(u)
    for (l, m), users in slots.items():
        if len(users) > 1:
            bad.append(f"CPU->CAP slot (l={l}, m={m}) carries devices {sorted(users)}")
    slots = {}
    for (l, q, u, m), g in alloc.ca_gamma.items():
        if g:
            slots.setdefault((l, q, m), []).append(u)
    for (l, q, m), users in slots.items():
        if len(users) > 1:
            bad.append(f"CAP->AP slot (l={l}, q={q}, m={m}) carries devices {sorted(users)}")
    return bad


def budget_violations(alloc: PowerAllocation, p_cpu: float, p_ap: float,
                      access_block_norms: dict | None = None,
                      rel_tol: float = 1e-6) -> list[str]:
    """Check the CPU total, per-cluster and per-AP power budgets.

    Fronthaul precoders are unit-norm so their budgets reduce to power sums;
    the access budget keeps the per-AP block norms of the stacked precoder.
    """
    bad = []
    total = sum(alloc.cc_gamma.get(k, 1) * p for k, p in alloc.cc_power.items())
    if total > p_cpu * (1 + rel_tol):
        bad.append(f"CPU budget violated: {total:.6g} > {p_cpu:.6g}")
    per_cluster = {}
    for (l, q, u, m), p in alloc.ca_power.items():
        per_cluster[l] = per_cluster.get(l, 0.0) + alloc.ca_gamma.get((l, q, u, m), 1) * p
    for l, tot in per_cluster.items():
        if tot > p_ap * (1 + rel_tol):
            bad.append(f"cluster {l} CAP budget violated: {tot:.6g} > {p_ap:.6g}")
    per_ap = {}
    for (l, q, u), p in alloc.ad_power.items():
        w = 1.0 if access_block_norms is None else access_block_norms[(l, q, u)] ** 2
        per_ap[(l, q)] = per_ap.get((l, q), 0.0) + p * w
    for (l, q), tot in per_ap.items():
        if tot > p_ap * (1 + rel_tol):
            bad.append(f"AP (l={l}, q={q}) budget violated: {tot:.6g} > {p_ap:.6g}")
    return bad


# ---------------------------------------------------------------------------
# Precoders and effective gain tables
# ---------------------------------------------------------------------------

@dataclass
class CcGains:
    """Effective CPU->CAP beam gains per subcarrier.

    ``sig[l, m]`` is the desired gain of cluster l's beam at its own CAP;
    ``cross[l, lp, m]`` the leakage of beam lp onto CAP l (diagonal zeroed).
    """

    sig: np.ndarray
    cross: np.ndarray


@dataclass
class CaGains:
    """Effective CAP->AP gains: receivers (l, q) against transmit beams (lp, qp)."""

    receivers: list                 # (l, q) pairs, q a receiving member AP
    beams: list                     # (l, q) pairs, one beam per member AP
    gain: np.ndarray                # (n_receivers, n_beams, n_sc)
    recv_index: dict
    beam_index: dict


def cpu_precoders(chset: ChannelSet, assignment: ClusterAssignment, epsilon: float) -> np.ndarray:
    """Per-subcarrier RZF columns toward every CAP, shape (n_sc, N_cpu, L)."""
    caps = assignment.cap_node
    any_cc = chset.cc[caps[0]]
    n_sc = any_cc.shape[0]
    out = np.empty((n_sc, any_cc.shape[1], len(caps)), dtype=complex)
    for m in range(n_sc):
        h = np.column_stack([chset.cc[c][m] for c in caps])
        out[m] = rzf(h, epsilon)
    return out


def cc_gain_tables(chset: ChannelSet, assignment: ClusterAssignment,
                   precoders: np.ndarray) -> CcGains:
    caps = assignment.cap_node
    n_l = len(caps)
    n_sc = precoders.shape[0]
    cross = np.empty((n_l, n_l, n_sc))
    for l, c in enumerate(caps):
        h = chset.cc[c]                              # (n_sc, N)
        cross[l] = np.abs(np.einsum("mn,mnl->ml", h.conj(), precoders)).T ** 2
    sig = np.array([cross[l, l] for l in range(n_l)])
    for l in range(n_l):
        cross[l, l] = 0.0
    return CcGains(sig=sig, cross=cross)


def cap_precoders(chset: ChannelSet, assignment: ClusterAssignment, epsilon: float) -> dict:
    """Per-cluster RZF toward its receiving members: {l: (n_sc, N_ap, n_recv)}."""
    out = {}
    for l in range(assignment.n_clusters):
        recv = assignment.receivers(l)
        if not recv:
            continue
        cap = assignment.cap_node[l]
        stack = np.stack([chset.ca[(cap, q)] for q in recv], axis=2)   # (n_sc, N, n_recv)
        n_sc = stack.shape[0]
        w = np.empty_like(stack)
        for m in range(n_sc):
            w[m] = rzf(stack[m], epsilon)
        out[l] = w
    return out


def ca_gain_tables(chset: ChannelSet, assignment: ClusterAssignment,
                   cap_precs: dict) -> CaGains:
    receivers = [(l, q) for l in range(assignment.n_clusters)
                 for q in assignment.receivers(l)]
    beams = list(receivers)
    if not receivers:
        return CaGains([], [], np.zeros((0, 0, 0)), {}, {})
    n_sc = next(iter(cap_precs.values())).shape[0]
    gain = np.zeros((len(receivers), len(beams), n_sc))
    for i, (l, q) in enumerate(receivers):
        for j, (lp, qp) in enumerate(beams):
            h = chset.ca[(assignment.cap_node[lp], q)]          # CAP lp -> AP q
            w = cap_precs[lp][:, :, assignment.receivers(lp).index(qp)]
            gain[i, j] = np.abs(np.einsum("mn,mn->m", h.conj(), w)) ** 2
    return CaGains(receivers=receivers, beams=beams, gain=gain,
                   recv_index={r: i for i, r in enumerate(receivers)},
                   beam_index={s: j for j, s in enumerate(beams)})


@dataclass
class AccessCoeffs:
    """Per-cluster access precoding state.

    ``blocks[l]`` holds the per-node precoder blocks (n_nodes, N_ap, n_served),
    ``coeff[l][i, u, j]`` the complex inner product of device u's channel with
    node i's block for served-device j, and ``block_norms`` the per-block
    norms entering the per-AP power budget.
    """

    nodes: dict                     # l -> tuple of access node ids
    served: dict                    # l -> sorted tuple of served devices
    blocks: dict
    coeff: dict
    block_norms: dict               # (l, q, u) -> float


def access_coeffs(chset: ChannelSet, assignment: ClusterAssignment,
                  n_devices: int, epsilon: float) -> AccessCoeffs:
    nodes, served, blocks, coeff, norms = {}, {}, {}, {}, {}
    for l in range(assignment.n_clusters):
        devs = tuple(sorted(assignment.served_devices[l]))
        if not devs:
            continue
        nds = assignment.access_nodes(l)
        stacked = np.vstack([np.column_stack([chset.access[(q, u)] for u in devs])
                             for q in nds])
        blk = stacked_rzf_blocks(stacked, len(nds), epsilon)
        nodes[l], served[l], blocks[l] = nds, devs, blk
        c = np.empty((len(nds), n_devices, len(devs)), dtype=complex)
        for i, q in enumerate(nds):
            for u in range(n_devices):
                c[i, u] = chset.access[(q, u)].conj() @ blk[i]
        coeff[l] = c
        for i, q in enumerate(nds):
            for j, u in enumerate(devs):
                norms[(l, q, u)] = float(np.linalg.norm(blk[i, :, j]))
    return AccessCoeffs(nodes=nodes, served=served, blocks=blocks, coeff=coeff,
                        block_norms=norms)


# ---------------------------------------------------------------------------
# Rates
# ---------------------------------------------------------------------------

def rate_cc(gains: CcGains, assignment: ClusterAssignment, alloc: PowerAllocation,
            partition: SubcarrierPartition, b_hz: float, noise_var: float,
            si_var) -> tuple[dict, list]:
    """CPU->CAP rates per (cluster, device) and the per-device serving minimum.

    ``si_var`` is the residual self-interference variance, scalar or one value
    per cluster (a CAP that transmits no CAP->AP stream has none).
    """
    n_l = assignment.n_clusters
    si = np.broadcast_to(np.asarray(si_var, dtype=float), (n_l,))
    m_cc = list(partition.m_cc)
    p_lm = np.zeros((n_l, gains.sig.shape[1]))
    for (l, u, m), p in alloc.cc_power.items():
        p_lm[l, m] += alloc.cc_gamma.get((l, u, m), 1) * p
    inter = np.einsum("lkm,km->lm", gains.cross, p_lm)

    per_lu = {}
    for l in range(n_l):
        for u in sorted(assignment.served_devices[l]):
            rate = 0.0
            for m in m_cc:
                p = alloc.cc_power.get((l, u, m), 0.0) * alloc.cc_gamma.get((l, u, m), 1)
                if p > 0:
                    sinr = p * gains.sig[l, m] / (inter[l, m] + si[l] + noise_var)
                    rate += np.log1p(sinr) / LOG2
            per_lu[(l, u)] = b_hz * rate
    per_device = [min_finite([per_lu.get((l, u)) for l in assignment.serving_map[u]])
                  for u in range(len(assignment.serving_map))]
    return per_lu, per_device


def rate_ca(gains: CaGains, assignment: ClusterAssignment, alloc: PowerAllocation,
            partition: SubcarrierPartition, b_hz: float, noise_var: float) -> tuple[dict, list]:
    """CAP->AP rates per (cluster, AP, device); singleton clusters are absent (None)."""
    m_ca = list(partition.m_ca)
    n_beams = len(gains.beams)
    n_sc = gains.gain.shape[2] if n_beams else 0
    p_sm = np.zeros((n_beams, n_sc))
    for (l, q, u, m), p in alloc.ca_power.items():
        p_sm[gains.beam_index[(l, q)], m] += alloc.ca_gamma.get((l, q, u, m), 1) * p

    per_lqu = {}
    for (l, q) in gains.receivers:
        r = gains.recv_index[(l, q)]
        inter_all = gains.gain[r] * p_sm                       # (n_beams, n_sc)
        for u in sorted(assignment.served_devices[l]):
            rate = 0.0
            for m in m_ca:
                p = alloc.ca_power.get((l, q, u, m), 0.0) * alloc.ca_gamma.get((l, q, u, m), 1)
                if p > 0:
                    own = gains.beam_index[(l, q)]
                    inter = inter_all[:, m].sum() - inter_all[own, m]
                    sinr = p * gains.gain[r, own, m] / (inter + noise_var)
                    rate += np.log1p(sinr) / LOG2
            per_lqu[(l, q, u)] = b_hz * rate

    per_device = []
    for u in range(len(assignment.serving_map)):
        vals = [per_lqu.get((l, q, u))
                for l in assignment.serving_map[u]
                for q in assignment.receivers(l)]
        per_device.append(min_finite(vals))
    return per_lqu, per_device


def access_sinr(coeffs: AccessCoeffs, assignment: ClusterAssignment,
                ad_power: dict, noise_var: float) -> np.ndarray:
    """Access SINR per device for a given per-(cluster, node, device) power map."""
    n_devices = len(assignment.serving_map)
    amp = {}
    for l, devs in coeffs.served.items():
        c = coeffs.coeff[l]
        for j, us in enumerate(devs):
            s = np.array([np.sqrt(ad_power.get((l, q, us), 0.0)) for q in coeffs.nodes[l]])
            amp[(l, us)] = c[:, :, j].T @ s            # amplitude at every device
    sinr = np.zeros(n_devices)
    for u in range(n_devices):
        desired = sum(amp[(l, u)][u] for l in assignment.serving_map[u] if (l, u) in amp)
        interf = sum(abs(a[u]) ** 2 for (l, us), a in amp.items() if us != u)
        sinr[u] = abs(desired) ** 2 / (interf + noise_var)
    return sinr


def rate_ad(coeffs: AccessCoeffs, assignment: ClusterAssignment, alloc: PowerAllocation,
            b_ad_hz: float, noise_var: float) -> list:
    sinr = access_sinr(coeffs, assignment, alloc.ad_power, noise_var)
    return [float(b_ad_hz * np.log1p(s) / LOG2) for s in sinr]


def end_to_end(c_cc: list, c_ca: list, c_ad: list) -> tuple[list, float | None]:
    """Per-device bottleneck rate and the network minimum (max-min objective)."""
    c_end = [min_finite([a, b, c]) for a, b, c in zip(c_cc, c_ca, c_ad)]
    return c_end, min_finite(c_end)


# ---------------------------------------------------------------------------
# Report container and CSV rows
# ---------------------------------------------------------------------------

CSV_COLUMNS = ["trial", "scheme", "device", "c_cc", "c_ca", "c_ad", "c_end",
               "wired_cc", "wired_ca", "n_clusters", "m_cc_size", "m_ca_size",
               "tau_cc", "tau_ca", "tau_ad", "tau_gp", "channel_hash"]


@dataclass
class RateReport:
    scheme: str
    c_cc: list
    c_ca: list
    c_ad: list
    c_end: list
    min_rate: float | None
    frame: dict = field(default_factory=dict)
    trial: int = -1
    channel_hash: str = ""


def report_rows(report: RateReport) -> list[dict]:
    """Flatten a report into CSV rows; absent legs serialize as a flag, not a rate."""
    rows = []
    for u in range(len(report.c_end)):
        rows.append({
            "trial": report.trial,
            "scheme": report.scheme,
            "device": u,
            "c_cc": "" if report.c_cc[u] is None else repr(float(report.c_cc[u])),
            "c_ca": "" if report.c_ca[u] is None else repr(float(report.c_ca[u])),
            "c_ad": "" if report.c_ad[u] is None else repr(float(report.c_ad[u])),
            "c_end": "" if report.c_end[u] is None else repr(float(report.c_end[u])),
            "wired_cc": int(report.c_cc[u] is None),
            "wired_ca": int(report.c_ca[u] is None),
            "n_clusters": report.frame.get("n_clusters", ""),
            "m_cc_size": report.frame.get("m_cc_size", ""),
            "m_ca_size": report.frame.get("m_ca_size", ""),
            "tau_cc": report.frame.get("tau_cc", ""),
            "tau_ca": report.frame.get("tau_ca", ""),
            "tau_ad": report.frame.get("tau_ad", ""),
            "tau_gp": report.frame.get("tau_gp", ""),
            "channel_hash": report.channel_hash,
        })
    return rows
