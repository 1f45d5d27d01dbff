"""AP clustering, device selection and fronthaul subcarrier-set assignment.

Three clustering flavors are supported: dynamic (k-medoids on AP positions
with gain-based CAP election), static (fixed sub-area grid with a synthetic
CAP at each cell center) and the integrated variant (grid membership, elected
CAP).  Device selection is the capacity-constrained greedy with a fairness
re-ranking pass; subcarrier-set assignment is the CAP round-robin greedy.

Tie-breaking is lowest-index everywhere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelSet
from .scenario import NetworkScenario

log = logging.getLogger(__name__)


class InfeasibleSelectionError(ValueError):
    """Device selection cannot cover every device under the capacity limits."""

    def __init__(self, uncovered):
        self.uncovered = sorted(uncovered)
        super().__init__(f"devices {self.uncovered} cannot be served "
                         f"(cluster capacity exhausted)")


# ---------------------------------------------------------------------------
# Assignment container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClusterAssignment:
    """AP partition, CAP per cluster, and (once selected) the serving maps.

    ``cap_node`` entries below ``n_aps`` are real APs; synthetic grid CAPs get
    node ids ``n_aps + cell``.  A CAP only relays fronthaul and does not serve
    devices on the access band, except when it is the only node of its cluster
    (then it talks to devices directly and the CAP->AP leg disappears).
    """

    clusters: tuple                 # tuple of tuples of AP ids
    cap_node: tuple                 # node id per cluster
    cap_positions: np.ndarray       # (L, 3)
    n_aps: int
    serving_map: tuple = ()         # per device: frozenset of cluster ids
    served_devices: tuple = ()      # per cluster: frozenset of device ids

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def receivers(self, l: int) -> tuple:
        """Member APs that receive the CAP->AP fronthaul leg."""
        return tuple(q for q in self.clusters[l] if q != self.cap_node[l])

    def is_singleton(self, l: int) -> bool:
        return len(self.receivers(l)) == 0

    def access_nodes(self, l: int) -> tuple:
        """Nodes of cluster l that transmit on the access band."""
        recv = self.receivers(l)
        return recv if recv else (self.cap_node[l],)


def validate_assignment(a: ClusterAssignment, u_max: int, c_max: int) -> list[str]:
    bad = []
    seen = [q for cl in a.clusters for q in cl]
    if len(seen) != len(set(seen)):
        bad.append("clusters overlap")
    if set(seen) != set(range(a.n_aps)):
        bad.append("clusters do not cover every AP")
    for l, cap in enumerate(a.cap_node):
        if cap < a.n_aps and cap not in a.clusters[l]:
            bad.append(f"CAP {cap} of cluster {l} is not a member")
    if a.served_devices:
        for l, devs in enumerate(a.served_devices):
            if len(devs) > u_max:
                bad.append(f"cluster {l} serves {len(devs)} > U_max devices")
        for u, cls in enumerate(a.serving_map):
            if len(cls) > c_max:
                bad.append(f"device {u} has {len(cls)} > C_max clusters")
            for l in cls:
                if u not in a.served_devices[l]:
                    bad.append(f"maps inconsistent at device {u}, cluster {l}")
        for l, devs in enumerate(a.served_devices):
            for u in devs:
                if l not in a.serving_map[u]:
                    bad.append(f"maps inconsistent at cluster {l}, device {u}")
    return bad


def check_partition(partition, n_sc: int) -> list[str]:
    bad = []
    cc, ca = set(partition.m_cc), set(partition.m_ca)
    if cc & ca:
        bad.append("subcarrier sets overlap")
    if cc | ca != set(range(n_sc)):
        bad.append("subcarrier sets do not cover the grid")
    return bad


@dataclass(frozen=True)
class SubcarrierPartition:
    """Disjoint fronthaul subcarrier sets: CPU->CAP uses m_cc, CAP->AP m_ca."""

    m_cc: tuple
    m_ca: tuple


# ---------------------------------------------------------------------------
# K-medoids (PAM) on AP coordinates
# ---------------------------------------------------------------------------

def kmedoids_pam(points: np.ndarray, k: int):
    """Deterministic PAM build+swap; returns (medoid ids, labels, cost).

    BUILD seeds greedily by largest cost decrease, SWAP applies the single
    best (medoid, point) exchange until no improvement; ties resolve to the
    lowest index, so the result is reproducible without randomness.
    """
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= {n}, got {k}")
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)

    medoids = [int(np.argmin(d.sum(axis=1)))]
    while len(medoids) < k:
        near = d[:, medoids].min(axis=1)
        gain = np.maximum(near[None, :] - d, 0.0).sum(axis=1)
        gain[medoids] = -np.inf
        medoids.append(int(np.argmax(gain)))

    def cost_of(meds):
        return d[:, meds].min(axis=1).sum()

    medoids = sorted(medoids)
    cost = cost_of(medoids)
    improved = True
    while improved:
        improved = False
        best = (cost, None)
        for i, m in enumerate(medoids):
            for p in range(n):
                if p in medoids:
                    continue
                trial = medoids[:i] + [p] + medoids[i + 1:]
                c = cost_of(trial)
                if c < best[0] - 1e-12:
                    best = (c, (i, p))
        if best[1] is not None:
            i, p = best[1]
            medoids[i] = p
            medoids = sorted(medoids)
            cost = best[0]
            improved = True
    labels = np.argmin(d[:, medoids], axis=1)
    return medoids, labels, float(cost)


def _elect_cap(members, los) -> int:
    """CAP = member with the largest total LoS gain toward CPU and cluster mates."""
    best_q, best_psi = members[0], -np.inf
    for q in members:
        psi = los.cc_amp[q] + sum(los.ca_amp[q, q2] for q2 in members if q2 != q)
        if psi > best_psi:
            best_q, best_psi = q, psi
    return best_q


def cluster_dc(ap_positions: np.ndarray, los, n_clusters: int, seed=None) -> ClusterAssignment:
    """Dynamic clustering: k-medoids partition, gain-elected CAP per cluster.

    ``seed`` is accepted for interface stability; PAM is deterministic so it
    is unused.
    """
    q_total = len(ap_positions)
    _, labels, _ = kmedoids_pam(ap_positions[:, :2], n_clusters)
    clusters = [tuple(int(q) for q in np.flatnonzero(labels == l)) for l in range(n_clusters)]
    caps = [_elect_cap(list(cl), los) for cl in clusters]
    return ClusterAssignment(
        clusters=tuple(clusters),
        cap_node=tuple(caps),
        cap_positions=ap_positions[caps].copy(),
        n_aps=q_total,
    )


# ---------------------------------------------------------------------------
# Static / integrated clustering over a sub-area grid
# ---------------------------------------------------------------------------

_GRIDS = {4: (2, 2), 8: (4, 2), 12: (4, 3), 16: (4, 4), 20: (5, 4)}


def _grid_cells(scenario, grid_l):
    if grid_l not in _GRIDS:
        raise ValueError(f"unsupported sub-area count {grid_l}; supported: {sorted(_GRIDS)}")
    nx, ny = _GRIDS[grid_l]
    wx, wy = scenario.area_x / nx, scenario.area_y / ny
    centers = np.array([[(ix + 0.5) * wx, (iy + 0.5) * wy, scenario.sc_cap_height]
                        for iy in range(ny) for ix in range(nx)])
    return nx, ny, wx, wy, centers


def _cell_of(x, width, n_cells):
    """Grid coordinate with points exactly on an internal boundary going low."""
    i = int(np.floor(x / width))
    if i > 0 and x == i * width:
        i -= 1
    return min(max(i, 0), n_cells - 1)


def cluster_sc(scenario: NetworkScenario, grid_l: int) -> ClusterAssignment:
    """Static clustering: grid cells are clusters, one synthetic CAP per cell center."""
    nx, ny, wx, wy, centers = _grid_cells(scenario, grid_l)
    members = [[] for _ in range(grid_l)]
    for q, pos in enumerate(scenario.ap_positions):
        cell = _cell_of(pos[1], wy, ny) * nx + _cell_of(pos[0], wx, nx)
        members[cell].append(q)
    return ClusterAssignment(
        clusters=tuple(tuple(m) for m in members),
        cap_node=tuple(scenario.n_aps + cell for cell in range(grid_l)),
        cap_positions=centers,
        n_aps=scenario.n_aps,
    )


def cluster_idsc(scenario: NetworkScenario, grid_l: int, los) -> ClusterAssignment:
    """Integrated clustering: grid membership as SC, CAP elected as in DC.

    Cells without any AP cannot elect a CAP and are dropped with a warning.
    """
    sc = cluster_sc(scenario, grid_l)
    clusters, caps = [], []
    for cell, members in enumerate(sc.clusters):
        if not members:
            log.warning("sub-area %d of %d is empty; dropping it", cell, grid_l)
            continue
        clusters.append(members)
        caps.append(_elect_cap(list(members), los))
    return ClusterAssignment(
        clusters=tuple(clusters),
        cap_node=tuple(caps),
        cap_positions=scenario.ap_positions[caps].copy(),
        n_aps=scenario.n_aps,
    )


# ---------------------------------------------------------------------------
# Device selection (user-centric clustering)
# ---------------------------------------------------------------------------

def access_gain_matrix(chset: ChannelSet, assignment: ClusterAssignment, n_devices: int) -> np.ndarray:
    """v[l, u] = summed access channel energy from cluster l's access nodes to device u."""
    v = np.zeros((assignment.n_clusters, n_devices))
    for l in range(assignment.n_clusters):
        for q in assignment.access_nodes(l):
            for u in range(n_devices):
                v[l, u] += float(np.sum(np.abs(chset.access[(q, u)]) ** 2))
    return v


def select_devices(assignment: ClusterAssignment, gains: np.ndarray,
                   u_max: int, c_max: int) -> ClusterAssignment:
    """Fill the serving maps: greedy initial pick, then fairness-ordered growth.

    Pass one gives every device its best cluster with spare capacity (devices
    in index order).  Pass two repeatedly lets the device with the smallest
    total collected gain pick its best cluster not already serving it, until
    clusters are full or every device holds ``c_max`` clusters.  A device that
    cannot get any cluster in pass one makes the instance infeasible.
    """
    n_clusters, n_devices = gains.shape
    g_u = [set() for _ in range(n_devices)]
    u_l = [set() for _ in range(n_clusters)]

    def pick(u, exclude):
        best_l, best_v = None, -np.inf
        for l in range(n_clusters):
            if l in exclude or len(u_l[l]) >= u_max:
                continue
            if gains[l, u] > best_v:
                best_l, best_v = l, gains[l, u]
        return best_l

    uncovered = []
    for u in range(n_devices):
        l = pick(u, exclude=())
        if l is None:
            uncovered.append(u)
            continue
        g_u[u].add(l)
        u_l[l].add(u)
    if uncovered:
        raise InfeasibleSelectionError(uncovered)

    while True:
        candidates = []
        for u in range(n_devices):
            if len(g_u[u]) >= c_max:
                continue
            if pick(u, exclude=g_u[u]) is None:
                continue
            candidates.append((sum(gains[l, u] for l in g_u[u]), u))
        if not candidates:
            break
        _, u = min(candidates)
        l = pick(u, exclude=g_u[u])
        g_u[u].add(l)
        u_l[l].add(u)

    return replace(assignment,
                   serving_map=tuple(frozenset(s) for s in g_u),
                   served_devices=tuple(frozenset(s) for s in u_l))


# ---------------------------------------------------------------------------
# Greedy fronthaul subcarrier-set assignment
# ---------------------------------------------------------------------------

def ca_subcarrier_gains(chset: ChannelSet, assignment: ClusterAssignment, n_sc: int) -> dict:
    """Per cluster, the CAP->members channel energy on every subcarrier."""
    out = {}
    for l in range(assignment.n_clusters):
        w = np.zeros(n_sc)
        for q in assignment.receivers(l):
            w += np.sum(np.abs(chset.ca[(assignment.cap_node[l], q)]) ** 2, axis=1)
        out[l] = w
    return out


def assign_subcarriers(assignment: ClusterAssignment, ca_gains: dict,
                       n_sc: int, target_ca_size: int) -> SubcarrierPartition:
    """CAPs pick CAP->AP subcarriers round-robin by summed member gain.

    Clusters without a CAP->AP leg (singletons) sit out the rotation.  If no
    cluster needs the leg at all, the set is filled with the lowest indices so
    the partition invariants still hold.
    """
    if not 0 <= target_ca_size <= n_sc:
        raise ValueError("target size outside the subcarrier grid")
    taken = np.zeros(n_sc, dtype=bool)
    eligible = [l for l in range(assignment.n_clusters) if not assignment.is_singleton(l)]
    m_ca = []
    if eligible:
        i = 0
        while len(m_ca) < target_ca_size:
            gains = np.where(taken, -np.inf, ca_gains[eligible[i % len(eligible)]])
            m = int(np.argmax(gains))
            taken[m] = True
            m_ca.append(m)
            i += 1
    else:
        m_ca = list(range(target_ca_size))
        taken[:target_ca_size] = True
    m_cc = [m for m in range(n_sc) if not taken[m]]
    return SubcarrierPartition(m_cc=tuple(m_cc), m_ca=tuple(sorted(m_ca)))
