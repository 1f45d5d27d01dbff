"""Max-min fronthaul rate over powers and subcarrier activations.

Both fronthaul hops (CPU->CAP and its CAP->AP twin) share one machinery: the
per-link rate is a multiple-ratio fractional program, handled by the quadratic
transform with auxiliary multipliers z, an exp-based concave surrogate that
presses the per-slot activation vectors toward a single nonzero entry, and a
bisection on the common rate target with a compensation bump that lets the
upper bound grow when the transform unlocks more rate.

The binary activations never appear as variables: they are recovered from the
optimized powers by thresholding, and the surrogate anchors start from a
deterministic round-robin slot ownership so the first feasibility program is
well posed (a uniform anchor over two co-slot devices makes the surrogate
rows unsatisfiable and puts zero-power slots outside the log domain).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .engines import ConeProgram, ConeSolution, solve_cone_program

LOG2 = np.log(2.0)


@dataclass
class SurrogateConfig:
    """Knobs of the fronthaul solver; defaults follow the package conventions."""

    psi: float | None = None        # activation sharpness; None -> 200 / budget
    zeta: float = 1e-3              # activation threshold p/P >= zeta
    kappa_rel: float = 1e-2         # bisection gap, relative to the initial upper bound
    chi_com_rel: float = 2.0        # compensation bump, in units of kappa
    max_outer: int = 50             # accepted-iteration cap
    max_bisect: int = 100           # total feasibility-solve cap
    backend: str = "clarabel"
    solver_tol: float = 1e-8


@dataclass
class FronthaulProblem:
    """One fronthaul hop as gain tables over (row, subcarrier) power variables.

    A row is one rate constraint: (l, u) for CPU->CAP, (l, q, u) for CAP->AP.
    ``cross[r, rp, j]`` is the gain of row rp's unit power on subcarrier j at
    row r's receiver (zero for rows sharing r's transmit slot, whose
    concurrency is excluded by construction).  ``excl_groups`` lists rows that
    compete for the same per-subcarrier slot; ``budget_groups`` the rows bound
    by one power budget.
    """

    rows: list
    sig: np.ndarray                 # (R, M)
    cross: np.ndarray               # (R, R, M)
    floor: np.ndarray               # (R,)
    b_hz: float
    budget_groups: list             # [(row index array, P)]
    excl_groups: list               # [row index array], only len >= 2 groups matter
    subcarriers: tuple              # global subcarrier ids

    @property
    def n_rows(self):
        return self.sig.shape[0]

    @property
    def n_sc(self):
        return self.sig.shape[1]

    def row_budget(self) -> np.ndarray:
        out = np.zeros(self.n_rows)
        for idx, p in self.budget_groups:
            out[idx] = p
        return out


@dataclass
class FronthaulSolution:
    rows: list
    subcarriers: tuple
    power: np.ndarray               # (R, M), after activation recovery
    gamma: np.ndarray               # (R, M) in {0, 1}
    per_row_rate: dict              # row key -> bits/s
    min_rate: float
    chi_lower: float
    trace: list = field(default_factory=list)
    warn: bool = False
    n_solves: int = 0


# ---------------------------------------------------------------------------
# Elementary pieces
# ---------------------------------------------------------------------------

def qt_update(problem: FronthaulProblem, p: np.ndarray) -> np.ndarray:
    """Quadratic-transform multipliers z = sqrt(A)/B at the current powers."""
    a = problem.sig * p
    b = np.einsum("rkm,km->rm", problem.cross, p) + problem.floor[:, None]
    return np.sqrt(a) / b


def rates_for_power(problem: FronthaulProblem, p: np.ndarray) -> np.ndarray:
    """Exact per-row rates b * sum_m log2(1 + A/B) for a given power table."""
    a = problem.sig * p
    b = np.einsum("rkm,km->rm", problem.cross, p) + problem.floor[:, None]
    return problem.b_hz * np.sum(np.log1p(a / b), axis=1) / LOG2


def surrogate_value(p_vec, psi) -> float:
    """Activation count surrogate: sum of 1 - exp(-psi * p)."""
    return float(np.sum(1.0 - np.exp(-psi * np.asarray(p_vec, dtype=float))))


def surrogate_affine(p_vec, anchor, psi) -> float:
    """First-order majorizer of the surrogate around ``anchor`` (tangent there)."""
    a = np.asarray(anchor, dtype=float)
    p = np.asarray(p_vec, dtype=float)
    return surrogate_value(a, psi) + float(np.sum(psi * np.exp(-psi * a) * (p - a)))


def waterfill(gains: np.ndarray, budget: float) -> np.ndarray:
    """Classic water-filling: maximize sum log(1 + g p) s.t. sum p <= budget."""
    g = np.asarray(gains, dtype=float)
    p = np.zeros_like(g)
    active = np.flatnonzero(g > 0)
    if active.size == 0 or budget <= 0:
        return p
    inv = 1.0 / g[active]
    order = np.argsort(inv)
    inv_sorted = inv[order]
    for k in range(active.size, 0, -1):
        level = (budget + inv_sorted[:k].sum()) / k
        if level >= inv_sorted[k - 1]:
            fill = np.maximum(level - inv_sorted, 0.0)
            p[active[order]] = fill
            break
    return p


def interference_free_bound(problem: FronthaulProblem) -> float:
    """Initial bisection ceiling: the worst row's water-filled solo rate."""
    budgets = problem.row_budget()
    best = np.inf
    for r in range(problem.n_rows):
        g = problem.sig[r] / problem.floor[r]
        p = waterfill(g, budgets[r])
        rate = problem.b_hz * np.sum(np.log1p(g * p)) / LOG2
        best = min(best, rate)
    return float(best) if problem.n_rows else 0.0


def recover_gamma(p: np.ndarray, budget, zeta: float):
    """Activation recovery: gamma = 1 iff p / P >= zeta; sub-threshold power is zeroed."""
    if not 0 < zeta < 1:
        raise ValueError("zeta must lie in (0, 1)")
    scale = np.asarray(budget, dtype=float)
    if scale.ndim == 1:
        scale = scale[:, None]
    gamma = (p / scale >= zeta).astype(int)
    return gamma, p * gamma


def round_robin_anchor(problem: FronthaulProblem) -> np.ndarray:
    """Exclusivity-respecting start: each slot owned by one row, cycling per group.

    Budget-tight by construction: every (group, subcarrier) slot carries
    P_group / (n_slots_of_group).
    """
    p0 = np.zeros((problem.n_rows, problem.n_sc))
    grouped = np.zeros(problem.n_rows, dtype=bool)
    for rows_idx in problem.excl_groups:
        for j in range(problem.n_sc):
            p0[rows_idx[j % len(rows_idx)], j] = 1.0
        grouped[rows_idx] = True
    p0[~grouped, :] = 1.0
    for rows_idx, budget in problem.budget_groups:
        slots = p0[rows_idx].sum()
        if slots > 0:
            p0[rows_idx] *= budget / slots
    return p0


# ---------------------------------------------------------------------------
# The convex feasibility step, assembled directly in cone form
# ---------------------------------------------------------------------------

class _StepAssembler:
    """Caches the sparsity pattern of the feasibility program.

    Variables are [p, q, r] blocks of length R*M each: q_k models
    sqrt(sig_k p_k) through a rotated-cone row, r_k the per-slot log term
    through an exponential cone.  Between bisection iterations only the rate
    targets, the QT multipliers and the surrogate anchors change, so the
    triplet pattern is built once and the dynamic values are overwritten.
    """

    def __init__(self, problem: FronthaulProblem, psi: float):
        self.problem = problem
        self.psi = psi
        r_n, m_n = problem.n_rows, problem.n_sc
        n = r_n * m_n
        self.n = n
        rows, cols, vals = [], [], []
        b = []
        row_ptr = 0

        def add(r_i, c_i, v_i):
            rows.append(r_i)
            cols.append(c_i)
            vals.append(v_i)

        # nonneg: p >= 0
        for k in range(n):
            add(row_ptr, k, -1.0)
            b.append(0.0)
            row_ptr += 1
        # nonneg: budgets
        for idx, budget in problem.budget_groups:
            for r in idx:
                for j in range(m_n):
                    add(row_ptr, r * m_n + j, 1.0)
            b.append(budget)
            row_ptr += 1
        # nonneg: surrogate rows (dynamic values and rhs)
        self.sur_entries = []           # positions in vals, with (r, j)
        self.sur_rhs = []               # positions in b, with group row ids and j
        for idx in problem.excl_groups:
            if len(idx) < 2:
                continue
            for j in range(m_n):
                for r in idx:
                    self.sur_entries.append((len(vals), r, j))
                    add(row_ptr, r * m_n + j, 0.0)
                self.sur_rhs.append((len(b), idx, j))
                b.append(0.0)
                row_ptr += 1
        # nonneg: rate rows (dynamic rhs)
        coef = problem.b_hz / LOG2
        self.rate_rhs_start = len(b)
        for r in range(r_n):
            for j in range(m_n):
                add(row_ptr, 2 * n + r * m_n + j, -coef)
            b.append(0.0)
            row_ptr += 1
        self.n_nonneg = row_ptr

        # SOC blocks: q_k^2 <= sig_k p_k  as  ||(2q, sig p - 1)|| <= sig p + 1
        sig_flat = problem.sig.reshape(-1)
        for k in range(n):
            add(row_ptr, k, -sig_flat[k]); b.append(1.0); row_ptr += 1
            add(row_ptr, n + k, -2.0); b.append(0.0); row_ptr += 1
            add(row_ptr, k, -sig_flat[k]); b.append(-1.0); row_ptr += 1
        self.soc_dims = (3,) * n

        # EXP blocks: (r_k, 1, E_k) with E = 1 + 2 z q - z^2 (cross.p + floor)
        self.exp_q_vals = []            # (val position, k)
        self.exp_p_vals = []            # (val position, k, static cross gain)
        self.exp_rhs = []               # (b position, k)
        cross = problem.cross
        for r in range(r_n):
            inter = [rp for rp in range(r_n) if np.any(cross[r, rp] > 0)]
            for j in range(m_n):
                k = r * m_n + j
                add(row_ptr, 2 * n + k, -1.0); b.append(0.0); row_ptr += 1
                b.append(1.0); row_ptr += 1
                self.exp_q_vals.append((len(vals), k))
                add(row_ptr, n + k, 0.0)
                for rp in inter:
                    self.exp_p_vals.append((len(vals), k, cross[r, rp, j]))
                    add(row_ptr, rp * m_n + j, 0.0)
                self.exp_rhs.append((len(b), k))
                b.append(0.0)
                row_ptr += 1
        self.n_exp = n

        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.vals = np.asarray(vals, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.n_rows_total = row_ptr
        self.floor_flat = np.repeat(problem.floor, m_n)
        self.c = np.zeros(3 * n)
        self.c[:n] = 1.0

        self._sur_val_pos = np.asarray([e[0] for e in self.sur_entries], dtype=np.int64)
        self._sur_val_rj = (np.asarray([e[1] for e in self.sur_entries]),
                            np.asarray([e[2] for e in self.sur_entries]))
        self._exp_q_pos = np.asarray([e[0] for e in self.exp_q_vals], dtype=np.int64)
        self._exp_q_k = np.asarray([e[1] for e in self.exp_q_vals], dtype=np.int64)
        self._exp_p_pos = np.asarray([e[0] for e in self.exp_p_vals], dtype=np.int64)
        self._exp_p_k = np.asarray([e[1] for e in self.exp_p_vals], dtype=np.int64)
        self._exp_p_gain = np.asarray([e[2] for e in self.exp_p_vals], dtype=float)
        self._exp_rhs_pos = np.asarray([e[0] for e in self.exp_rhs], dtype=np.int64)
        self._exp_rhs_k = np.asarray([e[1] for e in self.exp_rhs], dtype=np.int64)

    def build(self, z: np.ndarray, anchors: np.ndarray, chi: float) -> ConeProgram:
        psi = self.psi
        vals = self.vals.copy()
        b = self.b.copy()
        if self._sur_val_pos.size:
            slope = psi * np.exp(-psi * anchors)
            vals[self._sur_val_pos] = slope[self._sur_val_rj]
            for b_pos, idx, j in self.sur_rhs:
                a = anchors[idx, j]
                b[b_pos] = 1.0 - surrogate_value(a, psi) + float(np.sum(psi * np.exp(-psi * a) * a))
        r_n = self.problem.n_rows
        b[self.rate_rhs_start:self.rate_rhs_start + r_n] = -chi
        z_flat = z.reshape(-1)
        vals[self._exp_q_pos] = -2.0 * z_flat[self._exp_q_k]
        vals[self._exp_p_pos] = (z_flat[self._exp_p_k] ** 2) * self._exp_p_gain
        b[self._exp_rhs_pos] = 1.0 - (z_flat[self._exp_rhs_k] ** 2) * self.floor_flat[self._exp_rhs_k]
        a = sp.csc_matrix((vals, (self.rows, self.cols)),
                          shape=(self.n_rows_total, 3 * self.n))
        return ConeProgram(c=self.c, a=a, b=b, n_zero=0, n_nonneg=self.n_nonneg,
                           soc_dims=self.soc_dims, n_exp=self.n_exp)


def qt_feasibility_step(problem: FronthaulProblem, z: np.ndarray, chi: float,
                        anchors: np.ndarray, cfg: SurrogateConfig,
                        _assembler: _StepAssembler | None = None):
    """Solve the inner convex program at rate target ``chi``.

    Returns the minimizing power table, None if provably infeasible, and
    raises EngineError only if every backend breaks down.
    """
    if chi <= 0:
        return np.zeros((problem.n_rows, problem.n_sc))
    psi = cfg.psi if cfg.psi is not None else 200.0 / max(p for _, p in problem.budget_groups)
    asm = _assembler or _StepAssembler(problem, psi)
    prog = asm.build(z, anchors, chi)
    sol = solve_cone_program(prog, backend=cfg.backend, tol=cfg.solver_tol)
    if sol.status == "optimal":
        return np.maximum(sol.x[:asm.n], 0.0).reshape(problem.n_rows, problem.n_sc)
    if sol.status in ("infeasible", "failed"):
        # a numerical breakdown is treated as "not feasible here" but flagged upstream
        return None if sol.status == "infeasible" else _Failed
    return None


class _FailedType:
    pass


_Failed = _FailedType()


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------

def solve_fronthaul_maxmin(problem: FronthaulProblem, cfg: SurrogateConfig | None = None) -> FronthaulSolution:
    """Bisection on the common rate target with QT and surrogate refreshes.

    Feasible steps raise the floor, refresh z and the surrogate anchors, and
    near convergence bump the ceiling by the compensation increment (the QT
    value is nondecreasing in its inner update, so the initial ceiling can be
    passed).  Stops when the gap closes and a compensation round brought no
    further floor improvement; total compensation is capped at twice the
    initial ceiling.
    """
    cfg = cfg or SurrogateConfig()
    r_n, m_n = problem.n_rows, problem.n_sc
    empty = FronthaulSolution(rows=problem.rows, subcarriers=problem.subcarriers,
                              power=np.zeros((r_n, m_n)), gamma=np.zeros((r_n, m_n), dtype=int),
                              per_row_rate={row: 0.0 for row in problem.rows},
                              min_rate=0.0, chi_lower=0.0)
    if r_n == 0 or m_n == 0:
        return empty
    chi_hi = interference_free_bound(problem)
    if chi_hi <= 0:
        return empty

    psi = cfg.psi if cfg.psi is not None else 200.0 / max(p for _, p in problem.budget_groups)
    assembler = _StepAssembler(problem, psi)
    anchors = round_robin_anchor(problem)
    z = qt_update(problem, anchors)

    kappa = cfg.kappa_rel * chi_hi
    chi_com = cfg.chi_com_rel * kappa
    comp_budget = 2.0 * chi_hi
    comp_used = 0.0
    lo, hi = 0.0, chi_hi
    best_p = None
    last_round_lo = 0.0
    trace = []
    warn = False
    n_solves = 0
    n_accept = 0

    while n_solves < cfg.max_bisect and n_accept < cfg.max_outer:
        chi = 0.5 * (lo + hi)
        step_cfg = cfg if cfg.psi is not None else SurrogateConfig(**{**cfg.__dict__, "psi": psi})
        p_new = qt_feasibility_step(problem, z, chi, anchors, step_cfg, _assembler=assembler)
        n_solves += 1
        if isinstance(p_new, _FailedType):
            warn = True
            p_new = None
        feasible = p_new is not None
        trace.append({"iteration": n_solves, "chi": chi, "chi_lower": lo if not feasible else chi,
                      "chi_upper": hi, "feasible": feasible})
        if feasible:
            lo = chi
            best_p = p_new
            anchors = p_new
            z = qt_update(problem, p_new)
            n_accept += 1
        else:
            hi = chi
        if hi - lo < kappa:
            if lo - last_round_lo <= kappa:
                break
            last_round_lo = lo
            if comp_used + chi_com > comp_budget:
                break
            hi += chi_com
            comp_used += chi_com
    else:
        warn = True

    if best_p is None:
        return empty

    budgets = problem.row_budget()
    gamma, p_final = recover_gamma(best_p, budgets, cfg.zeta)
    # keep at most one active row per exclusive slot (largest power wins)
    for idx in problem.excl_groups:
        if len(idx) < 2:
            continue
        for j in range(m_n):
            active = idx[gamma[idx, j] > 0]
            if len(active) > 1:
                keep = active[np.argmax(p_final[active, j])]
                drop = [r for r in active if r != keep]
                gamma[drop, j] = 0
                p_final[drop, j] = 0.0

    rates = rates_for_power(problem, p_final)
    per_row = {row: float(rates[i]) for i, row in enumerate(problem.rows)}
    return FronthaulSolution(rows=problem.rows, subcarriers=problem.subcarriers,
                             power=p_final, gamma=gamma, per_row_rate=per_row,
                             min_rate=float(rates.min()), chi_lower=lo, trace=trace,
                             warn=warn, n_solves=n_solves)


# ---------------------------------------------------------------------------
# Problem builders (shared by the CPU->CAP solve and its CAP->AP twin)
# ---------------------------------------------------------------------------

def build_cc_problem(cc_gains, assignment, partition, b_hz: float, p_cpu: float,
                     noise_var: float, si_var) -> FronthaulProblem:
    """CPU->CAP hop: rows (l, u), one shared CPU budget, slots per (l, m)."""
    m_idx = np.asarray(partition.m_cc, dtype=int)
    rows = [(l, u) for l in range(assignment.n_clusters)
            for u in sorted(assignment.served_devices[l])]
    r_n = len(rows)
    si = np.broadcast_to(np.asarray(si_var, dtype=float), (assignment.n_clusters,))
    sig = np.zeros((r_n, len(m_idx)))
    cross = np.zeros((r_n, r_n, len(m_idx)))
    floor = np.zeros(r_n)
    for i, (l, _) in enumerate(rows):
        sig[i] = cc_gains.sig[l, m_idx]
        floor[i] = noise_var + si[l]
        for ip, (lp, _) in enumerate(rows):
            if lp != l:
                cross[i, ip] = cc_gains.cross[l, lp, m_idx]
    groups = {}
    for i, (l, _) in enumerate(rows):
        groups.setdefault(l, []).append(i)
    return FronthaulProblem(
        rows=rows, sig=sig, cross=cross, floor=floor, b_hz=b_hz,
        budget_groups=[(np.arange(r_n), p_cpu)],
        excl_groups=[np.asarray(v) for v in groups.values() if len(v) >= 2],
        subcarriers=tuple(int(m) for m in m_idx),
    )


def build_ca_problem(ca_gains, assignment, partition, b_hz: float, p_ap: float,
                     noise_var: float) -> FronthaulProblem:
    """CAP->AP hop: rows (l, q, u), one budget per transmitting CAP, slots per (l, q, m).

    Singleton clusters have no receiving members and contribute no rows; their
    devices' CAP->AP leg is absent by construction.
    """
    m_idx = np.asarray(partition.m_ca, dtype=int)
    rows = [(l, q, u) for l in range(assignment.n_clusters)
            for q in assignment.receivers(l)
            for u in sorted(assignment.served_devices[l])]
    r_n = len(rows)
    sig = np.zeros((r_n, len(m_idx)))
    cross = np.zeros((r_n, r_n, len(m_idx)))
    floor = np.full(r_n, noise_var)
    for i, (l, q, _) in enumerate(rows):
        ri = ca_gains.recv_index[(l, q)]
        sig[i] = ca_gains.gain[ri, ca_gains.beam_index[(l, q)], m_idx]
        for ip, (lp, qp, _) in enumerate(rows):
            if (lp, qp) != (l, q):
                cross[i, ip] = ca_gains.gain[ri, ca_gains.beam_index[(lp, qp)], m_idx]
    budget, slots = {}, {}
    for i, (l, q, _) in enumerate(rows):
        budget.setdefault(l, []).append(i)
        slots.setdefault((l, q), []).append(i)
    return FronthaulProblem(
        rows=rows, sig=sig, cross=cross, floor=floor, b_hz=b_hz,
        budget_groups=[(np.asarray(v), p_ap) for v in budget.values()],
        excl_groups=[np.asarray(v) for v in slots.values() if len(v) >= 2],
        subcarriers=tuple(int(m) for m in m_idx),
    )
