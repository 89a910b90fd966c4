"""Joint RIS selection, phase-shift, and time-share optimization.

The deployment problem (minimize the number of active surfaces subject to
per-UE rate thresholds) is non-convex twice over: binary selection variables
and an indefinite quadratic SNR constraint.  The quadratic is handled by
feasible-point-pursuit SCA: at each outer iteration the concave part is
replaced by its affine majorizer around the previous iterate and a penalized
slack keeps every subproblem feasible.  The resulting subproblem is a
mixed-integer conic program (nonnegative + second-order + exponential cones,
binary selection marks) solved exactly by branch-and-bound over the
continuous conic relaxation.

All SNR-like quantities inside the subproblem are expressed in units of
B*N0/P (i.e. channels are scaled by sqrt(P/(B*N0))), which turns the rate
constraint into ``quadratic form >= d_k - 1`` with O(1)-to-O(SNR) magnitudes
and keeps the interior-point solver well conditioned.  Slacks are therefore
dimensionless linear-SNR shortfalls.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .channel import ChannelSet
from .radio import DeploymentSolution, PhaseConfig, evaluate_solution
from .scene import RadioConfig


class DeploymentError(RuntimeError):
    """Raised when no certified-feasible deployment was found.

    Carries the iteration state so callers can inspect the slack trace.
    """

    def __init__(self, message: str, state: "ScaState | None" = None):
        super().__init__(message)
        self.state = state

    @property
    def slack_trace(self):
        return list(self.state.slack_trace) if self.state is not None else []


@dataclass
class QuadData:
    """Per-UE quadratic expansion data of the effective-channel norm.

    ``H[k]`` stacks the cascaded matrices of all candidates side by side
    (N x L*M, candidate-major, element-minor), so that
    ||h_k + H_k z||^2 = z^H A_k z + 2 Re(z^H b_k) + c_k with A_k = H_k^H H_k,
    b_k = H_k^H h_k, c_k = ||h_k||^2.  A_k has rank <= N and is only ever
    materialized on demand.
    """

    H: np.ndarray  # (K, N, L*M) complex
    b: np.ndarray  # (K, L*M) complex
    c: np.ndarray  # (K,) real
    dims: tuple[int, int, int, int]  # (K, L, M, N)

    def A(self, k: int) -> np.ndarray:
        return self.H[k].conj().T @ self.H[k]


def build_quad_data(channels: ChannelSet) -> QuadData:
    K, L, M, N = channels.dims
    H = np.empty((K, N, L * M), dtype=complex)
    for k in range(K):
        H[k] = np.concatenate([channels.cascaded[l, k] for l in range(L)], axis=1)
    b = np.einsum("knj,kn->kj", H.conj(), channels.h)
    c = np.einsum("kn,kn->k", channels.h.conj(), channels.h).real
    return QuadData(H=H, b=b, c=c, dims=(K, L, M, N))


@dataclass
class ScaState:
    """Iterate of the outer SCA loop."""

    z: np.ndarray  # (K, L*M) complex linearization points
    r: int = 0
    omega: float = 100.0
    epsilon: float = 1e-3
    max_iters: int = 25
    slack_trace: list[float] = field(default_factory=list)
    objective_trace: list[float] = field(default_factory=list)
    rate_trace: list[np.ndarray] = field(default_factory=list)
    selected_trace: list[int] = field(default_factory=list)


@dataclass
class P3Variables:
    """Index map of one subproblem's variables."""

    alpha: list[int]
    tau: list[int]
    tau_tilde: list[int]
    d: list[int]
    s: list[int]
    z: list[conic.ComplexVars]


def build_p3(
    quad: QuadData,
    state: ScaState,
    thresholds: np.ndarray,
    radio: RadioConfig,
) -> tuple[conic.ConicProgram, P3Variables]:
    """Assemble the convexified subproblem around ``state.z``.

    Variables: binary selection alpha_l; per UE k the time share tau_k, its
    reciprocal bound tau_tilde_k, the lifted complex vector z_k, the SNR proxy
    d_k and the feasibility slack s_k.  Objective: sum(alpha) + omega * sum(s).
    """
    K, L, M, N = quad.dims
    thresholds = np.broadcast_to(np.asarray(thresholds, dtype=float), (K,))
    snr_scale = radio.tx_power_w / (radio.bandwidth_hz * radio.noise_psd_w_per_hz)
    root = math.sqrt(snr_scale)

    prog = conic.ConicProgram()
    alpha = prog.add_vars(L, "alpha")
    for a in alpha:
        prog.mark_binary(a)
        prog.add_objective_term(a, 1.0)
    tau = prog.add_vars(K, "tau")
    tau_tilde = prog.add_vars(K, "taut")
    d = prog.add_vars(K, "d")
    s = prog.add_vars(K, "s")
    z = [conic.realify(prog, L * M, f"z{k}") for k in range(K)]
    for sk in s:
        prog.add_objective_term(sk, state.omega)

    # sum of time shares bounded by one frame
    prog.add_nonneg(conic.lin({t: -1.0 for t in tau}, 1.0))

    for k in range(K):
        Ht = quad.H[k] * root  # channel in sqrt-SNR units
        bt = quad.b[k] * snr_scale
        ct = float(quad.c[k] * snr_scale)
        zeta = state.z[k]
        Hz = Ht @ zeta
        v = Ht.conj().T @ Hz  # A_k zeta without forming A_k
        quad_at_zeta = float(np.vdot(Hz, Hz).real)

        # majorized SNR constraint:
        # s_k + c_k + (1 - d_k) + 2 Re(v^H z) + 2 Re(b^H z) - zeta^H A zeta >= 0
        expr = z[k].re_inner(2.0 * (v + bt))
        expr.terms[s[k]] = 1.0
        expr.terms[d[k]] = -1.0
        expr.const = ct + 1.0 - quad_at_zeta
        prog.add_nonneg(expr)

        prog.add_nonneg(conic.lin({s[k]: 1.0}))
        conic.add_time_allocation_soc(prog, tau[k], tau_tilde[k])
        conic.add_rate_expcone(prog, d[k], tau_tilde[k], float(thresholds[k]),
                               radio.bandwidth_hz)
        for i in range(L * M):
            conic.add_modulus_bound(prog, z[k], i, conic.lin({alpha[i // M]: 1.0}))

    handles = P3Variables(alpha=alpha, tau=tau, tau_tilde=tau_tilde, d=d, s=s, z=z)
    return prog, handles


# --- branch and bound -----------------------------------------------------------


@dataclass
class BnbNode:
    fixed_zero: frozenset[int]
    fixed_one: frozenset[int]
    relaxation_bound: float
    depth: int


def _fractional_marks(prog: conic.ConicProgram, x: np.ndarray, tol: float = 1e-6):
    out = []
    for i in sorted(prog.binary_marks):
        frac = min(x[i], 1.0 - x[i])
        if frac > tol:
            out.append((i, frac))
    return out


def branch_and_bound(
    prog: conic.ConicProgram,
    gap_tol: float = 1e-6,
    *,
    tolerances: conic.SolverTolerances | None = None,
    node_limit: int = 100_000,
    hint: dict[int, float] | None = None,
) -> conic.ConicSolution:
    """Exact minimization over the binary marks via best-first branch-and-bound.

    Branches on the most fractional mark (lowest index on ties); a node is
    pruned when its relaxation bound cannot improve the incumbent by more
    than ``gap_tol``.  ``hint`` optionally seeds the incumbent with a known
    promising mark assignment (it never affects exactness, only pruning).
    Exceeding ``node_limit`` returns the incumbent with status ``IterLimit``.
    """
    if not prog.binary_marks:
        raise ValueError("branch_and_bound requires at least one binary mark")

    def node_solve(fixed: dict[int, float]) -> conic.ConicSolution:
        return conic.solve(prog, tolerances, fixed_values=fixed)

    incumbent: conic.ConicSolution | None = None
    incumbent_obj = math.inf

    def consider(sol: conic.ConicSolution):
        nonlocal incumbent, incumbent_obj
        if sol.objective_value < incumbent_obj:
            incumbent, incumbent_obj = sol, sol.objective_value

    root = node_solve({})
    nodes_used = 1
    if root.status == conic.INFEASIBLE:
        return root
    if root.status in (conic.UNBOUNDED, conic.NUMERICAL_FAILURE) or root.primal is None:
        return root
    fractional = _fractional_marks(prog, root.primal)
    if not fractional:
        return root

    # ceiling-rounding heuristic: any fractionally-used mark is pinned to one,
    # which for a minimum-count objective gives a strong initial incumbent
    rounded = {i: (1.0 if root.primal[i] > 1e-6 else 0.0) for i in prog.binary_marks}
    warm = node_solve(rounded)
    nodes_used += 1
    if warm.status == conic.OPTIMAL:
        consider(warm)

    if hint is not None:
        full_hint = {i: float(round(hint.get(i, 0.0))) for i in prog.binary_marks}
        if full_hint != rounded:
            hinted = node_solve(full_hint)
            nodes_used += 1
            if hinted.status == conic.OPTIMAL:
                consider(hinted)

    counter = 0
    heap: list[tuple[float, int, dict[int, float]]] = []
    root_branch = max(fractional, key=lambda t: (t[1], -t[0]))[0]
    for value in (0.0, 1.0):
        counter += 1
        heapq.heappush(heap, (root.objective_value, counter, {root_branch: value}))

    while heap:
        bound, _, fixed = heapq.heappop(heap)
        if bound >= incumbent_obj - gap_tol:
            break  # best-first: every remaining node is at least as weak
        if nodes_used >= node_limit:
            if incumbent is not None:
                return conic.ConicSolution(
                    status=conic.ITER_LIMIT,
                    primal=incumbent.primal,
                    objective_value=incumbent.objective_value,
                    max_cone_violation=incumbent.max_cone_violation,
                    rel_gap=incumbent.rel_gap,
                    dual_objective_value=incumbent.dual_objective_value,
                )
            return conic.ConicSolution(conic.ITER_LIMIT, None, None, math.inf, math.inf)

        sol = node_solve(fixed)
        nodes_used += 1
        if sol.status == conic.INFEASIBLE:
            continue
        if sol.status != conic.OPTIMAL or sol.primal is None:
            # cannot trust this relaxation; keep exploring from the parent bound
            sol = None
        if sol is not None:
            bound = max(bound, sol.objective_value)
            if bound >= incumbent_obj - gap_tol:
                continue
            fractional = _fractional_marks(prog, sol.primal)
            if not fractional:
                consider(sol)
                continue
            branch_var = max(fractional, key=lambda t: (t[1], -t[0]))[0]
        else:
            remaining = [i for i in sorted(prog.binary_marks) if i not in fixed]
            if not remaining:
                continue
            branch_var = remaining[0]
        for value in (0.0, 1.0):
            child = dict(fixed)
            child[branch_var] = value
            counter += 1
            heapq.heappush(heap, (bound, counter, child))

    if incumbent is not None:
        return incumbent
    return conic.ConicSolution(conic.INFEASIBLE, None, None, math.inf, math.inf)


# --- SCA outer loop --------------------------------------------------------------


def normalize_z(z: np.ndarray, alpha: np.ndarray, delta: float = 1e-8) -> np.ndarray:
    """Push entries of selected surfaces onto the unit circle.

    Entries of unselected surfaces, and entries below ``delta`` in magnitude,
    are set to exactly zero so they stop influencing later linearizations.
    """
    z = np.asarray(z, dtype=complex)
    alpha = np.asarray(alpha, dtype=bool)
    M = z.shape[-1] // alpha.shape[0]
    selected = np.repeat(alpha, M)[None, :] if z.ndim == 2 else np.repeat(alpha, M)
    mag = np.abs(z)
    keep = selected & (mag > delta)
    out = np.zeros_like(z)
    np.divide(z, mag, out=out, where=keep)
    return out


@dataclass(frozen=True)
class FppScaConfig:
    """Settings of the outer loop and its subproblem solves."""

    seed: int = 0
    omega: float = 100.0
    epsilon: float = 1e-3
    max_iters: int = 25
    bnb_gap_tol: float = 1e-6
    node_limit: int = 100_000
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    normalize_delta: float = 1e-8
    slack_converged: float = 1e-8
    objective_stall_iters: int = 2


def _phases_from_z(z: np.ndarray, alpha: np.ndarray, dims) -> PhaseConfig:
    """PhaseConfig from normalized z; unselected surfaces get inert unit phases."""
    K, L, M, N = dims
    phi = np.ones((L, K, M), dtype=complex)
    for k in range(K):
        blocks = z[k].reshape(L, M)
        for l in range(L):
            if alpha[l]:
                entries = blocks[l].copy()
                entries[entries == 0] = 1.0  # zero-magnitude entries carry no phase
                phi[l, k] = entries
    return PhaseConfig(phi=phi)


def _repair_time_shares(
    snr_lin: np.ndarray, thresholds: np.ndarray, bandwidth: float
) -> np.ndarray | None:
    """Feasible time shares for fixed per-UE SNRs, or None if the budget fails.

    Solves the tau-only restriction exactly: each UE needs
    tau_k >= threshold_k / (B log2(1 + SNR_k)); remaining budget is spread
    proportionally.
    """
    K = len(snr_lin)
    need = np.zeros(K)
    for k in range(K):
        if thresholds[k] <= 0.0:
            continue
        cap = bandwidth * math.log2(1.0 + snr_lin[k])
        if cap <= 0.0:
            return None
        need[k] = thresholds[k] / cap
    total = need.sum()
    if total > 1.0 + 1e-12:
        return None
    if total == 0.0:
        return np.full(K, 1.0 / K)
    return need / total


def _certify(
    channels: ChannelSet,
    alpha: np.ndarray,
    phases: PhaseConfig,
    tau: np.ndarray,
    thresholds: np.ndarray,
    radio: RadioConfig,
) -> DeploymentSolution | None:
    """Recompute rates at unit-modulus phases; repair time shares if needed."""
    candidate = DeploymentSolution(alpha=alpha, phases=phases, tau=tau)
    reports = evaluate_solution(channels, candidate, radio, thresholds)
    if not all(r.feasible for r in reports):
        snr_lin = np.array([10.0 ** (r.snr_db / 10.0) if math.isfinite(r.snr_db) else 0.0
                            for r in reports])
        repaired = _repair_time_shares(snr_lin, thresholds, radio.bandwidth_hz)
        if repaired is None:
            return None
        candidate = DeploymentSolution(alpha=alpha, phases=phases, tau=repaired)
        reports = evaluate_solution(channels, candidate, radio, thresholds)
        if not all(r.feasible for r in reports):
            return None
    candidate.certified_rates = np.array([r.rate_bps for r in reports])
    candidate.certified_snr_db = np.array([r.snr_db for r in reports])
    return candidate


def fpp_sca(
    channels: ChannelSet,
    thresholds: np.ndarray | float,
    radio: RadioConfig,
    config: FppScaConfig | None = None,
) -> tuple[DeploymentSolution, ScaState]:
    """Run the penalized-SCA outer loop and certify the resulting deployment.

    Starts from random unit-modulus linearization points, solves the
    mixed-integer conic subproblem exactly each iteration, renormalizes the
    iterate, and stops when the iterates stabilize (or the slack hits zero
    and the objective stalls).  The returned solution is always certified
    against the exact rate expressions; raises :class:`DeploymentError` when
    no iterate certifies.
    """
    config = config or FppScaConfig()
    K, L, M, N = channels.dims
    thresholds = np.broadcast_to(np.asarray(thresholds, dtype=float), (K,)).copy()

    quad = build_quad_data(channels)
    rng = np.random.default_rng(config.seed)
    z = np.exp(2j * math.pi * rng.uniform(size=(K, L * M)))
    state = ScaState(z=z, omega=config.omega, epsilon=config.epsilon,
                     max_iters=config.max_iters)
    tolerances = conic.SolverTolerances(feas_tol=config.feas_tol, gap_tol=config.gap_tol)

    best: DeploymentSolution | None = None
    final: DeploymentSolution | None = None
    hint: dict[int, float] | None = None

    while state.r < state.max_iters:
        prog, handles = build_p3(quad, state, thresholds, radio)
        sol = branch_and_bound(prog, config.bnb_gap_tol, tolerances=tolerances,
                               node_limit=config.node_limit, hint=hint)
        if sol.primal is None:
            raise DeploymentError(
                f"subproblem solve failed with status {sol.status} at iteration "
                f"{state.r + 1}", state)
        x = sol.primal
        alpha = np.array([x[a] > 0.5 for a in handles.alpha])
        hint = {a: float(alpha[i]) for i, a in enumerate(handles.alpha)}
        tau = np.clip(np.array([x[t] for t in handles.tau]), 0.0, 1.0)
        slack_sum = float(sum(max(0.0, x[sk]) for sk in handles.s))
        z_raw = np.stack([handles.z[k].value(x) for k in range(K)])
        z_new = normalize_z(z_raw, alpha, config.normalize_delta)

        phases = _phases_from_z(z_new, alpha, (K, L, M, N))
        certified = _certify(channels, alpha, phases, tau, thresholds, radio)

        state.r += 1
        state.slack_trace.append(slack_sum)
        state.objective_trace.append(float(sol.objective_value))
        state.selected_trace.append(int(np.count_nonzero(alpha)))
        if certified is not None:
            state.rate_trace.append(certified.certified_rates.copy())
            final = certified
            if best is None or (certified.num_selected, -min(certified.certified_rates)) < (
                best.num_selected, -min(best.certified_rates)
            ):
                best = certified
        else:
            state.rate_trace.append(np.full(K, math.nan))
            final = None

        step = float(np.sum(np.abs(z_new - state.z) ** 2))
        state.z = z_new
        if step <= state.epsilon:
            break
        # secondary stop: slack has vanished and the objective has stalled
        if (
            slack_sum <= config.slack_converged
            and len(state.objective_trace) >= config.objective_stall_iters
            and abs(state.objective_trace[-1] - state.objective_trace[-2]) <= 1e-9
        ):
            break

    result = final if final is not None else best
    if result is None:
        raise DeploymentError(
            f"no certified-feasible deployment after {state.r} iterations "
            f"(final slack sum {state.slack_trace[-1] if state.slack_trace else math.nan:.3g})",
            state,
        )
    return result, state


# --- threshold sweep --------------------------------------------------------------


@dataclass
class SweepRow:
    threshold_bps: float
    num_ris: int
    selected_indices: list[int]
    min_rate_bps: float
    iters: int
    error: str | None = None
    solution: DeploymentSolution | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def run_threshold_sweep(
    channels: ChannelSet,
    thresholds_bps: list[float],
    radio: RadioConfig,
    config: FppScaConfig | None = None,
    *,
    monotone_repair: bool = True,
) -> list[SweepRow]:
    """Run the optimizer once per threshold (ascending) and tabulate results.

    A deployment certified at threshold t is feasible for any t' < t with the
    same time shares, so with ``monotone_repair`` each row may adopt a
    cheaper deployment found at a higher threshold; per-threshold failures
    are recorded and the sweep continues.
    """
    if list(thresholds_bps) != sorted(thresholds_bps):
        raise ValueError("thresholds must be sorted ascending")
    rows: list[SweepRow] = []
    for thr in thresholds_bps:
        try:
            sol, state = fpp_sca(channels, float(thr), radio, config)
            rows.append(SweepRow(
                threshold_bps=float(thr),
                num_ris=sol.num_selected,
                selected_indices=sol.selected_indices,
                min_rate_bps=float(np.min(sol.certified_rates)),
                iters=state.r,
                solution=sol,
            ))
        except DeploymentError as err:
            rows.append(SweepRow(
                threshold_bps=float(thr), num_ris=-1, selected_indices=[],
                min_rate_bps=math.nan, iters=err.state.r if err.state else 0,
                error=str(err),
            ))
    if monotone_repair:
        for i in range(len(rows) - 2, -1, -1):
            donor = rows[i + 1]
            row = rows[i]
            if not donor.ok or donor.solution is None:
                continue
            if not row.ok or donor.num_ris < row.num_ris:
                adopted = evaluate_solution(channels, donor.solution, radio,
                                            row.threshold_bps)
                if all(r.feasible for r in adopted):
                    rows[i] = SweepRow(
                        threshold_bps=row.threshold_bps,
                        num_ris=donor.num_ris,
                        selected_indices=list(donor.selected_indices),
                        min_rate_bps=float(min(r.rate_bps for r in adopted)),
                        iters=row.iters,
                        solution=donor.solution,
                    )
    return rows


CONVERGENCE_CSV_HEADER = "iter,sum_slack,objective,min_rate_bps,num_selected_ris"


def convergence_trace_csv(state: ScaState) -> str:
    """Per-iteration trace; ``min_rate_bps`` is nan for uncertified iterates."""
    lines = [CONVERGENCE_CSV_HEADER]
    for i in range(state.r):
        min_rate = float(np.min(state.rate_trace[i])) if i < len(state.rate_trace) else math.nan
        count = state.selected_trace[i] if i < len(state.selected_trace) else -1
        lines.append(
            f"{i + 1},{state.slack_trace[i]!r},{state.objective_trace[i]!r},"
            f"{min_rate!r},{count}"
        )
    return "\n".join(lines) + "\n"
