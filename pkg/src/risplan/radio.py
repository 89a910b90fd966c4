"""Link-quality evaluation: effective channels, MRT precoding, SNR and rate.

Everything here recomputes from first principles so that solver output can be
certified independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet
from .scene import RadioConfig


class OutageError(ValueError):
    """Raised when an operation needs a nonzero channel but the UE is in outage."""


@dataclass(frozen=True)
class PhaseConfig:
    """Unit-modulus reflection coefficients phi[l, k, m] = exp(-j * varphi)."""

    phi: np.ndarray  # (L, K, M) complex

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.phi.shape

    @property
    def angles(self) -> np.ndarray:
        """Phase-shifts varphi in [0, 2*pi)."""
        return np.mod(-np.angle(self.phi), 2.0 * math.pi)

    @classmethod
    def from_angles(cls, varphi: np.ndarray) -> "PhaseConfig":
        return cls(phi=np.exp(-1j * np.asarray(varphi, dtype=float)))

    @classmethod
    def ones(cls, dims: tuple[int, int, int]) -> "PhaseConfig":
        return cls(phi=np.ones(dims, dtype=complex))


@dataclass
class DeploymentSolution:
    """A deployment: selected surfaces, per-UE phases and time shares.

    ``certified_rates`` / ``certified_snr_db`` are always recomputed from the
    channel model, never copied from a solver.
    """

    alpha: np.ndarray  # (L,) bool
    phases: PhaseConfig
    tau: np.ndarray  # (K,) in [0, 1]
    certified_rates: np.ndarray | None = None
    certified_snr_db: np.ndarray | None = None

    @property
    def selected_indices(self) -> list[int]:
        return [int(l) for l in np.flatnonzero(self.alpha)]

    @property
    def num_selected(self) -> int:
        return int(np.count_nonzero(self.alpha))

    def to_dict(self, thresholds_bps: np.ndarray | None = None) -> dict:
        L, K, M = self.phases.dims
        sel = self.selected_indices
        doc = {
            "num_candidates": L,
            "num_ues": K,
            "elements_per_ris": M,
            "selected_indices": sel,
            "tau": [float(t) for t in self.tau],
            "phase_rad": {str(l): self.phases.angles[l].tolist() for l in sel},
        }
        if thresholds_bps is not None:
            doc["thresholds_bps"] = [float(t) for t in np.atleast_1d(thresholds_bps)]
        if self.certified_rates is not None:
            doc["certified_rate_bps"] = [float(r) for r in self.certified_rates]
        if self.certified_snr_db is not None:
            doc["certified_snr_db"] = [float(s) for s in self.certified_snr_db]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "DeploymentSolution":
        L, K, M = doc["num_candidates"], doc["num_ues"], doc["elements_per_ris"]
        alpha = np.zeros(L, dtype=bool)
        alpha[doc["selected_indices"]] = True
        varphi = np.zeros((L, K, M))
        for l_str, angles in doc["phase_rad"].items():
            varphi[int(l_str)] = np.asarray(angles, dtype=float)
        sol = cls(
            alpha=alpha,
            phases=PhaseConfig.from_angles(varphi),
            tau=np.asarray(doc["tau"], dtype=float),
        )
        if "certified_rate_bps" in doc:
            sol.certified_rates = np.asarray(doc["certified_rate_bps"], dtype=float)
        if "certified_snr_db" in doc:
            sol.certified_snr_db = np.asarray(doc["certified_snr_db"], dtype=float)
        return sol


def effective_channel(
    h_k: np.ndarray,
    cascaded_k: np.ndarray,
    phases_k: np.ndarray,
    alpha: np.ndarray,
) -> np.ndarray:
    """h_k + sum_l alpha_l * H_{l,k} @ phi_{l,k} for one UE.

    ``cascaded_k`` is (L, N, M), ``phases_k`` is (L, M).
    """
    h_k = np.asarray(h_k, dtype=complex)
    cascaded_k = np.asarray(cascaded_k, dtype=complex)
    phases_k = np.asarray(phases_k, dtype=complex)
    alpha = np.asarray(alpha, dtype=float)
    L, N, M = cascaded_k.shape
    if h_k.shape != (N,) or phases_k.shape != (L, M) or alpha.shape != (L,):
        raise ValueError(
            f"dimension mismatch: h {h_k.shape}, cascaded {cascaded_k.shape}, "
            f"phases {phases_k.shape}, alpha {alpha.shape}"
        )
    if not np.any(alpha):
        return h_k.copy()
    return h_k + np.einsum("l,lnm,lm->n", alpha, cascaded_k, phases_k)


def mrt_precoder(effective: np.ndarray) -> np.ndarray:
    """Maximum ratio transmission: conj(effective) normalized to unit norm."""
    effective = np.asarray(effective, dtype=complex)
    nrm = np.linalg.norm(effective)
    if nrm == 0.0:
        raise OutageError("UE in outage: zero effective channel, MRT undefined")
    return effective.conj() / nrm


def snr(effective: np.ndarray, radio: RadioConfig) -> float:
    """Linear SNR ||effective||^2 * P / (B * N0) under MRT."""
    effective = np.asarray(effective, dtype=complex)
    power = float(np.vdot(effective, effective).real)
    return power * radio.tx_power_w / (radio.bandwidth_hz * radio.noise_psd_w_per_hz)


def rate(tau_k: float, snr_k: float, radio: RadioConfig) -> float:
    """Achievable rate tau * B * log2(1 + SNR) in bit/s."""
    if not 0.0 <= tau_k <= 1.0 + 1e-12:
        raise ValueError(f"time share must lie in [0, 1], got {tau_k}")
    return tau_k * radio.bandwidth_hz * math.log2(1.0 + snr_k)


def snr_db(value: float) -> float:
    """10*log10(SNR); -inf sentinel for outage."""
    return 10.0 * math.log10(value) if value > 0.0 else -math.inf


def aligned_phases_single_antenna(
    h_k: complex, cascaded_k: np.ndarray, alpha: np.ndarray
) -> np.ndarray:
    """Closed-form phase alignment for a single-antenna BS (N = 1).

    Rotates every cascaded entry onto the direct channel's phase so the

    effective amplitude reaches |h| + sum over selected surfaces of sum_m |H|.
    Returns a (L, M) unit-modulus phase slice for this UE.
    """
    cascaded_k = np.asarray(cascaded_k, dtype=complex)
    L, N, M = cascaded_k.shape
    if N != 1:
        raise ValueError("phase alignment in closed form requires a single BS antenna")
    ref = np.angle(h_k) if h_k != 0 else 0.0
    phases = np.ones((L, M), dtype=complex)
    selected = np.flatnonzero(np.asarray(alpha, dtype=bool))
    for l in selected:
        phases[l] = np.exp(1j * (ref - np.angle(cascaded_k[l, 0])))
    return phases


def random_phases(seed: int, dims: tuple[int, int, int]) -> PhaseConfig:
    """Uniform random phase-shifts in [0, 2*pi), deterministic per seed."""
    rng = np.random.default_rng(seed)
    return PhaseConfig.from_angles(rng.uniform(0.0, 2.0 * math.pi, size=dims))


@dataclass(frozen=True)
class UeReport:
    ue_index: int
    snr_db: float
    rate_bps: float
    tau: float
    feasible: bool


def evaluate_solution(
    channels: ChannelSet,
    solution: DeploymentSolution,
    radio: RadioConfig,
    thresholds_bps: np.ndarray | float,
) -> list[UeReport]:
    """Recompute per-UE SNR/rate from the channels and flag threshold feasibility.

    Pure function of its inputs; rates come from the stored alpha/phases/tau,
    never from any solver state.
    """
    K, L, M, N = channels.dims
    thresholds = np.broadcast_to(np.asarray(thresholds_bps, dtype=float), (K,))
    reports = []
    for k in range(K):
        eff = effective_channel(
            channels.h[k], channels.cascaded[:, k], solution.phases.phi[:, k], solution.alpha
        )
        s = snr(eff, radio)
        r = rate(float(solution.tau[k]), s, radio)
        feasible = r >= thresholds[k] - 1e-6 * thresholds[k]
        reports.append(
            UeReport(ue_index=k, snr_db=snr_db(s), rate_bps=r, tau=float(solution.tau[k]),
                     feasible=bool(feasible))
        )
    return reports


REPORT_CSV_HEADER = "ue_index,snr_db,rate_bps,tau,feasible"


def reports_to_csv(reports: list[UeReport]) -> str:
    lines = [REPORT_CSV_HEADER]
    for r in reports:
        lines.append(f"{r.ue_index},{r.snr_db!r},{r.rate_bps!r},{r.tau!r},{int(r.feasible)}")
    return "\n".join(lines) + "\n"


def reports_from_csv(text: str) -> list[UeReport]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != REPORT_CSV_HEADER:
        raise ValueError("malformed per-UE report CSV header")
    out = []
    for ln in lines[1:]:
        ue, s, r, t, f = ln.split(",")
        out.append(UeReport(int(ue), float(s), float(r), float(t), bool(int(f))))
    return out
