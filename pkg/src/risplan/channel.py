"""Deterministic channel synthesis and channel-file import/export.

Channels are frequency-flat complex gains.  The synthetic generator is a pure
LOS model: every link gets a free-space amplitude lambda/(4*pi*d) with the
propagation phase exp(-j*2*pi*d/lambda) and planar-array steering vectors at
each array end.  Direct BS-UE links additionally pay a per-row blockage loss,
and any link whose total attenuation exceeds a floor is forced to exactly
zero, which reproduces the outage regime that makes RIS deployment necessary.
Ray-traced channels can be brought in through the CIR text format instead.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .scene import CabinScene, RadioConfig, validate

# power scale (lambda/4)^2 / (lambda^2 / (4*pi)) applied to RIS-involving links:
# element aperture over isotropic effective area; the wavelength cancels.
RIS_AREA_POWER_SCALE = math.pi / 4.0

AREA_SCALING_MODES = ("per-link", "per-composite")


class ScenarioError(ValueError):
    """Raised when channel synthesis is asked to run on an invalid scene."""

    def __init__(self, violations: list[str]):
        super().__init__("invalid scenario: " + "; ".join(violations))
        self.violations = violations


class CirFormatError(ValueError):
    """Raised on malformed CIR files; message names the offending line."""


@dataclass(frozen=True)
class SynthModel:
    """Knobs of the synthetic LOS + blockage channel generator.

    ``human_body_loss_db`` is the standard single-body reference attenuation;
    it is informational and not part of the per-row loss formula.
    ``area_scaling`` selects whether the pi/4 aperture factor is applied to
    both RIS-involving links or once per BS-RIS-UE composite.
    """

    blockage_loss_per_row_db: float = 15.0
    human_body_loss_db: float = 30.0
    nlos_ray_count: int = 0
    seed: int = 0
    zero_floor_db: float = 180.0
    area_scaling: str = "per-link"

    def __post_init__(self):
        if self.blockage_loss_per_row_db < 0 or self.human_body_loss_db < 0:
            raise ValueError("losses must be nonnegative")
        if self.area_scaling not in AREA_SCALING_MODES:
            raise ValueError(f"area_scaling must be one of {AREA_SCALING_MODES}")


@dataclass(frozen=True)
class ChannelSet:
    """All deterministic channels of one scenario.

    h[k]            direct BS->UE channel, length N
    G[l]            BS->RIS channel, M x N
    g[l, k]         RIS->UE channel, length M
    cascaded[l, k]  G[l].T @ diag(g[l, k]), N x M
    """

    h: np.ndarray
    G: np.ndarray
    g: np.ndarray
    cascaded: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(K, L, M, N)"""
        K, N = self.h.shape
        L, M, _ = self.G.shape
        return K, L, M, N

    @classmethod
    def from_links(cls, h: np.ndarray, G: np.ndarray, g: np.ndarray) -> "ChannelSet":
        h = np.asarray(h, dtype=complex)
        G = np.asarray(G, dtype=complex)
        g = np.asarray(g, dtype=complex)
        K, N = h.shape
        L, M, N2 = G.shape
        if N2 != N or g.shape != (L, K, M):
            raise ValueError(
                f"inconsistent link dimensions: h {h.shape}, G {G.shape}, g {g.shape}"
            )
        for arr, name in ((h, "h"), (G, "G"), (g, "g")):
            if not np.all(np.isfinite(arr.view(float))):
                raise ValueError(f"non-finite entries in {name}")
        cascaded = np.empty((L, K, N, M), dtype=complex)
        for l in range(L):
            for k in range(K):
                cascaded[l, k] = cascade(G[l], g[l, k])
        return cls(h=h, G=G, g=g, cascaded=cascaded)


def steering_vector(
    side_counts: tuple[int, int],
    spacing: float,
    wavelength: float,
    direction: np.ndarray,
) -> np.ndarray:
    """Planar-array steering vector exp(-j*2*pi/lambda * (p_i . direction)).

    Elements sit on a corner-anchored grid in the local array plane,
    p = (i1*spacing, i2*spacing, 0) with i2 varying fastest; ``direction`` is
    a unit vector in the same local frame (third component along the normal).
    """
    if spacing <= 0.0:
        raise ValueError("spacing must be positive")
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError(f"direction must be a unit vector, got norm {np.linalg.norm(d)!r}")
    n1, n2 = side_counts
    i1 = np.arange(n1) * spacing
    i2 = np.arange(n2) * spacing
    proj = (i1[:, None] * d[0] + i2[None, :] * d[1]).ravel()
    return np.exp(-2j * math.pi / wavelength * proj)


def apply_ris_area_scaling(channel: np.ndarray) -> np.ndarray:
    """Scale a BS->RIS or RIS->UE link by the pi/4 element-aperture power factor."""
    return np.asarray(channel, dtype=complex) * math.sqrt(RIS_AREA_POWER_SCALE)


def cascade(G_l: np.ndarray, g_lk: np.ndarray) -> np.ndarray:
    """Cascaded BS->RIS->UE channel G^T diag(g): entry [n, m] = G[m, n] * g[m]."""
    G_l = np.asarray(G_l, dtype=complex)
    g_lk = np.asarray(g_lk, dtype=complex)
    if G_l.ndim != 2 or g_lk.ndim != 1 or G_l.shape[0] != g_lk.shape[0]:
        raise ValueError(f"dimension mismatch: G {G_l.shape}, g {g_lk.shape}")
    return G_l.T * g_lk[None, :]


def _orthonormal_frame(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic right-handed (u, v, n) frame for an array plane."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    ref = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(ref, n)
    u = u / np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v, n


def _local_direction(frame, global_dir: np.ndarray) -> np.ndarray:
    u, v, n = frame
    return np.array([global_dir @ u, global_dir @ v, global_dir @ n])


def _los_amplitude(dist: float, wavelength: float) -> complex:
    return wavelength / (4.0 * math.pi * dist) * cmath.exp(-2j * math.pi * dist / wavelength)


def _blocked_row_count(row_xs: np.ndarray, bs_x: float, ue_x: float) -> int:
    """Seat rows strictly between the BS and the UE, not counting the first."""
    lo, hi = sorted((bs_x, ue_x))
    between = int(np.count_nonzero((row_xs > lo) & (row_xs < hi)))
    return max(0, between - 1)


def _scatter_rays(rng, count: int, los_amp: float, wavelength: float,
                  frame, side_counts, spacing) -> np.ndarray:
    """Weak random multipath components on top of the LOS term."""
    n = side_counts[0] * side_counts[1]
    total = np.zeros(n, dtype=complex)
    for _ in range(count):
        extra_db = 10.0 + 10.0 * rng.uniform()
        amp = los_amp * 10.0 ** (-extra_db / 20.0) * cmath.exp(2j * math.pi * rng.uniform())
        raw = rng.normal(size=3)
        gdir = raw / np.linalg.norm(raw)
        total += amp * steering_vector(side_counts, spacing, wavelength,
                                       _local_direction(frame, gdir))
    return total


def synth_channel_set(
    scene: CabinScene, radio: RadioConfig, model: SynthModel
) -> ChannelSet:
    """Generate the deterministic LOS channel set for a scene.

    Deterministic given ``model.seed``; two calls with identical inputs are
    bit-identical.
    """
    violations = validate(scene, radio)
    if violations:
        raise ScenarioError(violations)

    rng = np.random.default_rng(model.seed)
    lam = radio.wavelength
    nb = radio.bs_antennas_per_side
    bs_side = (nb, nb)
    N = radio.num_bs_antennas
    K = scene.num_ues
    L = scene.num_candidates

    bs_pos = np.asarray(scene.bs_position)
    bs_frame = _orthonormal_frame(np.array([0.0, 0.0, -1.0]))  # ceiling mount, facing down
    row_xs = scene.row_centers_x()

    h = np.zeros((K, N), dtype=complex)
    for k, ue in enumerate(scene.ue_array()):
        delta = ue - bs_pos
        dist = float(np.linalg.norm(delta))
        gdir = delta / dist
        blocked = _blocked_row_count(row_xs, bs_pos[0], ue[0])
        loss_db = model.blockage_loss_per_row_db * blocked
        amp = abs(_los_amplitude(dist, lam))
        attenuation_db = -20.0 * math.log10(amp) + loss_db
        if attenuation_db > model.zero_floor_db:
            continue  # fully blocked: exact zero
        gain = _los_amplitude(dist, lam) * 10.0 ** (-loss_db / 20.0)
        h[k] = gain * steering_vector(bs_side, radio.bs_spacing, lam,
                                      _local_direction(bs_frame, gdir))
        if model.nlos_ray_count:
            h[k] += _scatter_rays(
                rng, model.nlos_ray_count, abs(gain), lam, bs_frame, bs_side, radio.bs_spacing
            )

    scale_g_link = math.sqrt(RIS_AREA_POWER_SCALE)
    scale_big_g_link = scale_g_link if model.area_scaling == "per-link" else 1.0

    M = scene.ris_candidates[0].num_elements if L else 0
    G = np.zeros((L, M, N), dtype=complex)
    g = np.zeros((L, K, M), dtype=complex)
    for l, cand in enumerate(scene.ris_candidates):
        if cand.num_elements != M:
            raise ScenarioError([f"ris {l}: mixed element counts are not supported"])
        ris_pos = np.asarray(cand.center)
        ris_frame = _orthonormal_frame(np.asarray(cand.normal))
        ris_side = (cand.elements_per_side, cand.elements_per_side)

        delta = bs_pos - ris_pos
        dist = float(np.linalg.norm(delta))
        amp = _los_amplitude(dist, lam)
        if -20.0 * math.log10(abs(amp)) <= model.zero_floor_db:
            a_ris = steering_vector(ris_side, cand.element_spacing, lam,
                                    _local_direction(ris_frame, delta / dist))
            a_bs = steering_vector(bs_side, radio.bs_spacing, lam,
                                   _local_direction(bs_frame, -delta / dist))
            G[l] = scale_big_g_link * amp * np.outer(a_ris, a_bs)
            if model.nlos_ray_count:
                rays = _scatter_rays(rng, model.nlos_ray_count, abs(amp), lam,
                                     ris_frame, ris_side, cand.element_spacing)
                G[l] += scale_big_g_link * np.outer(rays, a_bs)

        for k, ue in enumerate(scene.ue_array()):
            delta = ue - ris_pos
            dist = float(np.linalg.norm(delta))
            amp = _los_amplitude(dist, lam)
            if -20.0 * math.log10(abs(amp)) > model.zero_floor_db:
                continue
            g[l, k] = scale_g_link * amp * steering_vector(
                ris_side, cand.element_spacing, lam,
                _local_direction(ris_frame, delta / dist))
            if model.nlos_ray_count:
                g[l, k] += scale_g_link * _scatter_rays(
                    rng, model.nlos_ray_count, abs(amp), lam,
                    ris_frame, ris_side, cand.element_spacing)

    return ChannelSet.from_links(h, G, g)


# --- CIR text format ---------------------------------------------------------
#
# line 1:  CIR v1 K=<k> L=<l> M=<m> N=<n>
# records: D <k> <n> <re> <im>      direct BS->UE
#          G <l> <m> <n> <re> <im>  BS->RIS
#          R <l> <k> <m> <re> <im>  RIS->UE
# Records may appear in any order; every index combination exactly once.

_RECORD_ARITY = {"D": 2, "G": 3, "R": 3}


def export_cir(channels: ChannelSet, path) -> None:
    """Write a channel set in canonical record order with full float precision."""
    K, L, M, N = channels.dims
    with open(path, "w") as f:
        f.write(f"CIR v1 K={K} L={L} M={M} N={N}\n")
        for k in range(K):
            for n in range(N):
                c = channels.h[k, n]
                f.write(f"D {k} {n} {c.real!r} {c.imag!r}\n")
        for l in range(L):
            for m in range(M):
                for n in range(N):
                    c = channels.G[l, m, n]
                    f.write(f"G {l} {m} {n} {c.real!r} {c.imag!r}\n")
        for l in range(L):
            for k in range(K):
                for m in range(M):
                    c = channels.g[l, k, m]
                    f.write(f"R {l} {k} {m} {c.real!r} {c.imag!r}\n")


def import_cir(path) -> ChannelSet:
    """Read a CIR file; cascaded channels are recomputed on import."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise CirFormatError("line 1: empty file, expected 'CIR v1 K=.. L=.. M=.. N=..'")

    header = lines[0].split()
    if (
        len(header) != 6
        or header[0] != "CIR"
        or header[1] != "v1"
        or not all(p.startswith(pre + "=") for p, pre in zip(header[2:], "KLMN"))
    ):
        raise CirFormatError(f"line 1: malformed header {lines[0]!r}")
    try:
        K, L, M, N = (int(p.split("=", 1)[1]) for p in header[2:])
    except ValueError:
        raise CirFormatError(f"line 1: non-integer dimension in header {lines[0]!r}") from None
    if min(K, L, M, N) < 0:
        raise CirFormatError("line 1: dimensions must be nonnegative")

    h = np.zeros((K, N), dtype=complex)
    G = np.zeros((L, M, N), dtype=complex)
    g = np.zeros((L, K, M), dtype=complex)
    bounds = {"D": (K, N), "G": (L, M, N), "R": (L, K, M)}
    seen: set[tuple] = set()
    found = 0
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split()
        kind = parts[0]
        if kind not in _RECORD_ARITY:
            raise CirFormatError(f"line {lineno}: unknown record type {kind!r}")
        arity = _RECORD_ARITY[kind]
        if len(parts) != 1 + arity + 2:
            raise CirFormatError(f"line {lineno}: expected {1 + arity + 2} fields, found {len(parts)}")
        try:
            idx = tuple(int(p) for p in parts[1 : 1 + arity])
            re, im = float(parts[-2]), float(parts[-1])
        except ValueError:
            raise CirFormatError(f"line {lineno}: malformed record {raw!r}") from None
        if not (math.isfinite(re) and math.isfinite(im)):
            raise CirFormatError(f"line {lineno}: non-finite channel entry")
        for i, bound in zip(idx, bounds[kind]):
            if not 0 <= i < bound:
                raise CirFormatError(f"line {lineno}: index {i} out of range for {kind} record")
        key = (kind,) + idx
        if key in seen:
            raise CirFormatError(f"line {lineno}: duplicate record {kind} {idx}")
        seen.add(key)
        value = complex(re, im)
        if kind == "D":
            h[idx] = value
        elif kind == "G":
            G[idx] = value
        else:
            g[idx] = value
        found += 1

    expected = K * N + L * M * N + L * K * M
    if found != expected:
        raise CirFormatError(f"expected {expected} records, found {found}")
    return ChannelSet.from_links(h, G, g)
