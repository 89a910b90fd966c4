"""Cabin scenario definition: geometry, candidate RIS placements, radio parameters.

A scene is plain immutable data.  The default generator lays out a single-aisle
cabin with one UE per seat, a ceiling-mounted BS in the middle of the cabin,
and two wall-mounted RIS candidate positions per seat row (one on each side of
the corridor, centered above the middle seats, reflective side facing the BS).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT_M_S = 299_792_458.0

Vec3 = tuple[float, float, float]

# Dielectric properties at 28 GHz, kept as inert metadata so imported scenes
# preserve provenance.  Not used in any computation (no EM solver here).
DEFAULT_MATERIALS: dict[str, dict[str, float]] = {
    "skin": {"epsilon": 19.3, "sigma": 30.40, "thickness_cm": 0.1},
    "abs_shell": {"epsilon": 2.4, "sigma": 0.028, "thickness_cm": 0.3},
    "nylon_seat": {"epsilon": 3.01, "sigma": 0.03, "thickness_cm": 0.25},
    "glass_window": {"epsilon": 6.27, "sigma": 0.15, "thickness_cm": 0.3},
}


@dataclass(frozen=True)
class RadioConfig:
    """Carrier, bandwidth, transmit power, BS array shape, and noise model.

    Power is stored in dBm and the noise model as a noise figure over the
    290 K thermal floor so that configuration files round-trip exactly;
    the linear quantities are derived properties.
    """

    carrier_hz: float = 28e9
    bandwidth_hz: float = 1e9
    tx_power_dbm: float = 25.0
    bs_antennas_per_side: int = 8
    noise_figure_db: float = 7.0

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT_M_S / self.carrier_hz

    @property
    def tx_power_w(self) -> float:
        return 10.0 ** ((self.tx_power_dbm - 30.0) / 10.0)

    @property
    def noise_psd_w_per_hz(self) -> float:
        # thermal floor -174 dBm/Hz at 290 K plus receiver noise figure
        return 10.0 ** ((-174.0 + self.noise_figure_db - 30.0) / 10.0)

    @property
    def bs_spacing(self) -> float:
        return self.wavelength / 2.0

    @property
    def num_bs_antennas(self) -> int:
        return self.bs_antennas_per_side**2


@dataclass(frozen=True)
class RisCandidate:
    """One potential RIS placement: a square reflective array of M elements."""

    center: Vec3
    normal: Vec3
    elements_per_side: int
    element_spacing: float

    @property
    def num_elements(self) -> int:
        return self.elements_per_side**2


@dataclass(frozen=True)
class CabinScene:
    """Geometry of one coverage-planning scenario.

    The cabin bounding box is [0, length] x [-width/2, width/2] x [0, height].
    UE index k = row * seats_per_row + seat, seats ordered by increasing
    lateral coordinate; candidate index l = 2 * row (left), 2 * row + 1
    (right) for generated scenes.
    """

    rows: int
    seats_per_row: int
    bs_position: Vec3
    ue_positions: tuple[Vec3, ...]
    ris_candidates: tuple[RisCandidate, ...]
    cabin_size: Vec3
    materials: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def num_ues(self) -> int:
        return len(self.ue_positions)

    @property
    def num_candidates(self) -> int:
        return len(self.ris_candidates)

    def ue_array(self) -> np.ndarray:
        return np.array(self.ue_positions, dtype=float)

    def row_centers_x(self) -> np.ndarray:
        """Longitudinal seat-row coordinates, derived from the UE layout."""
        return np.unique(self.ue_array()[:, 0])


def build_default_cabin(
    ris_elements_per_side: int,
    *,
    rows: int = 11,
    seats_per_row: int = 6,
    seat_pitch: float = 0.8,
    seat_width: float = 0.5,
    corridor_width: float = 0.5,
    cabin_height: float = 2.2,
    ue_height: float = 1.1,
    ris_height: float = 1.7,
    bs_height: float = 2.0,
    bs_position: Vec3 | None = None,
    radio: RadioConfig | None = None,
) -> CabinScene:
    """Build the fully-seated cabin with two RIS candidates per row.

    ``ris_elements_per_side`` must be 8 or 16 (64- or 256-element surfaces).
    The BS sits at the cabin center in the horizontal plane, just below the
    ceiling (overridable via ``bs_position``); RIS candidates are centered
    above the middle seats at 1.7 m with the reflective side facing the BS.
    """
    if ris_elements_per_side not in (8, 16):
        raise ValueError(
            f"unsupported RIS size: {ris_elements_per_side} elements per side "
            "(expected 8 or 16)"
        )
    if seats_per_row % 2 != 0 or seats_per_row <= 0:
        raise ValueError("seats_per_row must be positive and even (split by the corridor)")
    if rows <= 0:
        raise ValueError("rows must be positive")

    radio = radio or RadioConfig()
    length = rows * seat_pitch
    width = seats_per_row * seat_width + corridor_width
    half = seats_per_row // 2

    seat_ys = [corridor_width / 2.0 + (j + 0.5) * seat_width for j in range(half)]
    ys = sorted([-y for y in seat_ys] + seat_ys)

    ue_positions = []
    for r in range(rows):
        x = (r + 0.5) * seat_pitch
        for y in ys:
            ue_positions.append((x, y, ue_height))

    bs = bs_position if bs_position is not None else (length / 2.0, 0.0, bs_height)

    # RIS centers above the middle of each 3-seat block, both sides of the aisle
    ris_y = corridor_width / 2.0 + half * seat_width / 2.0
    spacing = radio.wavelength / 4.0
    candidates = []
    for r in range(rows):
        x = (r + 0.5) * seat_pitch
        for y in (-ris_y, ris_y):
            center = (x, y, ris_height)
            d = np.asarray(bs) - np.asarray(center)
            n = d / np.linalg.norm(d)
            candidates.append(
                RisCandidate(
                    center=center,
                    normal=(float(n[0]), float(n[1]), float(n[2])),
                    elements_per_side=ris_elements_per_side,
                    element_spacing=spacing,
                )
            )

    return CabinScene(
        rows=rows,
        seats_per_row=seats_per_row,
        bs_position=bs,
        ue_positions=tuple(ue_positions),
        ris_candidates=tuple(candidates),
        cabin_size=(length, width, cabin_height),
        materials=dict(DEFAULT_MATERIALS),
    )


def validate(scene: CabinScene, radio: RadioConfig) -> list[str]:
    """Check scene/radio consistency; returns a list of violations (empty = valid)."""
    problems: list[str] = []

    if scene.num_ues != scene.rows * scene.seats_per_row:
        problems.append(
            f"expected rows*seats_per_row = {scene.rows * scene.seats_per_row} UEs, "
            f"found {scene.num_ues}"
        )

    all_points = [("bs", scene.bs_position)]
    all_points += [(f"ue {k}", p) for k, p in enumerate(scene.ue_positions)]
    all_points += [(f"ris {j}", c.center) for j, c in enumerate(scene.ris_candidates)]
    for label, p in all_points:
        if len(p) != 3 or not all(math.isfinite(v) for v in p):
            problems.append(f"{label} position is not a finite 3-vector: {p}")

    length, width, height = scene.cabin_size
    bx, by, bz = scene.bs_position
    if not (0.0 < bx < length and -width / 2.0 < by < width / 2.0 and 0.0 < bz < height):
        problems.append("bs_position must lie strictly inside the cabin bounding box")

    seen: dict[Vec3, int] = {}
    for k, p in enumerate(scene.ue_positions):
        if p in seen:
            problems.append(f"ue {k} duplicates position of ue {seen[p]}")
        else:
            seen[p] = k

    for j, c in enumerate(scene.ris_candidates):
        nrm = math.sqrt(sum(v * v for v in c.normal))
        if abs(nrm - 1.0) > 1e-6:
            problems.append(f"ris {j} normal is not a unit vector (norm {nrm:.6g})")
        if c.elements_per_side <= 0:
            problems.append(f"ris {j} elements_per_side must be positive")
        if not c.element_spacing > 0.0:
            problems.append(f"ris {j} element_spacing must be positive")

    if not radio.carrier_hz > 0.0:
        problems.append("carrier frequency must be positive")
    if not radio.bandwidth_hz > 0.0:
        problems.append("bandwidth must be positive")
    if not math.isfinite(radio.tx_power_dbm):
        problems.append("tx power must be finite")
    if radio.bs_antennas_per_side <= 0:
        problems.append("bs_antennas_per_side must be positive")

    return problems


def scene_to_dict(scene: CabinScene, radio: RadioConfig) -> dict:
    return {
        "rows": scene.rows,
        "seats_per_row": scene.seats_per_row,
        "bs_position": list(scene.bs_position),
        "ue_positions": [list(p) for p in scene.ue_positions],
        "ris_candidates": [
            {
                "center": list(c.center),
                "normal": list(c.normal),
                "elements_per_side": c.elements_per_side,
                "element_spacing": c.element_spacing,
            }
            for c in scene.ris_candidates
        ],
        "cabin_size": list(scene.cabin_size),
        "materials": scene.materials,
        "carrier_hz": radio.carrier_hz,
        "bandwidth_hz": radio.bandwidth_hz,
        "tx_power_dbm": radio.tx_power_dbm,
        "bs_antennas_per_side": radio.bs_antennas_per_side,
        "noise_figure_db": radio.noise_figure_db,
    }


def scene_from_dict(doc: dict) -> tuple[CabinScene, RadioConfig]:
    scene = CabinScene(
        rows=int(doc["rows"]),
        seats_per_row=int(doc["seats_per_row"]),
        bs_position=tuple(doc["bs_position"]),
        ue_positions=tuple(tuple(p) for p in doc["ue_positions"]),
        ris_candidates=tuple(
            RisCandidate(
                center=tuple(c["center"]),
                normal=tuple(c["normal"]),
                elements_per_side=int(c["elements_per_side"]),
                element_spacing=float(c["element_spacing"]),
            )
            for c in doc["ris_candidates"]
        ),
        cabin_size=tuple(doc["cabin_size"]),
        materials=doc.get("materials", {}),
    )
    radio = RadioConfig(
        carrier_hz=float(doc["carrier_hz"]),
        bandwidth_hz=float(doc["bandwidth_hz"]),
        tx_power_dbm=float(doc["tx_power_dbm"]),
        bs_antennas_per_side=int(doc.get("bs_antennas_per_side", 8)),
        noise_figure_db=float(doc["noise_figure_db"]),
    )
    return scene, radio


def save_scene(path, scene: CabinScene, radio: RadioConfig) -> None:
    with open(path, "w") as f:
        json.dump(scene_to_dict(scene, radio), f, indent=2)
        f.write("\n")


def load_scene(path) -> tuple[CabinScene, RadioConfig]:
    with open(path) as f:
        return scene_from_dict(json.load(f))
