"""Mission budget arithmetic: imaging cadence, scenario budgets, device verdicts."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import asdict, dataclass, fields, replace

MU_EARTH = 3.986004418e14  # m^3/s^2
R_EARTH = 6.371e6  # m
DAY_S = 86_400.0

#: image size used for storage budgets (the rounded "60 MB" camera frame)
BUDGET_IMAGE_BYTES = 60_000_000
#: exact size of one raw 4512x4512 RGB8 frame
RAW_FRAME_BYTES = 4512 * 4512 * 3

NOMINAL_POWER_LIMIT_MW = 2000.0
PEAK_POWER_LIMIT_MW = 5000.0
#: listed alongside the two limits above; reported, never gated on
IPU_POWER_MW = 1480.0
DESIGN_MARGIN = 0.05


class Scenario(enum.Enum):
    REALTIME = "realtime"
    ARCTIC = "arctic"
    GREENLAND = "greenland"


@dataclass(frozen=True)
class CameraModel:
    gsd_m_per_px: float
    image_height_px: int
    image_width_px: int
    overlap_fraction: float
    bytes_per_pixel: int = 3

    def __post_init__(self):
        if self.gsd_m_per_px <= 0 or self.image_height_px <= 0 or self.image_width_px <= 0 or self.bytes_per_pixel <= 0:
            raise ValueError("camera dimensions must be positive")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ValueError("overlap_fraction must be in [0, 1)")

    @property
    def image_bytes(self) -> int:
        return self.image_height_px * self.image_width_px * self.bytes_per_pixel

    @property
    def along_track_step_m(self) -> float:
        return self.gsd_m_per_px * self.image_height_px * self.overlap_fraction


@dataclass(frozen=True)
class OrbitModel:
    altitude_m: float
    orbital_velocity_m_s: float
    orbital_period_s: float
    day_length_s: float = DAY_S

    def __post_init__(self):
        if self.orbital_velocity_m_s <= 0 or self.orbital_period_s <= 0:
            raise ValueError("velocity and period must be positive")


@dataclass(frozen=True)
class ScenarioParams:
    """Mission constants that drive the three imaging scenarios."""

    arctic_cycle_s: float = 5739.0
    arctic_images: int = 80
    greenland_extent_m: float = 2_670_000.0
    greenland_passes: int = 4
    image_bytes: int = BUDGET_IMAGE_BYTES


@dataclass(frozen=True)
class ScenarioBudget:
    scenario_id: Scenario
    per_image_latency_s: float
    buffered_images: int
    storage_required_bytes: int
    nominal_power_limit_mw: float = NOMINAL_POWER_LIMIT_MW
    peak_power_limit_mw: float = PEAK_POWER_LIMIT_MW

    def to_json(self) -> dict:
        d = asdict(self)
        d["scenario_id"] = self.scenario_id.value
        d["storage_required_mb"] = self.storage_required_bytes / 1e6
        d["ipu_power_mw"] = IPU_POWER_MW
        return d


@dataclass(frozen=True)
class DeviceMeasurement:
    device_name: str
    full_image_latency_s: float
    avg_power_mw: float
    peak_power_mw: float
    storage_bytes: int
    mass_g: float = 0.0

    def __post_init__(self):
        for f in ("full_image_latency_s", "avg_power_mw", "peak_power_mw", "storage_bytes", "mass_g"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be non-negative")
        if self.peak_power_mw < self.avg_power_mw:
            raise ValueError("peak power below average power")


@dataclass(frozen=True)
class Verdict:
    device_name: str
    scenario_id: str
    latency_ok: bool
    nominal_power_ok: bool
    peak_power_ok: bool
    storage_ok: bool
    duty_cycle: float
    nominal_power_mw: float
    energy_mwh: float

    @property
    def passed(self) -> bool:
        return self.latency_ok and self.nominal_power_ok and self.peak_power_ok and self.storage_ok


def inter_image_period(camera: CameraModel, orbit: OrbitModel) -> float:
    """Seconds between consecutive captures: GSD * H * overlap / v."""
    if orbit.orbital_velocity_m_s == 0:
        raise ZeroDivisionError("orbital velocity is zero")
    return camera.along_track_step_m / orbit.orbital_velocity_m_s


def orbital_velocity(altitude_m: float) -> float:
    """Circular orbit speed at ``altitude_m`` above a spherical Earth."""
    if altitude_m < 0:
        raise ValueError("altitude must be non-negative")
    return math.sqrt(MU_EARTH / (R_EARTH + altitude_m))


def orbital_period(altitude_m: float) -> float:
    r = R_EARTH + altitude_m
    return 2 * math.pi * math.sqrt(r**3 / MU_EARTH)


def orbit_from_altitude(altitude_m: float) -> OrbitModel:
    return OrbitModel(altitude_m, orbital_velocity(altitude_m), orbital_period(altitude_m))


def images_per_pass_quotient(extent_m: float, camera: CameraModel) -> float:
    if extent_m <= 0:
        raise ValueError("extent must be positive")
    step = camera.along_track_step_m
    if step == 0:
        raise ZeroDivisionError("zero along-track step (overlap is 0)")
    return extent_m / step


def images_per_pass(extent_m: float, camera: CameraModel) -> int:
    """Images to cover ``extent_m`` along track, rounded up."""
    return math.ceil(images_per_pass_quotient(extent_m, camera))


def scenario_budget(
    scenario: Scenario | str,
    camera: CameraModel,
    orbit: OrbitModel,
    params: ScenarioParams = ScenarioParams(),
    strict_margin: bool = False,
) -> ScenarioBudget:
    scenario = Scenario(scenario)
    if scenario is Scenario.REALTIME:
        latency, buffered = inter_image_period(camera, orbit), 1
    elif scenario is Scenario.ARCTIC:
        latency, buffered = params.arctic_cycle_s / params.arctic_images, params.arctic_images
    else:
        buffered = params.greenland_passes * images_per_pass(params.greenland_extent_m, camera)
        latency = orbit.day_length_s / buffered
    budget = ScenarioBudget(scenario, latency, buffered, buffered * params.image_bytes)
    if strict_margin:
        keep = 1.0 - DESIGN_MARGIN
        budget = replace(
            budget,
            per_image_latency_s=latency * keep,
            storage_required_bytes=math.ceil(budget.storage_required_bytes * (1.0 + DESIGN_MARGIN)),
            nominal_power_limit_mw=NOMINAL_POWER_LIMIT_MW * keep,
            peak_power_limit_mw=PEAK_POWER_LIMIT_MW * keep,
        )
    return budget


def energy_consumption(avg_power_mw: float, latency_s: float) -> float:
    """Energy in mWh for one full-image inference."""
    if avg_power_mw < 0 or latency_s < 0:
        raise ValueError("inputs must be non-negative")
    return avg_power_mw * (latency_s / 3600)


def duty_cycle(achieved_latency_s: float, required_latency_s: float) -> float:
    """Achieved over required latency. Values above 1 mean the device cannot keep up."""
    if required_latency_s <= 0:
        raise ValueError("required latency must be positive")
    return achieved_latency_s / required_latency_s


def nominal_power(avg_power_mw: float, duty: float) -> float:
    return avg_power_mw * min(duty, 1.0)


def evaluate_device(m: DeviceMeasurement, b: ScenarioBudget) -> Verdict:
    duty = duty_cycle(m.full_image_latency_s, b.per_image_latency_s)
    nominal = nominal_power(m.avg_power_mw, duty)
    return Verdict(
        device_name=m.device_name,
        scenario_id=b.scenario_id.value,
        latency_ok=m.full_image_latency_s <= b.per_image_latency_s,
        nominal_power_ok=nominal <= b.nominal_power_limit_mw,
        peak_power_ok=m.peak_power_mw <= b.peak_power_limit_mw,
        storage_ok=m.storage_bytes >= b.storage_required_bytes,
        duty_cycle=duty,
        nominal_power_mw=nominal,
        energy_mwh=energy_consumption(m.avg_power_mw, m.full_image_latency_s),
    )


# -- file formats --

class SchemaError(ValueError):
    pass


def _build(cls, obj, required, optional=()):
    if not isinstance(obj, dict):
        raise SchemaError(f"{cls.__name__}: expected a JSON object")
    missing = [k for k in required if k not in obj]
    if missing:
        raise SchemaError(f"{cls.__name__}: missing field(s) {', '.join(missing)}")
    allowed = set(required) | set(optional)
    extra = sorted(set(obj) - allowed)
    if extra:
        raise SchemaError(f"{cls.__name__}: unknown field(s) {', '.join(extra)}")
    for k, v in obj.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise SchemaError(f"{cls.__name__}: field {k} must be a number")
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{cls.__name__}: {exc}") from exc


def camera_from_json(obj: dict) -> CameraModel:
    cam = _build(CameraModel, obj, ("gsd_m_per_px", "image_height_px", "image_width_px", "overlap_fraction"),
                 ("bytes_per_pixel",))
    return cam


def orbit_from_json(obj: dict) -> OrbitModel:
    """Accepts an explicit velocity/period or derives them from ``altitude_m``."""
    if not isinstance(obj, dict) or "altitude_m" not in obj:
        raise SchemaError("OrbitModel: missing field(s) altitude_m")
    obj = dict(obj)
    alt = obj["altitude_m"]
    if not isinstance(alt, (int, float)) or alt < 0:
        raise SchemaError("OrbitModel: altitude_m must be a non-negative number")
    obj.setdefault("orbital_velocity_m_s", orbital_velocity(alt))
    obj.setdefault("orbital_period_s", orbital_period(alt))
    return _build(OrbitModel, obj, ("altitude_m", "orbital_velocity_m_s", "orbital_period_s"), ("day_length_s",))


def scenario_params_from_json(obj: dict) -> ScenarioParams:
    names = [f.name for f in fields(ScenarioParams)]
    return _build(ScenarioParams, obj, (), names)


DEVICE_COLUMNS = [f.name for f in fields(DeviceMeasurement)]
VERDICT_COLUMNS = [f.name for f in fields(Verdict)] + ["passed"]


def device_from_row(row: dict) -> DeviceMeasurement:
    missing = [c for c in DEVICE_COLUMNS if c != "mass_g" and not row.get(c)]
    if missing:
        raise SchemaError(f"missing column value(s) {', '.join(missing)}")
    try:
        return DeviceMeasurement(
            device_name=row["device_name"],
            full_image_latency_s=float(row["full_image_latency_s"]),
            avg_power_mw=float(row["avg_power_mw"]),
            peak_power_mw=float(row["peak_power_mw"]),
            storage_bytes=int(float(row["storage_bytes"])),
            mass_g=float(row.get("mass_g") or 0.0),
        )
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


def read_devices_csv(text: str) -> tuple[list[DeviceMeasurement], list[tuple[int, str]]]:
    """Parse a device CSV; returns devices and (line, message) row errors."""
    devices, errors = [], []
    if not text.strip():
        return devices, errors
    reader = csv.DictReader(io.StringIO(text))
    absent = [c for c in DEVICE_COLUMNS if c != "mass_g" and c not in (reader.fieldnames or [])]
    if absent:
        raise SchemaError(f"CSV header lacks column(s) {', '.join(absent)}")
    for row in reader:
        try:
            devices.append(device_from_row(row))
        except SchemaError as exc:
            errors.append((reader.line_num, str(exc)))
    return devices, errors


def verdict_row(v: Verdict) -> dict:
    d = asdict(v)
    d["passed"] = v.passed
    return d


def verdicts_to_csv(verdicts: list[Verdict]) -> str:
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=VERDICT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for v in verdicts:
        w.writerow(verdict_row(v))
    return out.getvalue()


def verdicts_to_json(verdicts: list[Verdict]) -> str:
    return json.dumps([verdict_row(v) for v in verdicts], indent=2)
