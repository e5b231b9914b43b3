"""Chip and run configuration: defaults, YAML loading, dotted overrides."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .analog import AdcModel, CapacitorBank, ProcessModel, SupplyThermalModel
from .bitpart import PartitionScheme
from .energy import EnergyTable
from .errors import BpsimError, ContractViolation


class ConfigError(BpsimError):
    """Bad configuration file or override."""


@dataclass(frozen=True)
class ChipConfig:
    operand_bits: int = 8
    partition_bits: int = 2
    n_lanes: int = 8
    m_cycles: int = 32
    rows: int = 8
    cols: int = 4
    ibuf_bytes: int = 32 * 1024
    wbuf_bytes: int = 2 * 1024  # per MS-WAGG
    obuf_bytes: int = 48 * 1024
    vaults: int = 16
    cores_per_vault: int = 4
    frequency_hz: float = 500e6
    bus_bytes_per_cycle: int = 256
    dram_bytes_per_cycle: int = 16  # per vault
    dram_latency_cycles: int = 32
    acc_bits: int = 32
    adc_bits: int = 10
    adc_sample_rate: float = 15e6
    digital_throughput: int = 1  # elements per cycle per column

    def __post_init__(self):
        PartitionScheme(self.operand_bits, self.partition_bits)
        for name in ("n_lanes", "m_cycles", "rows", "cols", "ibuf_bytes", "wbuf_bytes", "obuf_bytes",
                     "vaults", "cores_per_vault", "bus_bytes_per_cycle", "dram_bytes_per_cycle",
                     "digital_throughput"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be at least 1")
        if self.dram_latency_cycles < 0:
            raise ContractViolation("dram_latency_cycles must be non-negative")
        if self.acc_bits not in (32, 64):
            raise ContractViolation("acc_bits must be 32 or 64")
        if self.m_cycles > 0xFFFF:
            raise ContractViolation("m_cycles must fit 16 bits")

    @property
    def scheme(self) -> PartitionScheme:
        return PartitionScheme(self.operand_bits, self.partition_bits)

    @property
    def adc(self) -> AdcModel:
        return AdcModel(self.adc_bits, self.adc_sample_rate)

    @property
    def cores(self) -> int:
        return self.vaults * self.cores_per_vault

    @property
    def mswaggs_per_core(self) -> int:
        return self.rows * self.cols

    @property
    def window_elements(self) -> int:
        return self.n_lanes * self.m_cycles

    @property
    def lanes_total(self) -> int:
        return self.cores * self.mswaggs_per_core * self.scheme.pair_count * self.n_lanes

    @property
    def macc_slots_8b(self) -> int:
        return self.cores * self.mswaggs_per_core * self.n_lanes

    @property
    def core_wbuf_bytes(self) -> int:
        return self.wbuf_bytes * self.mswaggs_per_core

    @property
    def onchip_bytes(self) -> int:
        return self.cores * (self.ibuf_bytes + self.core_wbuf_bytes + self.obuf_bytes)

    def bank_bytes(self, buffer: str) -> int:
        """Capacity of one of the two banks of a core's scratchpad."""
        total = {"IBUF": self.ibuf_bytes, "WBUF": self.core_wbuf_bytes, "OBUF": self.obuf_bytes}[buffer]
        return total // 2

    @property
    def conversion_cycles(self) -> int:
        return self.adc.conversion_cycles(self.m_cycles, self.frequency_hz)

    @property
    def window_period(self) -> int:
        """Cycles between window completions in steady state."""
        return max(self.m_cycles + 1, self.conversion_cycles)

    @property
    def adc_keeps_up(self) -> bool:
        """True when the converter finishes within the m+1 cycles of one window."""
        return self.conversion_cycles == self.m_cycles + 1

    @property
    def adc_rate_required(self) -> float:
        """Conversion rate each converter must sustain to keep up with the lanes."""
        return self.frequency_hz / (self.m_cycles + 1)

    @property
    def transfer_bytes_per_cycle(self) -> int:
        return min(self.bus_bytes_per_cycle, self.vaults * self.dram_bytes_per_cycle)

    def transfer_cycles(self, nbytes: int) -> int:
        if nbytes <= 0:
            return 0
        return self.dram_latency_cycles + math.ceil(nbytes / self.transfer_bytes_per_cycle)

    @property
    def wide_masks(self) -> bool:
        return self.vaults > 16 or self.cores_per_vault > 4

    def chip_hash(self) -> int:
        canon = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return zlib.crc32(canon.encode())


@dataclass(frozen=True)
class AnalogConfig:
    cx: float = 3e-15
    cw: float = 1e-15
    cacc: float = 24e-15
    vdd_nominal: float = 1.0
    vdd_sigma: float = 0.2 / 3
    vdd_clamp: float = 0.2
    t_nominal: float = 329.0
    t_sigma: float = 58.0 / 6
    cap_mismatch_sigma: float = 0.01
    mismatch_clamp: float = 0.06

    @property
    def bank(self) -> CapacitorBank:
        return CapacitorBank(self.cx, self.cw, self.cacc)

    @property
    def supply_thermal(self) -> SupplyThermalModel:
        return SupplyThermalModel(self.vdd_nominal, self.vdd_sigma, self.t_nominal, self.t_sigma, self.vdd_clamp)

    @property
    def process(self) -> ProcessModel:
        return ProcessModel(self.cap_mismatch_sigma, self.mismatch_clamp)


@dataclass(frozen=True)
class SimulationConfig:
    mode: str = "ideal"
    seed: int = 0
    data_seed: int = 1
    charge_model: str = "nonideal"
    adc_quantization: bool = True
    noise: str = "linear"
    sigma_acc: float | None = None
    pvt: bool = False
    trace: bool = False

    def __post_init__(self):
        if self.mode not in ("ideal", "nonideal"):
            raise ContractViolation(f"mode must be ideal or nonideal, got {self.mode!r}")
        if self.charge_model not in ("ideal", "nonideal"):
            raise ContractViolation(f"charge_model must be ideal or nonideal, got {self.charge_model!r}")
        if self.noise not in ("off", "linear", "quadrature"):
            raise ContractViolation(f"noise must be off, linear or quadrature, got {self.noise!r}")


@dataclass(frozen=True)
class SweepConfig:
    partition_bits: list = field(default_factory=lambda: [1, 2, 4, 8])
    lanes_cycles: list = field(default_factory=lambda: [[4, 64], [8, 32], [16, 16]])
    cores_per_vault: list = field(default_factory=lambda: [1, 2, 4, 8])
    metric: str = "energy_delay"


@dataclass(frozen=True)
class RunConfig:
    chip: ChipConfig = field(default_factory=ChipConfig)
    energy: EnergyTable = field(default_factory=EnergyTable)
    analog: AnalogConfig = field(default_factory=AnalogConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def to_dict(self) -> dict:
        return {f.name: asdict(getattr(self, f.name)) for f in fields(self)}


SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


def _coerce(section: str, key: str, value: Any, default: Any) -> Any:
    # PyYAML reads "3e-15" (no dot) as a string; coerce by the default's type
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key} must be true or false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float) or (default is None and key == "sigma_acc"):
        if value is None:
            return None
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{section}.{key} must be a number, got {value!r}") from None
    return value


def _build(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a mapping")
    built = {}
    for section, factory in SECTIONS.items():
        base = factory()
        raw = data.get(section) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"section '{section}' must be a mapping")
        known = {f.name for f in fields(base)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown key(s) in '{section}': {', '.join(unknown)}")
        values = {k: _coerce(section, k, v, getattr(base, k)) for k, v in raw.items()}
        try:
            built[section] = replace(base, **values)
        except ContractViolation as e:
            raise ConfigError(f"section '{section}': {e}") from None
    extra = sorted(set(data) - set(SECTIONS))
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(extra)}")
    return RunConfig(**built)


def parse_override(text: str) -> tuple[str, str, Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    path, raw = text.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"override key {path!r} must be section.key")
    return parts[0], parts[1], yaml.safe_load(raw)


def default_config_text() -> str:
    return resources.files("bpsim").joinpath("data/default.yaml").read_text()


def load_config(path: str | Path | None = None, overrides: list[str] = ()) -> RunConfig:
    """Defaults, then the file at ``path``, then ``section.key=value`` overrides."""
    data: dict = yaml.safe_load(default_config_text()) or {}
    if path is not None:
        try:
            user = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"config {path} is not valid YAML: {e}") from None
        if not isinstance(user, dict):
            raise ConfigError("configuration root must be a mapping")
        for section, values in user.items():
            if isinstance(values, dict) and isinstance(data.get(section), dict):
                data[section] = {**data[section], **values}
            else:
                data[section] = values
    for text in overrides:
        section, key, value = parse_override(text)
        data.setdefault(section, {})
        if not isinstance(data[section], dict):
            raise ConfigError(f"section '{section}' must be a mapping")
        data[section][key] = value
    return _build(data)
