"""Domain parameter records and pure cost/metric primitives.

Time slots are one hour long, so kW and kWh per slot coincide
numerically; every series in this module is hourly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fuzzy import FuzzyTriple


class ModelError(ValueError):
    pass


def _require(cond, msg):
    if not cond:
        raise ModelError(msg)


@dataclass(frozen=True)
class ServerFleetParams:
    """Interactive-workload server fleet of one data center."""

    e_idle: float  # kW per server
    e_peak: float  # kW per server
    pue: float  # power usage effectiveness, >= 1
    service_rate: float  # requests/slot per server
    s_max: int  # max active servers
    delay_cost: float  # $ per request-slot of queueing delay

    def __post_init__(self):
        _require(0 <= self.e_idle <= self.e_peak, "need 0 <= e_idle <= e_peak")
        _require(self.pue >= 1.0, "PUE must be >= 1")
        _require(self.service_rate > 0, "service_rate must be positive")
        _require(self.s_max >= 1, "s_max must be at least 1")
        _require(self.delay_cost >= 0, "delay_cost must be nonnegative")

    @property
    def overhead_power(self) -> float:
        """kW per active server independent of utilization."""
        return self.e_idle + (self.pue - 1.0) * self.e_peak

    @property
    def marginal_power(self) -> float:
        """kW per request/slot served."""
        return (self.e_peak - self.e_idle) / self.service_rate


@dataclass(frozen=True)
class BessParams:
    """Battery energy storage system parameters."""

    capacity: float  # kWh
    eff_ch: float
    eff_dis: float
    self_discharge: float
    degr_cost: float  # $/kWh cycled
    soc_min: float
    soc_max: float
    q_ch_max: float  # kW
    q_dis_max: float  # kW
    soc_init: float = 0.5

    def __post_init__(self):
        _require(self.capacity > 0, "capacity must be positive")
        _require(0 < self.eff_ch <= 1 and 0 < self.eff_dis <= 1, "efficiencies in (0, 1]")
        _require(0 <= self.self_discharge < 1, "self_discharge in [0, 1)")
        _require(self.degr_cost >= 0, "degr_cost must be nonnegative")
        _require(
            0 <= self.soc_min <= self.soc_init <= self.soc_max <= 1,
            "need 0 <= soc_min <= soc_init <= soc_max <= 1",
        )
        _require(self.q_ch_max >= 0 and self.q_dis_max >= 0, "power limits must be nonnegative")


@dataclass(frozen=True)
class VppProfile:
    """One VPP's assets, prices, fuzzy inputs, and declared DR capacity."""

    id: str
    price_buy: tuple[float, ...]  # $/kWh
    pv_unit_cost: float  # $/kWh
    pv_fuzzy: tuple[FuzzyTriple, ...]  # kW
    workload_fuzzy: tuple[FuzzyTriple, ...]  # requests/slot
    batch_energy_total: float  # kWh over the horizon
    declared_capacity: float  # kWh
    fleet: ServerFleetParams
    bess: BessParams
    batch_slot_cap: float | None = None  # kWh per slot, None = unbounded

    def __post_init__(self):
        object.__setattr__(self, "price_buy", tuple(self.price_buy))
        object.__setattr__(self, "pv_fuzzy", tuple(self.pv_fuzzy))
        object.__setattr__(self, "workload_fuzzy", tuple(self.workload_fuzzy))
        T = len(self.price_buy)
        _require(len(self.pv_fuzzy) == T, f"vpp {self.id}: pv_fuzzy length != horizon")
        _require(len(self.workload_fuzzy) == T, f"vpp {self.id}: workload_fuzzy length != horizon")
        _require(self.declared_capacity > 0, f"vpp {self.id}: declared_capacity must be positive")
        _require(self.batch_energy_total >= 0, f"vpp {self.id}: batch energy must be nonnegative")
        if self.batch_slot_cap is not None:
            _require(self.batch_slot_cap >= 0, f"vpp {self.id}: batch_slot_cap must be nonnegative")

    @property
    def horizon(self) -> int:
        return len(self.price_buy)


@dataclass(frozen=True)
class NetworkConfig:
    """Network-level data shared by all VPPs."""

    n_vpps: int
    horizon: int
    distance: tuple[tuple[float, ...], ...]  # km
    w_workload: float  # $/(request * km)
    w_energy: float  # $/(kWh * km)
    lambda_cap: float  # requests/slot per directed pair
    power_cap: float  # kW per directed pair
    dr_price: float  # $/kWh
    cdl: tuple[float, ...]  # normalized target load shape
    beta: float = 0.9
    gamma: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "cdl", tuple(float(v) for v in self.cdl))
        object.__setattr__(
            self, "distance", tuple(tuple(float(v) for v in row) for row in self.distance)
        )
        _require(self.n_vpps >= 1 and self.horizon >= 1, "need n_vpps >= 1 and horizon >= 1")
        _require(len(self.distance) == self.n_vpps, "distance matrix row count != n_vpps")
        for i, row in enumerate(self.distance):
            _require(len(row) == self.n_vpps, f"distance row {i} has wrong length")
            _require(row[i] == 0.0, f"distance diagonal ({i},{i}) must be zero")
            for j in range(self.n_vpps):
                _require(
                    row[j] == self.distance[j][i],
                    f"distance matrix asymmetric at ({i},{j})",
                )
                _require(row[j] >= 0, f"distance ({i},{j}) must be nonnegative")
        _require(len(self.cdl) == self.horizon, "cdl length != horizon")
        _require(abs(sum(self.cdl) - 1.0) <= 1e-6, "cdl must sum to 1 within 1e-6")
        _require(0.5 <= self.beta <= 1.0, "beta must lie in [0.5, 1]")
        _require(0.0 <= self.gamma < 1.0, "gamma must lie in [0, 1)")
        _require(self.lambda_cap >= 0 and self.power_cap >= 0, "caps must be nonnegative")
        _require(self.w_workload >= 0 and self.w_energy >= 0, "unit costs must be nonnegative")
        _require(self.dr_price >= 0, "dr_price must be nonnegative")


@dataclass
class ScheduleDecision:
    """One VPP's dispatch over the horizon."""

    servers: np.ndarray  # active servers per slot
    grid_buy: np.ndarray  # kWh
    charge: np.ndarray  # kW
    discharge: np.ndarray  # kW
    batch: np.ndarray  # kWh
    soc: np.ndarray
    qos_aux: np.ndarray  # delay epigraph z
    utilization: np.ndarray


@dataclass
class MigrationTensor:
    """Per-slot antisymmetric transfer matrices, indexed [t, i, j].

    Entry (i, j) > 0 means a transfer from VPP i to VPP j.
    """

    workload: np.ndarray  # T x N x N, requests/slot
    energy: np.ndarray  # T x N x N, kW

    @classmethod
    def zeros(cls, horizon, n_vpps) -> "MigrationTensor":
        return cls(np.zeros((horizon, n_vpps, n_vpps)), np.zeros((horizon, n_vpps, n_vpps)))

    def antisymmetry_violation(self) -> float:
        return max(
            float(np.abs(self.workload + self.workload.transpose(0, 2, 1)).max(initial=0.0)),
            float(np.abs(self.energy + self.energy.transpose(0, 2, 1)).max(initial=0.0)),
        )

    def net_transfer_violation(self) -> float:
        """Largest per-slot net transfer; exactly 0 under antisymmetry.

        Summed pairwise (entry plus its mirror) so canceling terms meet
        before any accumulation noise can appear.
        """
        def per_slot(tensor):
            paired = tensor + tensor.transpose(0, 2, 1)
            iu, ju = np.triu_indices(tensor.shape[1], 1)
            return np.abs(paired[:, iu, ju].sum(axis=1)) if iu.size else np.zeros(tensor.shape[0])

        return max(
            float(per_slot(self.workload).max(initial=0.0)),
            float(per_slot(self.energy).max(initial=0.0)),
        )

    def cap_violation(self, lambda_cap, power_cap) -> float:
        return max(
            float((np.abs(self.workload) - lambda_cap).max(initial=0.0)),
            float((np.abs(self.energy) - power_cap).max(initial=0.0)),
        )


@dataclass
class DrMetrics:
    """Demand-response tracking result for one participant or aggregate."""

    load_shape: np.ndarray
    distance: float
    similarity: float
    incentive: float
    tracking_failed: bool = False  # similarity went negative


# --------------------------------------------------------------- primitives


def dc_power(fleet: ServerFleetParams, servers, effective_load, batch=0.0) -> float:
    """Data-center power draw for one slot, kWh.

    servers * [e_idle + (e_peak - e_idle) * U + (PUE - 1) * e_peak] + batch,
    with U = load / (servers * service_rate).
    """
    _require(servers >= 1, "need at least one active server")
    cap = servers * fleet.service_rate
    if effective_load < 0 or effective_load > cap + 1e-9:
        raise ModelError(f"load {effective_load} outside [0, {cap}]")
    util = effective_load / cap
    return servers * (
        fleet.e_idle + (fleet.e_peak - fleet.e_idle) * util + (fleet.pue - 1.0) * fleet.e_peak
    ) + batch


def qos_cost(fleet: ServerFleetParams, servers, load) -> float:
    """Queueing delay cost sum_t kappa * load_t / (s_t * u - load_t)."""
    total = 0.0
    for s, lam in zip(servers, load):
        spare = s * fleet.service_rate - lam
        if spare <= 0:
            raise ModelError(f"saturated slot: capacity {s * fleet.service_rate} <= load {lam}")
        total += fleet.delay_cost * lam / spare
    return total


def bess_step(params: BessParams, soc_prev, charge, discharge) -> float:
    """Next state of charge after one slot of (dis)charging."""
    return (
        (1.0 - params.self_discharge) * soc_prev
        + params.eff_ch * charge / params.capacity
        - discharge / (params.eff_dis * params.capacity)
    )


def dr_metrics(grid_buy, capacity, cdl, dr_price) -> DrMetrics:
    """Load-shape tracking distance, similarity, and incentive.

    Works for a single VPP (its purchases and declared capacity) and for
    the aggregate (summed purchases against summed capacity).
    """
    _require(capacity > 0, "capacity must be positive")
    grid_buy = np.asarray(grid_buy, dtype=float)
    cdl = np.asarray(cdl, dtype=float)
    shape = grid_buy / capacity
    distance = float(np.linalg.norm(shape - cdl))
    similarity = 1.0 - distance
    return DrMetrics(
        load_shape=shape,
        distance=distance,
        similarity=similarity,
        incentive=dr_price * similarity * capacity,
        tracking_failed=similarity < 0,
    )


def migration_cost(net: NetworkConfig, tensor: MigrationTensor, origin) -> float:
    """Transfer cost charged to ``origin``: outgoing entries only.

    w_workload * sum_t sum_j d_ij * max(0, workload[t, i, j]) plus the
    energy counterpart; each transfer is paid once, by the sender.
    """
    d = np.asarray(net.distance)[origin]  # distances from origin to every j
    out_w = np.maximum(tensor.workload[:, origin, :], 0.0)
    out_e = np.maximum(tensor.energy[:, origin, :], 0.0)
    return float(net.w_workload * (out_w * d).sum() + net.w_energy * (out_e * d).sum())
