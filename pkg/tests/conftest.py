import numpy as np
import pytest

from vppcoop.fuzzy import FuzzyTriple
from vppcoop.model import BessParams, NetworkConfig, ServerFleetParams, VppProfile
from vppcoop.assemble import ProblemContext


def triangle(b, spread=0.15):
    return FuzzyTriple(b * (1.0 - spread), b, b * (1.0 + spread))


def make_fleet(**kw):
    base = dict(e_idle=0.2, e_peak=0.5, pue=1.4, service_rate=100.0, s_max=40, delay_cost=0.05)
    base.update(kw)
    return ServerFleetParams(**base)


def make_bess(**kw):
    base = dict(
        capacity=60.0,
        eff_ch=0.95,
        eff_dis=0.95,
        self_discharge=0.002,
        degr_cost=0.01,
        soc_min=0.1,
        soc_max=0.9,
        q_ch_max=20.0,
        q_dis_max=20.0,
        soc_init=0.5,
    )
    base.update(kw)
    return BessParams(**base)


def make_profile(pid, workload, pv, price, capacity, fleet=None, bess=None,
                 batch=20.0, spread=0.15):
    return VppProfile(
        id=pid,
        price_buy=tuple(price),
        pv_unit_cost=0.03,
        pv_fuzzy=tuple(
            triangle(v, spread) if v > 0 else FuzzyTriple(0.0, 0.0, 0.0) for v in pv
        ),
        workload_fuzzy=tuple(triangle(v, spread) for v in workload),
        batch_energy_total=batch,
        declared_capacity=capacity,
        fleet=fleet or make_fleet(),
        bess=bess or make_bess(),
    )


def make_network(n, T, cdl=None, **kw):
    if cdl is None:
        shape = 1.0 + 0.4 * np.sin(2.0 * np.pi * (np.arange(T) - 1.0) / T)
        cdl = shape / shape.sum()
    dist = np.full((n, n), 2000.0)
    np.fill_diagonal(dist, 0.0)
    base = dict(
        n_vpps=n,
        horizon=T,
        distance=tuple(tuple(row) for row in dist),
        w_workload=5e-8,
        w_energy=5e-6,
        lambda_cap=400.0,
        power_cap=15.0,
        dr_price=0.08,
        cdl=tuple(cdl),
        beta=0.9,
        gamma=0.1,
    )
    base.update(kw)
    return NetworkConfig(**base)


def two_vpp_context(T=6, identical=False, **net_kw):
    """Complementary (or identical) pair used across the solver tests."""
    wl1 = [900, 1100, 1400, 1600, 1300, 1000][:T]
    pv1 = [0, 5, 15, 18, 8, 0][:T]
    pr1 = [0.08, 0.09, 0.12, 0.15, 0.13, 0.10][:T]
    wl2 = [1200, 1500, 1700, 1500, 1200, 900][:T]
    pv2 = [0, 12, 20, 10, 3, 0][:T]
    pr2 = [0.12, 0.14, 0.10, 0.09, 0.11, 0.13][:T]
    if identical:
        wl2, pv2, pr2 = wl1, pv1, pr1
    net = make_network(2, T, **net_kw)
    p1 = make_profile("vpp1", wl1, pv1, pr1, capacity=60.0)
    p2 = make_profile("vpp2", wl2, pv2, pr2, capacity=60.0 if identical else 66.0)
    return ProblemContext(network=net, profiles=(p1, p2))
