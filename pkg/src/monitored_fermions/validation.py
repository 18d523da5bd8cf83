"""Lockstep comparison of the Gaussian simulators with the exact Fock-space reference."""

from __future__ import annotations

import time

import numpy as np

from . import oracle
from .gaussian import correlation_from_state, entanglement_entropy, neel_state
from .lattice import Lattice
from .observables import BlockGeometry, covariance_blocks, mutual_information, particle_number_variance
from .pm import PmConfig, run_pm_trajectory
from .qsd import draw_noise, evolve_with_noise

PM_TOL = 1e-8
QSD_TOL = 1e-6
EE_TOL = 1e-8
SYMMETRY_TOL = 1e-6
I2_FLOOR = -1e-8
FCS_TOL = 1e-9


def default_blocks(lat: Lattice) -> BlockGeometry:
    L = lat.n_sites
    if L % 4 == 0:
        return BlockGeometry.standard(lat)
    q = max(1, L // 3)
    return BlockGeometry(tuple(range(q)), tuple(range(L // 2, L // 2 + q)))


def identity_deviations(D: np.ndarray, G: np.ndarray, state: oracle.FockState, lat: Lattice,
                        geom: BlockGeometry) -> dict:
    """Observable identities on one snapshot; positive numbers measure violations.

    ``D`` is the simulator's correlation matrix, ``G`` the oracle's
    two-point function of the same snapshot. The counting identities are
    checked on ``G`` against the oracle's direct counting (the identity
    itself) and, as ``*_sim``, on ``D`` (which adds the simulator error).
    """
    A = list(geom.A)
    comp = [s for s in range(lat.n_sites) if s not in geom.A]
    var_ex, cov_ex = oracle.number_moments(state, geom.A, geom.B)
    return {
        "i2": mutual_information(D, geom),
        "gab": covariance_blocks(D, geom),
        "symmetry": abs(entanglement_entropy(D, A) - entanglement_entropy(D, comp)),
        "fcs_variance": abs(particle_number_variance(G, A) - var_ex),
        "fcs_covariance": abs(covariance_blocks(G, geom) - abs(cov_ex)),
        "fcs_variance_sim": abs(particle_number_variance(D, A) - var_ex),
    }


def pm_lockstep(L: int = 8, gamma: float = 1.0, t_max: float = 20.0, seed: int = 0,
                sample_step: float = 0.5, representation: str = "orbital") -> dict:
    lat = Lattice.ring(L)
    times = np.arange(0.0, t_max + 1e-12, sample_step).tolist()
    cfg = PmConfig(gamma=gamma, t_max=t_max, sample_times=times, representation=representation)
    rec = run_pm_trajectory(cfg, lat, seed, keep_states=True)
    ref = oracle.run_pm_oracle(lat, cfg, seed)
    half = list(range(L // 2))
    geom = default_blocks(lat)
    dev, ee, ids = 0.0, 0.0, []
    for D, (t, G, state) in zip(rec.states, ref):
        dev = max(dev, float(np.abs(D - G).max()))
        ee = max(ee, abs(entanglement_entropy(D, half) - oracle.entanglement_entropy(state, half)))
        ids.append(identity_deviations(D, G, state, lat, geom))
    return {"max_dev": dev, "max_ee_dev": ee, "n_snapshots": len(ref), "n_events": rec.n_events,
            "identities": ids, "matched": len(ref) == len(rec.states)}


def qsd_lockstep(L: int = 6, gamma: float = 0.5, dt: float = 0.005, t_max: float = 2.0, seed: int = 0,
                 substeps: int = 1) -> dict:
    lat = Lattice.ring(L)
    n = int(round(t_max / dt))
    rng = np.random.Generator(np.random.PCG64(seed))
    inc = [draw_noise(L, gamma, dt, rng) for _ in range(n)]
    Ds = []
    evolve_with_noise(neel_state(lat), lat.hopping_matrix(1.0), gamma, dt, inc,
                      callback=lambda s, U: Ds.append(correlation_from_state(U)), substeps=substeps)
    states = []
    oracle.run_qsd_oracle(lat, gamma, dt, inc, callback=lambda s, st: states.append(st))
    tp = oracle.TwoPoint(oracle.FockBasis(L, L // 2))
    half = list(range(L // 2))
    geom = default_blocks(lat)
    dev, ee, ids = 0.0, 0.0, []
    for D, st in zip(Ds, states):
        G = tp(st)
        dev = max(dev, float(np.abs(D - G).max()))
        ee = max(ee, abs(entanglement_entropy(D, half) - oracle.entanglement_entropy(st, half)))
        ids.append(identity_deviations(D, G, st, lat, geom))
    return {"max_dev": dev, "max_ee_dev": ee, "n_snapshots": len(Ds), "identities": ids}


def summarize_identities(ids: list[dict]) -> dict:
    return {
        "min_i2": min(d["i2"] for d in ids),
        "min_gab": min(d["gab"] for d in ids),
        "max_symmetry_dev": max(d["symmetry"] for d in ids),
        "max_fcs_variance_dev": max(d["fcs_variance"] for d in ids),
        "max_fcs_covariance_dev": max(d["fcs_covariance"] for d in ids),
        "max_fcs_variance_dev_sim": max(d["fcs_variance_sim"] for d in ids),
    }


def identities_pass(s: dict) -> bool:
    return (
        s["min_i2"] >= I2_FLOOR
        and s["min_gab"] >= 0
        and s["max_symmetry_dev"] < SYMMETRY_TOL
        and s["max_fcs_variance_dev"] < FCS_TOL
        and s["max_fcs_covariance_dev"] < FCS_TOL
    )


def oracle_report(L_pm=8, seeds=5, gamma_pm=1.0, t_max=20.0, L_qsd=6, gamma_qsd=0.5, dt=0.005, t_qsd=2.0) -> dict:
    """Worst-case deviations over PM seeds ``0..seeds-1`` and one shared-noise QSD run."""
    t0 = time.perf_counter()
    pm = [pm_lockstep(L_pm, gamma_pm, t_max, seed) for seed in range(seeds)]
    t1 = time.perf_counter()
    qsd = qsd_lockstep(L_qsd, gamma_qsd, dt, t_qsd, seed=0)
    t2 = time.perf_counter()
    ids = summarize_identities([d for r in pm for d in r["identities"]] + qsd["identities"])
    rep = {
        "pm": {
            "L": L_pm, "gamma": gamma_pm, "t_max": t_max, "seeds": seeds,
            "max_dev": max(r["max_dev"] for r in pm), "max_ee_dev": max(r["max_ee_dev"] for r in pm),
            "tolerance": PM_TOL, "runtime_s": t1 - t0,
        },
        "qsd": {
            "L": L_qsd, "gamma": gamma_qsd, "dt": dt, "t_max": t_qsd,
            "max_dev": qsd["max_dev"], "max_ee_dev": qsd["max_ee_dev"], "tolerance": QSD_TOL, "runtime_s": t2 - t1,
        },
        "identities": ids,
    }
    rep["pm"]["passed"] = rep["pm"]["max_dev"] < PM_TOL and rep["pm"]["max_ee_dev"] < EE_TOL
    rep["qsd"]["passed"] = rep["qsd"]["max_dev"] < QSD_TOL
    rep["identities"]["passed"] = identities_pass(ids)
    rep["passed"] = rep["pm"]["passed"] and rep["qsd"]["passed"] and rep["identities"]["passed"]
    return rep
