"""A small activity-based travel simulator.

Synthetic travellers choose when to start activities (Weibull hazard),
where to go (multinomial logit) and how to travel (multinomial logit);
service activities are additionally re-timed by an ordered-probit planning
priority. Expected vehicle trips are loaded onto one link per destination
and converted to travel times with a volume-delay function. The output is
the link-averaged travel time in 288 five-minute bins.

The five calibration parameters enter exactly where their names say:
``HBO_B_male_taxi`` and ``HBO_ASC_TAXI`` in the home-based-other taxi
utility, ``NHB_B_dens_bike`` in the non-home-based bike utility,
``THETAR_WORK`` on retail accessibility in work destination choice and
``GAMMA_SERVICE`` as the distance decay of service destination choice.

Network loading is deliberately algebraic; there is no traffic-flow
propagation or routing.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from ..design import ABM_SPACE, DesignPoint, lhs_unit
from .choice import mnl_probabilities, ordered_probit, weibull_cumulative_hazard

N_BINS = 288
BIN_HOURS = 24.0 / N_BINS

PARAM_NAMES = tuple(ABM_SPACE.names)


@dataclass(frozen=True)
class ToySimConfig:
    population: int = 3000
    # one link per destination zone: free-flow time (min) and capacity (veh per bin)
    free_flow: tuple[float, ...] = (4.0, 6.0, 9.0)
    capacity: tuple[float, ...] = (4.5, 4.2, 12.0)
    retail_access: tuple[float, ...] = (0.9, 0.5, 0.1)
    dest_asc: tuple[float, ...] = (0.0, -0.2, 0.3)
    # zone-to-zone distance (tens of km), rows are home zones
    distance: tuple[tuple[float, ...], ...] = ((0.10, 0.30, 0.55),
                                               (0.30, 0.12, 0.35),
                                               (0.55, 0.35, 0.08))
    # Weibull shape and start-time coefficients (intercept, income, male) per activity
    work_shape: float = 6.0
    work_beta: tuple[float, float, float] = (6.0 * np.log(8.0), 0.25, -0.1)
    service_shape: float = 3.5
    service_beta: tuple[float, float, float] = (3.5 * np.log(13.0), -0.2, 0.0)
    nhb_shape: float = 5.0
    nhb_beta: tuple[float, float, float] = (5.0 * np.log(17.0), 0.1, 0.0)
    trip_rates: tuple[float, float, float] = (0.6, 1.0, 0.5)  # work, service, nhb
    # planning priority for service activities
    priority_beta: tuple[float, float] = (0.4, 0.3)  # income, male
    priority_thresholds: tuple[float, ...] = (-0.6, 0.6)
    priority_shift_bins: tuple[int, ...] = (-6, 0, 6)
    taxi_vehicles: float = 1.8
    work_auto_share: float = 0.92
    bpr_alpha: float = 0.15
    bpr_power: float = 4.0

    def __post_init__(self):
        if self.population < 0:
            raise ValueError("population must be non-negative")
        if not len(self.free_flow) == len(self.capacity) == len(self.retail_access):
            raise ValueError("link attributes must have one entry per destination")
        if min(self.free_flow) <= 0 or min(self.capacity) <= 0:
            raise ValueError("free-flow times and capacities must be positive")
        if np.any(np.diff(self.priority_thresholds) <= 0):
            raise ValueError("priority thresholds must be strictly increasing")
        if len(self.priority_shift_bins) != len(self.priority_thresholds) + 1:
            raise ValueError("need one time shift per priority class")


DEFAULT_TOY = ToySimConfig()

# Ground truth behind the shipped observation file (unit-cube coordinates).
TRUE_UNIT = np.array([0.7, 0.3, 0.25, 0.8, 0.35])
TRUE_THETA = ABM_SPACE.lower + TRUE_UNIT * (ABM_SPACE.upper - ABM_SPACE.lower)
TRUTH_SEED = 20191201
NOISE_SEED = 8
NOISE_SD = 0.05


def _population(M: int, n_zones: int, rng: np.random.Generator):
    # stratified attribute draws keep run-to-run noise small
    u = lhs_unit(M, 4, rng)
    male = (u[:, 0] < 0.5).astype(float)
    density = 0.2 + 0.8 * u[:, 1]
    income = ndtri(np.clip(u[:, 2], 1e-12, 1 - 1e-12))
    home = np.minimum((u[:, 3] * n_zones).astype(int), n_zones - 1)
    return male, density, income, home


def _start_mass(shape: float, eta: np.ndarray) -> np.ndarray:
    """Per-traveller probability of starting in each bin, shape ``(M, 288)``."""
    edges = np.arange(N_BINS + 1) * BIN_HOURS
    surv = np.exp(-weibull_cumulative_hazard(edges[None, :], shape, eta[:, None]))
    return surv[:, :-1] - surv[:, 1:]


def _shift(mass: np.ndarray, k: int) -> np.ndarray:
    if k == 0:
        return mass
    out = np.zeros_like(mass)
    if k > 0:
        out[:, k:] = mass[:, :-k]
    else:
        out[:, :k] = mass[:, -k:]
    return out


def link_volumes(theta, seed: int, cfg: ToySimConfig = DEFAULT_TOY) -> np.ndarray:
    """Expected vehicle departures per link and bin, shape ``(n_links, 288)``."""
    th = np.asarray(theta.values if isinstance(theta, DesignPoint) else theta, dtype=float)
    if th.shape != (5,):
        raise ValueError("the toy simulator takes the five ABM parameters")
    male_taxi, dens_bike, asc_taxi, retail_work, gamma_service = th
    Z = len(cfg.free_flow)
    M = cfg.population
    vol = np.zeros((Z, N_BINS))
    if M == 0:
        return vol
    male, density, income, home = _population(M, Z, np.random.default_rng(seed))
    X = np.column_stack([np.ones(M), income, male])
    retail = np.asarray(cfg.retail_access)
    asc = np.asarray(cfg.dest_asc)

    # work: destination by retail accessibility, fixed auto share
    p_dest = mnl_probabilities(np.broadcast_to(retail_work * 0.8 * retail + asc, (M, Z)))
    mass = _start_mass(cfg.work_shape, X @ np.asarray(cfg.work_beta))
    vol += (cfg.trip_rates[0] * cfg.work_auto_share * p_dest).T @ mass

    # service (home-based other): distance decay, taxi mode choice, planning priority
    dist = np.asarray(cfg.distance)[home]
    p_dest = mnl_probabilities(-gamma_service * 1.0 * dist + asc)
    v_taxi = -3.2 + 0.45 * asc_taxi + 0.7 * male_taxi * male
    p_mode = mnl_probabilities(np.column_stack([np.full(M, 0.5), v_taxi, np.zeros(M)]))
    vehicles = p_mode[:, 0] + cfg.taxi_vehicles * p_mode[:, 1]  # third mode is transit
    base = _start_mass(cfg.service_shape, X @ np.asarray(cfg.service_beta))
    prio = ordered_probit(X[:, 1:] @ np.asarray(cfg.priority_beta), cfg.priority_thresholds)
    mass = sum(prio[:, [k]] * _shift(base, s) for k, s in enumerate(cfg.priority_shift_bins))
    vol += (cfg.trip_rates[1] * vehicles[:, None] * p_dest).T @ mass

    # non-home-based: retail-oriented destinations, bike mode choice
    p_dest = mnl_probabilities(np.broadcast_to(1.0 * retail + asc, (M, Z)))
    v_bike = -5.5 + 0.6 * dens_bike * density
    p_mode = mnl_probabilities(np.column_stack([np.zeros(M), v_bike]))
    mass = _start_mass(cfg.nhb_shape, X @ np.asarray(cfg.nhb_beta))
    vol += (cfg.trip_rates[2] * p_mode[:, 0:1] * p_dest).T @ mass
    return vol


def toy_simulator(theta, seed: int, cfg: ToySimConfig = DEFAULT_TOY) -> np.ndarray:
    """Link-averaged travel time (minutes) in 288 five-minute bins."""
    vol = link_volumes(theta, seed, cfg)
    t0 = np.asarray(cfg.free_flow)[:, None]
    cap = np.asarray(cfg.capacity)[:, None]
    times = t0 * (1.0 + cfg.bpr_alpha * (vol / cap) ** cfg.bpr_power)
    return times.mean(axis=0)


def loss_mse(observed, simulated) -> float:
    """Mean squared error over the 288 bins."""
    y = np.asarray(observed, dtype=float)
    s = np.asarray(simulated, dtype=float)
    if y.shape != (N_BINS,) or s.shape != (N_BINS,):
        raise ValueError(f"series must both have {N_BINS} bins, got {y.shape} and {s.shape}")
    return float(np.sum((y - s) ** 2) / N_BINS)


def make_observed(theta=TRUE_THETA, sim_seed: int = TRUTH_SEED, noise_sd: float = NOISE_SD,
                  noise_seed: int = NOISE_SEED, cfg: ToySimConfig = DEFAULT_TOY) -> np.ndarray:
    """Synthetic observations: one simulator run plus Gaussian noise, floored at zero."""
    clean = toy_simulator(theta, sim_seed, cfg)
    noise = np.random.default_rng(noise_seed).normal(0.0, noise_sd, N_BINS)
    return np.maximum(clean + noise, 0.0)


# -- series files: header "bin,value", one row per bin -------------------------

def write_series(path, values) -> None:
    v = np.asarray(values, dtype=float)
    if v.shape != (N_BINS,):
        raise ValueError(f"series must have {N_BINS} values")
    lines = ["bin,value"] + [f"{i},{x!r}" for i, x in enumerate(v.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_series(path) -> np.ndarray:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or lines[0].replace(" ", "") != "bin,value":
        raise ValueError(f"{path}: expected header 'bin,value'")
    rows = [ln.split(",") for ln in lines[1:]]
    if len(rows) != N_BINS:
        raise ValueError(f"{path}: expected {N_BINS} rows, found {len(rows)}")
    out = np.empty(N_BINS)
    for i, row in enumerate(rows):
        if len(row) != 2 or int(row[0]) != i:
            raise ValueError(f"{path}: malformed row {i + 2}: {','.join(row)!r}")
        out[i] = float(row[1])
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{path}: non-finite values")
    return out


def default_observed() -> np.ndarray:
    """The shipped observation series for the default toy configuration."""
    with resources.as_file(resources.files("abmcal") / "data" / "observed.csv") as p:
        return read_series(p)
