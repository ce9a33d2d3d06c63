"""Replicated parameter sweeps over the (d_s, d_h) grid

Every replication of every cell runs with a seed derived from the master
seed and the cell coordinates, never drawn from shared state, so cells can
run in any order or in parallel and still give identical results.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from tqdm import tqdm

from lastmile_utils.network import NetworkConfig, RoutePolicy, run_scenario
from lastmile_utils.utils import ConfigInvalid, check_config_keys, check_number

__all__ = [
    "SweepSpec",
    "CellResult",
    "derive_seed",
    "run_sweep",
    "write_sweep_csv",
    "SWEEP_CSV_COLUMNS",
]

logger = logging.getLogger(__name__)

MASK64 = 0xFFFFFFFFFFFFFFFF
INDEX_BITS = 16

SWEEP_CSV_COLUMNS = [
    "policy",
    "d_s_km",
    "d_h_km",
    "reps",
    "transit_mean_h",
    "transit_std_h",
    "queue_mean",
    "queue_std",
    "util_mean",
    "util_std",
    "success_mean",
    "success_std",
]

SWEEP_KEYS = {"d_s_km", "d_h_km", "replications", "policies", "master_seed", "workers", "common_random_numbers"}


def _splitmix64(x):
    """SplitMix64 finalizer, a bijection on 64-bit integers"""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(master, ds_index, dh_index, policy_index, rep_index):
    """
    Seed of one replication of one sweep cell

    The four indices are packed into a 64-bit key (16 bits each) and mixed
    as ``splitmix64((master + splitmix64(key)) mod 2**64)``. Both steps are
    bijections, so distinct cells of a sweep never share a seed and changing
    the master seed changes every cell seed.

    Parameters
    ----------
    master: int
        64-bit master seed
    ds_index, dh_index, policy_index, rep_index: int
        Grid coordinates, each below 65536

    Returns
    -------
    int
        64-bit unsigned seed
    """
    key = 0
    for name, index in (("d_s", ds_index), ("d_h", dh_index), ("policy", policy_index), ("replication", rep_index)):
        if not 0 <= index < 2**INDEX_BITS:
            raise ConfigInvalid(f"{name} index", f"must be in [0, {2**INDEX_BITS}), got {index}")
        key = (key << INDEX_BITS) | index
    return _splitmix64((int(master) + _splitmix64(key)) & MASK64)


@dataclass(frozen=True)
class SweepSpec:
    """
    A replicated sweep over spoke-to-spoke and hub-to-spoke distances

    base: NetworkConfig
        Every other scenario parameter; its seed and policy are overridden per run
    d_s_values, d_h_values: tuple of float
        Grid values, km
    replications: int
        Independent runs per cell
    master_seed: int
    policies: tuple of RoutePolicy
    common_random_numbers: bool
        Reuse the same seeds across policies so policy comparisons are paired
    workers: int
        Process pool size; 1 runs serially
    """

    base: NetworkConfig = field(default_factory=NetworkConfig)
    d_s_values: tuple = ()
    d_h_values: tuple = ()
    replications: int = 16
    master_seed: int = 2024
    policies: tuple = (RoutePolicy("via_hub"), RoutePolicy("direct"))
    common_random_numbers: bool = True
    workers: int = 1

    def validate(self):
        check_number("replications", self.replications, integer=True)
        check_number("workers", self.workers, integer=True)
        check_number("master_seed", self.master_seed, integer=True)
        self.base.check_types()
        if self.replications < 1:
            logger.error(f"Invalid sweep replications={self.replications}")
            raise ConfigInvalid("replications", f"must be >= 1, got {self.replications}")
        if self.workers < 1:
            logger.error(f"Invalid sweep workers={self.workers}")
            raise ConfigInvalid("workers", f"must be >= 1, got {self.workers}")
        if len(self.policies) == 0:
            logger.error("Sweep has no policies")
            raise ConfigInvalid("policies", "at least one policy is required")
        for name, values in (("d_s_km", self.d_s_values), ("d_h_km", self.d_h_values)):
            if len(values) == 0:
                logger.error(f"Sweep axis {name} is empty")
                raise ConfigInvalid(name, "at least one grid value is required")
            for v in values:
                check_number(name, v)
            if any(v < 0 for v in values):
                logger.error(f"Sweep axis {name} has negative values {list(values)}")
                raise ConfigInvalid(name, f"grid values must be >= 0, got {list(values)}")
        return self

    @classmethod
    def from_config(cls, config):
        """Build a spec from a parsed config with ``[network]`` and ``[sweep]`` tables"""
        network = dict(config.get("network", {}))
        sweep = dict(config.get("sweep", {}))
        check_config_keys(sweep, SWEEP_KEYS, section="sweep")
        threshold_km = network.get("threshold_km")
        base = NetworkConfig.from_dict(network)
        names = sweep.get("policies", ["via_hub", "direct"])
        kwargs = {
            "base": base,
            "d_s_values": tuple(float(v) for v in sweep.get("d_s_km", [base.d_s_km])),
            "d_h_values": tuple(float(v) for v in sweep.get("d_h_km", [base.d_h_km])),
            "policies": tuple(RoutePolicy.from_name(name, threshold_km) for name in names),
            "master_seed": int(sweep.get("master_seed", base.seed)),
        }
        for key in ("replications", "workers", "common_random_numbers"):
            if key in sweep:
                kwargs[key] = sweep[key]
        return cls(**kwargs).validate()

    def cell_config(self, policy, d_s, d_h):
        """Scenario config of one cell, validated with the cell coordinates attached to errors"""
        config = replace(self.base, policy=policy, d_s_km=float(d_s), d_h_km=float(d_h))
        try:
            return config.validate()
        except ConfigInvalid as e:
            raise ConfigInvalid(e.field, str(e).split(": ", 1)[-1], cell=(str(policy), d_s, d_h)) from e


@dataclass(frozen=True)
class CellResult:
    """Replication means and sample standard deviations of one sweep cell"""

    policy: str
    d_s_km: float
    d_h_km: float
    reps: int
    transit_mean_h: float
    transit_std_h: float
    queue_mean: float
    queue_std: float
    util_mean: float
    util_std: float
    success_mean: float
    success_std: float

    @property
    def single_replication(self):
        """Standard deviations are reported as 0 and carry no information"""
        return self.reps == 1


def _mean_std(values):
    values = np.asarray(values, dtype=float)
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return float(np.mean(values)), std


def _run_cell(task):
    """Run every replication of one cell; top-level so process pools can pickle it"""
    policy_name, d_s, d_h, configs = task
    metrics = [run_scenario(config)[0] for config in configs]
    transit = _mean_std([m.avg_transit_hours for m in metrics])
    queue = _mean_std([m.time_avg_queue_len for m in metrics])
    util = _mean_std([m.hub_utilization for m in metrics])
    success = _mean_std([m.success_rate for m in metrics])
    return CellResult(policy_name, d_s, d_h, len(configs), *transit, *queue, *util, *success)


def run_sweep(spec, quiet=False):
    """
    Run every replication of every cell of a sweep

    Parameters
    ----------
    spec: SweepSpec
    quiet: bool
        Hide the progress bar

    Returns
    -------
    list of CellResult
        Ordered by policy, then d_s, then d_h, independent of ``spec.workers``

    Raises
    ------
    ConfigInvalid
        With the cell coordinates attached, if a cell config is invalid
    """
    spec.validate()
    tasks = []
    for p, policy in enumerate(spec.policies):
        seed_policy = 0 if spec.common_random_numbers else p
        for i, d_s in enumerate(spec.d_s_values):
            for j, d_h in enumerate(spec.d_h_values):
                cell = spec.cell_config(policy, d_s, d_h)
                configs = [
                    replace(cell, seed=derive_seed(spec.master_seed, i, j, seed_policy, r))
                    for r in range(spec.replications)
                ]
                tasks.append((str(policy), float(d_s), float(d_h), configs))

    logger.info(
        f"Sweep: {len(tasks)} cells x {spec.replications} replications, "
        f"{spec.workers} worker(s), master seed {spec.master_seed}"
    )
    progress = {"total": len(tasks), "desc": "Sweep cells", "unit": "cell", "disable": quiet}
    if spec.workers == 1:
        results = [_run_cell(task) for task in tqdm(tasks, **progress)]
    else:
        with ProcessPoolExecutor(max_workers=spec.workers) as executor:
            results = list(tqdm(executor.map(_run_cell, tasks), **progress))

    if spec.replications == 1:
        logger.warning("Sweep ran a single replication per cell: standard deviations are reported as 0")
    return results


def write_sweep_csv(results, path=None):
    """Write sweep results with the ``SWEEP_CSV_COLUMNS`` header; returns text when ``path`` is None"""
    df = pd.DataFrame([vars(r) for r in results], columns=SWEEP_CSV_COLUMNS)
    return df.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
