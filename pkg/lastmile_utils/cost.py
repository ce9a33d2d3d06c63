"""Analytic hub-spoke cost model and cost-surface classification

The total cost of a configuration combines three demand-weighted rates,

    C(d_s, d_h) = alpha * C_travel + beta * C_time + gamma * C_congestion

with demand ``lambda_eff = lambda0 / max(d_s, d_min)**2`` falling off with the
square of the spoke-to-spoke distance and the hub treated as an M/M/1
station. Congestion is infinite (``UNSTABLE``) once demand reaches hub capacity.

At a fixed ``d_s`` every term is affine in ``d_h``: the travel and time terms
grow with ``2 * d_h`` and the congestion term does not involve ``d_h``. The
second difference along ``d_h`` is therefore zero, so every stable interior cell of
the built-in surface classifies as Flat and the surface has no Min, Max or
Saddle cell. Critical cells appear only for a custom ``cost_fn`` passed to
``classify_grid``.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from lastmile_utils.network import DEFAULT_SPEED_KMH, mm1_wait_in_queue
from lastmile_utils.utils import AxisTooShort, ConfigInvalid, DegenerateOD, check_number

__all__ = [
    "UNSTABLE",
    "CostParams",
    "CostBreakdown",
    "GridSurface",
    "demand_rate",
    "travel_cost",
    "time_cost",
    "congestion_cost",
    "total_cost",
    "hub_route_detour",
    "classify_grid",
    "classify_surface",
    "critical_cells",
    "write_surface_csv",
]

logger = logging.getLogger(__name__)

UNSTABLE = math.inf

MIN, MAX, SADDLE, FLAT, SLOPE = "Min", "Max", "Saddle", "Flat", "Slope"
UNSTABLE_CELL, EDGE = "Unstable", "Edge"
CRITICAL_CLASSES = (MIN, MAX, SADDLE)

FLAT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class CostParams:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    lambda0: float = 100.0
    mu: float = 10.0
    speed: float = DEFAULT_SPEED_KMH
    d_min: float = 0.1

    def validate(self):
        for name in ("alpha", "beta", "gamma", "lambda0", "mu", "speed", "d_min"):
            check_number(name, getattr(self, name))
        if min(self.alpha, self.beta, self.gamma) < 0:
            logger.error(f"Negative cost weights {self.alpha}, {self.beta}, {self.gamma}")
            raise ConfigInvalid("alpha/beta/gamma", "weights must be non-negative")
        if not self.alpha + self.beta + self.gamma > 0:
            logger.error("All cost weights are zero")
            raise ConfigInvalid("alpha/beta/gamma", "at least one weight must be positive")
        for name in ("mu", "speed", "d_min"):
            if not getattr(self, name) > 0:
                logger.error(f"Invalid cost {name}={getattr(self, name)}: must be > 0")
                raise ConfigInvalid(name, f"must be > 0, got {getattr(self, name)}")
        if self.lambda0 < 0:
            logger.error(f"Invalid cost lambda0={self.lambda0}: must be >= 0")
            raise ConfigInvalid("lambda0", f"must be >= 0, got {self.lambda0}")
        return self

    @classmethod
    def from_dict(cls, values):
        """Build params from ``[cost]`` config keys"""
        renames = {"speed_kmh": "speed", "d_min_km": "d_min"}
        kwargs = {}
        for key, value in values.items():
            name = renames.get(key, key)
            if name not in cls.__dataclass_fields__:
                logger.error(f"Unknown config key cost.{key}")
                raise ConfigInvalid(f"cost.{key}", "unknown config key")
            kwargs[name] = value
        return cls(**kwargs).validate()


COST_KEYS = {"alpha", "beta", "gamma", "lambda0", "mu", "speed_kmh", "d_min_km"}


@dataclass(frozen=True)
class CostBreakdown:
    travel: float
    time: float
    congestion: float
    total: float
    lambda_eff: float

    @property
    def stable(self):
        return math.isfinite(self.congestion)


def demand_rate(d_s, params):
    """Interaction demand per hour, ``lambda0 / max(d_s, d_min)**2``"""
    d = max(d_s, params.d_min)
    return params.lambda0 / d**2


def travel_cost(d_s, d_h, lambda_eff):
    """Demand-weighted route distance per hour, ``lambda_eff * (2 * d_h + d_s)``"""
    return lambda_eff * (2 * d_h + d_s)


def time_cost(d_s, d_h, lambda_eff, params):
    """Demand-weighted per-item travel time plus mean hub service time"""
    return lambda_eff * ((2 * d_h + d_s) / params.speed + 1 / params.mu)


def congestion_cost(d_h, lambda_eff, params):
    """
    Demand-weighted M/M/1 wait in the hub queue, ``lambda_eff * W_q``

    ``d_h`` is accepted for the shape of the cost function but does not enter
    the queueing term.

    Returns
    -------
    float
        The congestion rate, or ``UNSTABLE`` when ``lambda_eff >= mu``
    """
    if lambda_eff == 0:
        return 0.0
    wait = mm1_wait_in_queue(lambda_eff, params.mu)
    if math.isinf(wait):
        return UNSTABLE
    return lambda_eff * wait


def total_cost(d_s, d_h, params):
    """
    Weighted total cost of one (d_s, d_h) configuration

    Parameters
    ----------
    d_s: float
        Spoke-to-spoke distance, km
    d_h: float
        Hub-to-spoke distance, km
    params: CostParams

    Returns
    -------
    CostBreakdown
        Unstable configurations carry ``congestion = UNSTABLE`` and an
        infinite total whenever ``gamma > 0``
    """
    lam = demand_rate(d_s, params)
    travel = travel_cost(d_s, d_h, lam)
    time = time_cost(d_s, d_h, lam, params)
    congestion = congestion_cost(d_h, lam, params)
    total = params.alpha * travel + params.beta * time
    if params.gamma != 0:
        total += params.gamma * congestion
    return CostBreakdown(travel, time, congestion, total, lam)


def hub_route_detour(d_s, d_h):
    """
    Ratio of the via-hub route to the direct route, ``(2 * d_h + d_s) / d_s``

    Raises
    ------
    DegenerateOD
        If ``d_s <= 0``: co-located spokes have no direct route to compare with
    """
    if not d_s > 0:
        msg = f"Spoke-to-spoke distance must be positive for a detour ratio, got {d_s}"
        logger.error(msg)
        raise DegenerateOD(msg)
    return (2 * d_h + d_s) / d_s


@dataclass
class GridSurface:
    """
    Cost surface over a (d_s, d_h) grid

    d_s_axis, d_h_axis: np.ndarray
        Strictly ascending axis values, km
    cells: np.ndarray
        Total cost, shape ``(len(d_s_axis), len(d_h_axis))``
    classes: np.ndarray
        Per-cell label; interior cells are Min, Max, Saddle, Flat, Slope or
        Unstable, border cells are Edge
    travel, time, congestion: np.ndarray, optional
        Component surfaces when built from CostParams
    """

    d_s_axis: np.ndarray
    d_h_axis: np.ndarray
    cells: np.ndarray
    classes: np.ndarray
    travel: np.ndarray = None
    time: np.ndarray = None
    congestion: np.ndarray = None


def _check_axis(name, axis):
    axis = np.asarray(axis, dtype=float)
    if axis.ndim != 1 or len(axis) < 3:
        msg = f"{name} axis needs at least 3 points, got {axis.size}"
        logger.error(msg)
        raise AxisTooShort(msg)
    if np.any(np.diff(axis) <= 0):
        raise ConfigInvalid(name, "axis values must be strictly ascending")
    return axis


def _second_difference(f_prev, f_mid, f_next, h1, h2):
    """Second difference scaled to cost units; equals f_prev - 2 f_mid + f_next on a uniform axis"""
    return 2.0 * (h1 * f_next - (h1 + h2) * f_mid + h2 * f_prev) / (h1 + h2)


def classify_surface(cells, d_s_axis, d_h_axis):
    """
    Label every cell of a cost surface by its discrete curvature

    An interior cell is a discrete critical point when, along each axis, its
    value lies on one side of both neighbours. Critical cells are Min (both
    curvatures positive), Max (both negative) or Saddle (opposite signs).
    A cell with any second difference below ``FLAT_TOLERANCE * max|cell|``
    is Flat; other interior cells are Slope. Cells touching an unstable value
    are Unstable.

    Parameters
    ----------
    cells: array-like
        Shape ``(len(d_s_axis), len(d_h_axis))``
    d_s_axis, d_h_axis: array-like
        Strictly ascending, at least 3 points each

    Returns
    -------
    GridSurface
    """
    d_s_axis = _check_axis("d_s", d_s_axis)
    d_h_axis = _check_axis("d_h", d_h_axis)
    cells = np.asarray(cells, dtype=float)
    if cells.shape != (len(d_s_axis), len(d_h_axis)):
        raise ConfigInvalid("cells", f"shape {cells.shape} does not match axes")

    finite = np.isfinite(cells)
    scale = np.max(np.abs(cells[finite])) if finite.any() else 0.0
    tolerance = FLAT_TOLERANCE * scale

    classes = np.full(cells.shape, EDGE, dtype=object)
    n_s, n_h = cells.shape
    for i in range(1, n_s - 1):
        h1s, h2s = d_s_axis[i] - d_s_axis[i - 1], d_s_axis[i + 1] - d_s_axis[i]
        for j in range(1, n_h - 1):
            h1h, h2h = d_h_axis[j] - d_h_axis[j - 1], d_h_axis[j + 1] - d_h_axis[j]
            if not finite[i - 1 : i + 2, j - 1 : j + 2].all():
                classes[i, j] = UNSTABLE_CELL
                continue
            f = cells[i, j]
            s_prev, s_next = cells[i - 1, j], cells[i + 1, j]
            h_prev, h_next = cells[i, j - 1], cells[i, j + 1]
            curv_s = _second_difference(s_prev, f, s_next, h1s, h2s)
            curv_h = _second_difference(h_prev, f, h_next, h1h, h2h)
            if abs(curv_s) < tolerance or abs(curv_h) < tolerance:
                classes[i, j] = FLAT
                continue
            stationary_s = (s_prev - f) * (s_next - f) > 0
            stationary_h = (h_prev - f) * (h_next - f) > 0
            if not (stationary_s and stationary_h):
                classes[i, j] = SLOPE
            elif curv_s > 0 and curv_h > 0:
                classes[i, j] = MIN
            elif curv_s < 0 and curv_h < 0:
                classes[i, j] = MAX
            else:
                classes[i, j] = SADDLE

    counts = {label: int(np.sum(classes == label)) for label in (MIN, MAX, SADDLE, FLAT, SLOPE, UNSTABLE_CELL)}
    logger.debug(f"Surface classification: {counts}")
    return GridSurface(d_s_axis, d_h_axis, cells, classes)


def classify_grid(params, d_s_axis, d_h_axis, cost_fn=None):
    """
    Evaluate the cost surface on a grid and classify its interior cells

    Parameters
    ----------
    params: CostParams
    d_s_axis, d_h_axis: array-like
        Strictly ascending km values, at least 3 points each
    cost_fn: callable, optional
        ``cost_fn(d_s, d_h) -> float`` replacing ``total_cost`` (used for
        canonical test surfaces); component surfaces are then not filled

    Returns
    -------
    GridSurface

    Raises
    ------
    AxisTooShort
        If an axis has fewer than 3 points
    """
    d_s_axis = _check_axis("d_s", d_s_axis)
    d_h_axis = _check_axis("d_h", d_h_axis)
    shape = (len(d_s_axis), len(d_h_axis))

    if cost_fn is not None:
        cells = np.array([[cost_fn(ds, dh) for dh in d_h_axis] for ds in d_s_axis], dtype=float)
        return classify_surface(cells, d_s_axis, d_h_axis)

    params.validate()
    travel, time, congestion, cells = (np.empty(shape) for _ in range(4))
    for i, ds in enumerate(d_s_axis):
        for j, dh in enumerate(d_h_axis):
            breakdown = total_cost(ds, dh, params)
            travel[i, j] = breakdown.travel
            time[i, j] = breakdown.time
            congestion[i, j] = breakdown.congestion
            cells[i, j] = breakdown.total

    surface = classify_surface(cells, d_s_axis, d_h_axis)
    surface.travel, surface.time, surface.congestion = travel, time, congestion
    n_unstable = int(np.sum(~np.isfinite(congestion)))
    if n_unstable:
        logger.info(f"{n_unstable} of {cells.size} grid cells are in the unstable regime (lambda_eff >= mu)")
    return surface


def critical_cells(surface):
    """List of ``(d_s, d_h, label)`` for the Min, Max and Saddle cells of a surface"""
    found = []
    for i, j in zip(*np.nonzero(np.isin(surface.classes, CRITICAL_CLASSES))):
        found.append((float(surface.d_s_axis[i]), float(surface.d_h_axis[j]), surface.classes[i, j]))
    return found


def write_surface_csv(surface, path=None):
    """
    Write one row per cell, row-major over d_s then d_h

    Columns ``d_s_km,d_h_km,travel,time,congestion,total,class``. Returns the
    CSV text when ``path`` is None.
    """
    d_s, d_h = np.meshgrid(surface.d_s_axis, surface.d_h_axis, indexing="ij")
    empty = np.full(surface.cells.shape, np.nan)

    def column(values):
        return (empty if values is None else values).ravel()

    df = pd.DataFrame(
        {
            "d_s_km": d_s.ravel(),
            "d_h_km": d_h.ravel(),
            "travel": column(surface.travel),
            "time": column(surface.time),
            "congestion": column(surface.congestion),
            "total": surface.cells.ravel(),
            "class": surface.classes.ravel(),
        }
    )
    return df.to_csv(path, index=False, float_format="%.10g", na_rep="", lineterminator="\n")
