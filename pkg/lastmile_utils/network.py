"""Two-spoke, one-hub mail network on top of the event kernel

Mail is generated at spokes Alpha and Beta as independent Poisson streams
(rate lambda each), addressed to the opposite spoke. Under the via-hub policy
every item joins a single FIFO hub queue served at exponential rate mu
(an M/M/1 station fed at 2 * lambda), then travels ``2 * d_h + d_s``.
Direct routing skips the hub and travels ``d_s``. Delivery vehicles and the
hub queue are unbounded.
"""

import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import pandas as pd

from lastmile_utils.engine import EventQueue, Payload, RngStream, run_until, sample_exponential
from lastmile_utils.utils import ConfigInvalid, check_number, miles_to_km

__all__ = [
    "ALPHA",
    "BETA",
    "RoutePolicy",
    "NetworkConfig",
    "MailItem",
    "RunMetrics",
    "HubSpokeModel",
    "route_distance",
    "run_scenario",
    "mm1_wait_in_queue",
    "mm1_queue_length",
    "write_mail_csv",
    "MAIL_CSV_COLUMNS",
]

logger = logging.getLogger(__name__)

ALPHA = "Alpha"
BETA = "Beta"
OPPOSITE = {ALPHA: BETA, BETA: ALPHA}

# Spawn keys of the per-process random streams, one fixed key per process
STREAM_IDS = {ALPHA: 0, BETA: 1, "hub": 2}

DEFAULT_SPEED_KMH = miles_to_km(30.0)

MAIL_CSV_COLUMNS = [
    "id",
    "origin",
    "destination",
    "created_at",
    "queued_at",
    "service_start_at",
    "service_end_at",
    "delivered_at",
]

POLICY_NAMES = ("via_hub", "direct", "threshold")


@dataclass(frozen=True)
class RoutePolicy:
    """
    Routing rule between the two spokes

    kind: str
        ``"via_hub"``, ``"direct"`` or ``"threshold"``
    cutoff_km: float, optional
        Threshold only: route direct when ``d_s <= cutoff_km``, else via the hub
    """

    kind: str = "via_hub"
    cutoff_km: Optional[float] = None

    def __post_init__(self):
        if self.kind not in POLICY_NAMES:
            logger.error(f"Unknown routing policy {self.kind!r}")
            raise ConfigInvalid("policy", f"must be one of {POLICY_NAMES}, got {self.kind!r}")
        if self.kind == "threshold":
            if self.cutoff_km is not None:
                check_number("threshold_km", self.cutoff_km)
            if self.cutoff_km is None or not self.cutoff_km > 0:
                logger.error(f"Threshold policy needs a positive cutoff, got {self.cutoff_km}")
                raise ConfigInvalid("threshold_km", f"must be > 0 for threshold policy, got {self.cutoff_km}")

    @classmethod
    def from_name(cls, name, threshold_km=None):
        if name == "threshold":
            return cls("threshold", threshold_km)
        return cls(name)

    def uses_hub(self, d_s):
        if self.kind == "via_hub":
            return True
        if self.kind == "direct":
            return False
        return d_s > self.cutoff_km

    def __str__(self):
        if self.kind == "threshold":
            return f"threshold:{self.cutoff_km:g}"
        return self.kind


def route_distance(policy, d_s, d_h):
    """
    Travel distance of one item from origin spoke to destination spoke

    Parameters
    ----------
    policy: RoutePolicy
    d_s: float
        Spoke-to-spoke distance, km
    d_h: float
        Hub-to-spoke distance, km

    Returns
    -------
    float
        ``2 * d_h + d_s`` when the item goes through the hub, ``d_s`` otherwise

    Examples
    --------
    Two spokes 5 miles apart with the hub 50 miles away: 105 miles via the hub

    >>> from lastmile_utils.utils import km_to_miles
    >>> km = route_distance(RoutePolicy("via_hub"), miles_to_km(5), miles_to_km(50))
    >>> round(km_to_miles(km), 9)
    105.0
    """
    if policy.uses_hub(d_s):
        return 2 * d_h + d_s
    return d_s


@dataclass(frozen=True)
class NetworkConfig:
    """Parameters of one scenario run. Distances in km, rates per hour, times in hours."""

    d_s_km: float = miles_to_km(5.0)
    d_h_km: float = miles_to_km(50.0)
    speed_kmh: float = DEFAULT_SPEED_KMH
    lambda_per_hour: float = 0.25
    mu_per_hour: float = 1.0
    sim_time_hours: float = 1000.0
    seed: int = 2024
    policy: RoutePolicy = field(default_factory=RoutePolicy)
    hub_poll_hours: Optional[float] = None

    def check_types(self):
        """Raise ConfigInvalid naming the first field that is not a number"""
        for name in ("d_s_km", "d_h_km", "speed_kmh", "lambda_per_hour", "mu_per_hour", "sim_time_hours"):
            check_number(name, getattr(self, name))
        check_number("seed", self.seed, integer=True)
        if self.hub_poll_hours is not None:
            check_number("hub_poll_hours", self.hub_poll_hours)
        if not isinstance(self.policy, RoutePolicy):
            logger.error(f"Invalid config policy={self.policy!r}")
            raise ConfigInvalid("policy", f"expected a RoutePolicy, got {self.policy!r}")
        return self

    def validate(self):
        """Raise ConfigInvalid naming the first field that violates its invariant"""
        self.check_types()
        checks = [
            ("d_s_km", self.d_s_km >= 0, "must be >= 0"),
            ("d_h_km", self.d_h_km >= 0, "must be >= 0"),
            ("speed_kmh", self.speed_kmh > 0, "must be > 0"),
            ("lambda_per_hour", self.lambda_per_hour >= 0, "must be >= 0"),
            ("mu_per_hour", self.mu_per_hour > 0, "must be > 0"),
            ("sim_time_hours", self.sim_time_hours > 0, "must be > 0"),
            ("seed", 0 <= self.seed < 2**64, "must be a 64-bit unsigned integer"),
        ]
        for name, ok, message in checks:
            if not ok:
                value = getattr(self, name)
                logger.error(f"Invalid config {name}={value}: {message}")
                raise ConfigInvalid(name, f"{message}, got {value}")
        if self.hub_poll_hours is not None and not self.hub_poll_hours > 0:
            raise ConfigInvalid("hub_poll_hours", f"must be > 0 when set, got {self.hub_poll_hours}")
        if self.policy.uses_hub(self.d_s_km) and 2 * self.lambda_per_hour >= self.mu_per_hour:
            logger.warning(
                f"Hub input rate 2*lambda={2 * self.lambda_per_hour:g} >= mu={self.mu_per_hour:g}: "
                "the hub queue is unstable and grows without bound"
            )
        return self

    @classmethod
    def from_dict(cls, values):
        """Build a config from ``[network]`` keys (see ``NETWORK_KEYS``)"""
        values = dict(values)
        policy_name = values.pop("policy", "via_hub")
        threshold_km = values.pop("threshold_km", None)
        known = {f.name for f in fields(cls)}
        for key in values:
            if key not in known:
                logger.error(f"Unknown config key network.{key}")
                raise ConfigInvalid(f"network.{key}", "unknown config key")
        return cls(policy=RoutePolicy.from_name(policy_name, threshold_km), **values)


NETWORK_KEYS = {f.name for f in fields(NetworkConfig)} | {"threshold_km"}


@dataclass
class MailItem:
    id: int
    origin: str
    destination: str
    created_at: Optional[float] = None
    queued_at: Optional[float] = None
    service_start_at: Optional[float] = None
    service_end_at: Optional[float] = None
    delivered_at: Optional[float] = None

    @property
    def transit_hours(self):
        if self.delivered_at is None:
            return None
        return self.delivered_at - self.created_at

    @property
    def wait_hours(self):
        if self.service_start_at is None:
            return None
        return self.service_start_at - self.queued_at


@dataclass(frozen=True)
class RunMetrics:
    generated: int
    delivered: int
    avg_transit_hours: float
    max_queue_len: int
    time_avg_queue_len: float
    hub_utilization: float
    success_rate: float
    served: int = 0
    avg_wait_hours: float = 0.0
    in_flight: int = 0

    def as_dict(self):
        return asdict(self)


def mm1_wait_in_queue(lam, mu):
    """Expected wait in queue of an M/M/1 station, ``lam / (mu * (mu - lam))``; inf when unstable"""
    if lam >= mu:
        return math.inf
    return lam / (mu * (mu - lam))


def mm1_queue_length(lam, mu):
    """Expected number waiting in an M/M/1 queue, ``rho**2 / (1 - rho)``; inf when unstable"""
    if lam >= mu:
        return math.inf
    rho = lam / mu
    return rho**2 / (1 - rho)


class HubSpokeModel:
    """
    One scenario run: the event handlers of the mail, hub and delivery processes

    Processes are event-driven: an arrival wakes an idle hub immediately.
    With ``hub_poll_hours`` set, the idle hub instead checks its queue on a
    fixed poll interval.
    """

    def __init__(self, config):
        self.config = config.validate()
        self.env = EventQueue()
        master = RngStream(config.seed)
        self.rngs = {name: master.substream(stream_id) for name, stream_id in STREAM_IDS.items()}

        self.items = []
        self.hub_queue = deque()
        self.in_service = None
        self.in_transit = 0
        self.delivered = 0

        self._busy_since = None
        self._busy_hours = 0.0
        self._queue_area = 0.0
        self._queue_last_t = 0.0
        self.max_queue_len = 0
        self._poll_pending = False

        self._route_km = route_distance(config.policy, config.d_s_km, config.d_h_km)
        self._via_hub = config.policy.uses_hub(config.d_s_km)

    # Processes
    def mail_generator(self, spoke):
        """Schedule the next arrival at ``spoke``; inert when lambda is 0"""
        rate = self.config.lambda_per_hour
        if rate == 0:
            return
        at = self.env.now + sample_exponential(self.rngs[spoke], rate)
        if at <= self.config.sim_time_hours:
            self.env.schedule(at, Payload("ArrivalAtSpoke", (spoke,)))

    def hub_processing(self):
        """Start service of the head-of-queue item if the hub is idle"""
        if self.in_service is not None or len(self.hub_queue) == 0:
            return
        self._track_queue()
        item = self.hub_queue.popleft()
        item.service_start_at = self.env.now
        self.in_service = item
        self._busy_since = self.env.now
        service = sample_exponential(self.rngs["hub"], self.config.mu_per_hour)
        self.env.schedule(self.env.now + service, Payload("HubServiceComplete", (item.id,)))

    def delivery(self, item):
        """Put ``item`` on the road for ``route_distance / speed`` hours"""
        self.in_transit += 1
        travel = self._route_km / self.config.speed_kmh
        self.env.schedule(self.env.now + travel, Payload("DeliveryComplete", (item.id,)))

    # Event handlers
    def dispatch(self, event):
        tag = event.payload.tag
        if tag == "ArrivalAtSpoke":
            self._on_arrival(event.payload.args[0])
        elif tag == "HubServiceComplete":
            self._on_service_complete(event.payload.args[0])
        elif tag == "DeliveryComplete":
            self._on_delivery_complete(event.payload.args[0])
        elif tag == "PollQueue":
            self._on_poll()
        else:
            raise ValueError(f"Unknown event payload {event.payload}")

    def _on_arrival(self, spoke):
        now = self.env.now
        item = MailItem(len(self.items), spoke, OPPOSITE[spoke], created_at=now)
        self.items.append(item)
        logger.debug(f"Mail {item.id} created at {spoke}, t={now:.4f}")
        if self._via_hub:
            self._track_queue()
            item.queued_at = now
            self.hub_queue.append(item)
            if self.config.hub_poll_hours is None:
                self.hub_processing()
            self.max_queue_len = max(self.max_queue_len, len(self.hub_queue))
        else:
            self.delivery(item)
        self.mail_generator(spoke)

    def _on_service_complete(self, item_id):
        item = self.items[item_id]
        item.service_end_at = self.env.now
        self._busy_hours += self.env.now - self._busy_since
        self._busy_since = None
        self.in_service = None
        self.delivery(item)
        self.hub_processing()
        if self.in_service is None and self.config.hub_poll_hours is not None:
            self._schedule_poll()

    def _on_delivery_complete(self, item_id):
        item = self.items[item_id]
        item.delivered_at = self.env.now
        self.in_transit -= 1
        self.delivered += 1

    def _on_poll(self):
        self._poll_pending = False
        self.hub_processing()
        if self.in_service is None:
            self._schedule_poll()

    def _schedule_poll(self):
        at = self.env.now + self.config.hub_poll_hours
        if not self._poll_pending and at <= self.config.sim_time_hours:
            self._poll_pending = True
            self.env.schedule(at, Payload("PollQueue"))

    def _track_queue(self):
        now = self.env.now
        self._queue_area += len(self.hub_queue) * (now - self._queue_last_t)
        self._queue_last_t = now

    # Bookkeeping
    def census(self):
        """Counts that partition the generated items at the current instant"""
        return {
            "generated": len(self.items),
            "awaiting_service": len(self.hub_queue),
            "in_service": 0 if self.in_service is None else 1,
            "in_transit": self.in_transit,
            "delivered": self.delivered,
        }

    def start(self):
        for spoke in (ALPHA, BETA):
            self.mail_generator(spoke)
        if self._via_hub and self.config.hub_poll_hours is not None:
            self._schedule_poll()

    def run(self, trace=None):
        """
        Run to ``sim_time_hours`` and compute the metrics

        Parameters
        ----------
        trace: list, optional
            Receives one ``time<TAB>seq<TAB>payload`` line per dispatched event

        Returns
        -------
        (RunMetrics, list of MailItem)
        """
        self.start()
        steps = run_until(self.env, self.config.sim_time_hours, self.dispatch, trace=trace)
        metrics = self.metrics()
        logger.debug(
            f"Scenario {self.config.policy} d_s={self.config.d_s_km:g} km d_h={self.config.d_h_km:g} km: "
            f"{steps} events, {metrics.generated} generated, {metrics.delivered} delivered"
        )
        return metrics, list(self.items)

    def metrics(self):
        horizon = self.config.sim_time_hours
        self._track_queue()
        busy = self._busy_hours
        if self._busy_since is not None:
            busy += horizon - self._busy_since

        generated = len(self.items)
        transits = [item.transit_hours for item in self.items if item.delivered_at is not None]
        waits = [item.wait_hours for item in self.items if item.service_start_at is not None]
        avg_transit = math.fsum(transits) / len(transits) if transits else 0.0
        avg_wait = math.fsum(waits) / len(waits) if waits else 0.0
        # Vacuous success when nothing was generated
        success = self.delivered / generated if generated else 1.0

        return RunMetrics(
            generated=generated,
            delivered=self.delivered,
            avg_transit_hours=avg_transit,
            max_queue_len=self.max_queue_len,
            time_avg_queue_len=self._queue_area / horizon,
            hub_utilization=min(1.0, busy / horizon),
            success_rate=success,
            served=len(waits),
            avg_wait_hours=avg_wait,
            in_flight=generated - self.delivered,
        )


def run_scenario(config):
    """
    Run one scenario and return its metrics and mail lifecycle records

    Parameters
    ----------
    config: NetworkConfig

    Returns
    -------
    metrics: RunMetrics
    items: list of MailItem

    Raises
    ------
    ConfigInvalid
        If a config field violates its invariant
    """
    return HubSpokeModel(config).run()


def write_mail_csv(items, path=None):
    """
    Write the mail lifecycle table; absent timestamps are empty fields

    Returns the CSV text when ``path`` is None.
    """
    rows = [asdict(item) for item in items]
    df = pd.DataFrame(rows, columns=MAIL_CSV_COLUMNS)
    return df.to_csv(path, index=False, float_format="%.9f", na_rep="", lineterminator="\n")
