import logging
import math
from dataclasses import replace

import pytest

from lastmile_utils import ConfigInvalid, HubSpokeModel, NetworkConfig, RoutePolicy, route_distance, run_scenario
from lastmile_utils.engine import run_until
from lastmile_utils.network import (
    ALPHA,
    BETA,
    MAIL_CSV_COLUMNS,
    mm1_queue_length,
    mm1_wait_in_queue,
    write_mail_csv,
)
from lastmile_utils.utils import km_to_miles, miles_to_km, set_log_level

VIA_HUB = RoutePolicy("via_hub")
DIRECT = RoutePolicy("direct")

D_S = miles_to_km(5)
D_H = miles_to_km(50)


def test_route_distance_detour():
    via_hub = route_distance(VIA_HUB, D_S, D_H)
    direct = route_distance(DIRECT, D_S, D_H)
    assert km_to_miles(via_hub) == pytest.approx(105, rel=1e-12)
    assert km_to_miles(via_hub - direct) == pytest.approx(100, rel=1e-12)
    assert via_hub == pytest.approx(168.98, abs=0.01)


@pytest.mark.parametrize(
    "policy, d_s, d_h, expected",
    [
        (DIRECT, 8.05, 80.47, 8.05),
        (VIA_HUB, 0.0, 0.0, 0.0),
        (VIA_HUB, 8.05, 80.47, 168.99),
        (RoutePolicy("threshold", 10.0), 8.05, 80.47, 8.05),
        (RoutePolicy("threshold", 10.0), 10.0, 80.47, 10.0),
        (RoutePolicy("threshold", 10.0), 12.0, 80.47, 172.94),
    ],
)
def test_route_distance(policy, d_s, d_h, expected):
    assert route_distance(policy, d_s, d_h) == pytest.approx(expected)


def test_route_policy_fails():
    with pytest.raises(ConfigInvalid) as error_message:
        RoutePolicy("teleport")
    assert error_message.value.field == "policy"

    for cutoff in (None, 0.0, -2.0):
        with pytest.raises(ConfigInvalid) as error_message:
            RoutePolicy("threshold", cutoff)
        assert error_message.value.field == "threshold_km"

    assert str(RoutePolicy.from_name("threshold", 12.5)) == "threshold:12.5"


@pytest.mark.parametrize(
    "field, value",
    [
        ("d_s_km", -1.0),
        ("d_h_km", -0.5),
        ("speed_kmh", 0.0),
        ("lambda_per_hour", -0.1),
        ("mu_per_hour", 0.0),
        ("sim_time_hours", 0.0),
        ("seed", -1),
        ("hub_poll_hours", 0.0),
    ],
)
def test_config_invalid(field, value):
    config = replace(NetworkConfig(), **{field: value})
    with pytest.raises(ConfigInvalid) as error_message:
        run_scenario(config)
    assert error_message.value.field == field


@pytest.mark.parametrize(
    "values, field",
    [
        ({"d_s_km": "8"}, "d_s_km"),
        ({"speed_kmh": None}, "speed_kmh"),
        ({"mu_per_hour": [1.0]}, "mu_per_hour"),
        ({"seed": 1.5}, "seed"),
        ({"seed": True}, "seed"),
        ({"hub_poll_hours": "hourly"}, "hub_poll_hours"),
        ({"policy": "threshold", "threshold_km": "10"}, "threshold_km"),
    ],
)
def test_config_wrong_type(values, field):
    with pytest.raises(ConfigInvalid) as error_message:
        NetworkConfig.from_dict(values).validate()
    assert error_message.value.field == field
    assert "expected" in str(error_message.value)


def test_config_from_dict():
    config = NetworkConfig.from_dict({"d_s_km": 12.0, "policy": "threshold", "threshold_km": 10.0, "seed": 7})
    assert config.policy == RoutePolicy("threshold", 10.0)
    assert config.seed == 7

    with pytest.raises(ConfigInvalid) as error_message:
        NetworkConfig.from_dict({"arrival_rate": 3})
    assert "network.arrival_rate" in str(error_message.value)


def test_default_speed_is_30_mph():
    assert NetworkConfig().speed_kmh == pytest.approx(48.28032)


def test_empty_run():
    metrics, items = run_scenario(NetworkConfig(lambda_per_hour=0.0, sim_time_hours=10.0))
    assert items == []
    assert metrics.generated == 0
    assert metrics.delivered == 0
    assert metrics.success_rate == 1.0
    assert metrics.hub_utilization == 0.0
    assert metrics.avg_transit_hours == 0.0


def test_poisson_arrivals():
    config = NetworkConfig(lambda_per_hour=4.0, sim_time_hours=10_000.0, policy=DIRECT, seed=1)
    _, items = run_scenario(config)
    alpha = sum(1 for item in items if item.origin == ALPHA)
    beta = sum(1 for item in items if item.origin == BETA)
    assert alpha == pytest.approx(40_000, rel=0.03)
    assert beta == pytest.approx(40_000, rel=0.03)
    assert len(items) == pytest.approx(80_000, rel=0.03)
    assert all(item.destination != item.origin for item in items)


def test_direct_delivery_time():
    config = NetworkConfig(policy=DIRECT, sim_time_hours=200.0)
    metrics, items = run_scenario(config)
    transits = [item.transit_hours for item in items if item.delivered_at is not None]
    assert len(transits) > 0
    assert transits == pytest.approx([1 / 6] * len(transits))
    assert all(item.queued_at is None and item.service_start_at is None for item in items)
    assert metrics.hub_utilization == 0.0


def test_via_hub_travel_floor():
    # near-instant service: transit is the 105 mile drive at 30 mph
    config = NetworkConfig(mu_per_hour=1e9, lambda_per_hour=0.05, sim_time_hours=2000.0)
    metrics, items = run_scenario(config)
    transits = [item.transit_hours for item in items if item.delivered_at is not None]
    assert min(transits) >= 3.5 - 1e-9
    assert metrics.avg_transit_hours == pytest.approx(3.5, rel=1e-3)


def test_via_hub_queueing_delays():
    config = NetworkConfig(lambda_per_hour=0.45, mu_per_hour=1.0, sim_time_hours=5000.0, seed=3)
    metrics, _ = run_scenario(config)
    assert metrics.avg_transit_hours > 3.5
    assert metrics.max_queue_len > 0
    assert 0 < metrics.hub_utilization <= 1
    assert 0 <= metrics.success_rate <= 1
    assert metrics.delivered <= metrics.generated


def test_policy_dominance_paired_seeds():
    base = NetworkConfig(lambda_per_hour=0.3, mu_per_hour=1.0, sim_time_hours=3000.0, seed=99)
    via_metrics, via_items = run_scenario(base)
    direct_metrics, direct_items = run_scenario(replace(base, policy=DIRECT))

    gap = route_distance(VIA_HUB, base.d_s_km, base.d_h_km) / base.speed_kmh - base.d_s_km / base.speed_kmh
    assert via_metrics.avg_transit_hours - direct_metrics.avg_transit_hours >= gap
    # arrival streams do not depend on the policy
    assert [i.created_at for i in via_items] == [i.created_at for i in direct_items]
    for via, direct in zip(via_items, direct_items):
        if via.delivered_at is not None and direct.delivered_at is not None:
            assert via.transit_hours >= direct.transit_hours


@pytest.mark.parametrize("rho", [0.3, 0.5, 0.7])
def test_mm1_wait_oracle(rho):
    mu = 1.0
    lam_total = rho * mu
    config = NetworkConfig(
        lambda_per_hour=lam_total / 2, mu_per_hour=mu, sim_time_hours=200_000 / rho, seed=int(rho * 10)
    )
    metrics, _ = run_scenario(config)
    assert metrics.served >= 50_000
    assert metrics.avg_wait_hours == pytest.approx(mm1_wait_in_queue(lam_total, mu), rel=0.10)


def test_mm1_queue_length_near_saturation():
    config = NetworkConfig(lambda_per_hour=0.45, mu_per_hour=1.0, sim_time_hours=300_000.0, seed=2024)
    metrics, _ = run_scenario(config)
    assert mm1_queue_length(0.9, 1.0) == pytest.approx(8.1)
    assert metrics.time_avg_queue_len == pytest.approx(8.1, rel=0.15)


def test_mm1_helpers_unstable():
    assert math.isinf(mm1_wait_in_queue(1.0, 1.0))
    assert math.isinf(mm1_queue_length(2.0, 1.0))
    assert mm1_wait_in_queue(0.5, 1.0) == pytest.approx(1.0)


def test_conservation_and_lifecycle():
    config = NetworkConfig(lambda_per_hour=0.4, mu_per_hour=1.0, sim_time_hours=500.0, seed=5)
    model = HubSpokeModel(config)
    model.start()

    def handler(event):
        model.dispatch(event)
        census = model.census()
        parts = census["awaiting_service"] + census["in_service"] + census["in_transit"] + census["delivered"]
        assert census["generated"] == parts

    run_until(model.env, config.sim_time_hours, handler)

    for item in model.items:
        stamps = [
            item.created_at,
            item.queued_at,
            item.service_start_at,
            item.service_end_at,
            item.delivered_at,
        ]
        present = [s for s in stamps if s is not None]
        assert present == sorted(present)

    served = sorted((i for i in model.items if i.service_start_at is not None), key=lambda i: i.service_start_at)
    assert [i.id for i in served] == sorted(i.id for i in served)


def test_polling_hub():
    base = NetworkConfig(lambda_per_hour=0.3, mu_per_hour=1.0, sim_time_hours=1000.0, seed=8)
    _, event_items = run_scenario(base)
    poll_metrics, poll_items = run_scenario(replace(base, hub_poll_hours=0.25))

    assert poll_metrics.served > 0
    for event_driven, polled in zip(event_items, poll_items):
        if event_driven.service_start_at is not None and polled.service_start_at is not None:
            assert polled.service_start_at >= event_driven.service_start_at - 1e-9

    trace = []
    HubSpokeModel(replace(base, hub_poll_hours=0.25, sim_time_hours=5.0)).run(trace=trace)
    assert any(line.endswith("PollQueue()") for line in trace)


def test_determinism():
    config = NetworkConfig(lambda_per_hour=0.3, sim_time_hours=300.0, seed=12345)
    traces = []
    texts = []
    for _ in range(2):
        trace = []
        _, items = HubSpokeModel(config).run(trace=trace)
        traces.append(trace)
        texts.append(write_mail_csv(items))
    assert traces[0] == traces[1]
    assert texts[0] == texts[1]

    _, other = run_scenario(replace(config, seed=54321))
    assert write_mail_csv(other) != texts[0]


def test_write_mail_csv(tmp_path):
    config = NetworkConfig(policy=DIRECT, sim_time_hours=50.0, seed=4)
    _, items = run_scenario(config)
    text = write_mail_csv(items)
    lines = text.split("\n")
    assert lines[0] == ",".join(MAIL_CSV_COLUMNS)
    # hub timestamps are empty under direct routing
    first = lines[1].split(",")
    assert first[0] == "0"
    assert first[4:7] == ["", "", ""]
    assert "\r" not in text

    path = tmp_path / "mail.csv"
    write_mail_csv(items, path)
    assert path.read_text(encoding="utf-8") == text


def test_scenario_summary_is_debug(caplog):
    logger = logging.getLogger("lastmile_utils")
    logger.addHandler(caplog.handler)
    try:
        set_log_level(logging.INFO)
        run_scenario(NetworkConfig(lambda_per_hour=0.2, sim_time_hours=50.0))
        assert [r for r in caplog.records if r.name == "lastmile_utils.network" and r.levelno >= logging.INFO] == []

        set_log_level(logging.DEBUG)
        run_scenario(NetworkConfig(lambda_per_hour=0.2, sim_time_hours=50.0))
        (summary,) = [r for r in caplog.records if r.getMessage().startswith("Scenario via_hub")]
        assert summary.levelno == logging.DEBUG
    finally:
        set_log_level(logging.INFO)
        logger.removeHandler(caplog.handler)
