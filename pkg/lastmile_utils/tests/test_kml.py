import json
from pathlib import Path
from xml.etree import ElementTree

import pytest

from lastmile_utils import (
    ConfigInvalid,
    DeviceTrack,
    NetworkConfig,
    TraceRecord,
    build_tracks,
    parse_items_data,
    scenario_to_kml,
    tracks_to_kml,
)
from lastmile_utils.kml import KML_NAMESPACE, write_kml
from lastmile_utils.tests.conftest import FLEET_DEVICES, START_MS, make_item
from lastmile_utils.utils import miles_to_km

DATA = Path(__file__).parent / "data"
NS = {"kml": KML_NAMESPACE}

PLACEMENTS = {"alpha": (34.7304, -86.5861), "beta": (34.7500, -86.4900), "hub": (35.4000, -87.2000)}


def parse(text):
    return ElementTree.fromstring(text.encode("utf-8"))


def line_vertices(placemark):
    text = placemark.find("kml:LineString/kml:coordinates", NS).text
    return [tuple(float(v) for v in vertex.split(",")) for vertex in text.split()]


def make_track(fixes, device_key="SN1", name="Lara Croft"):
    records = tuple(
        TraceRecord(device_key, name, lat, lon, START_MS + k, altitude=alt) for k, (lat, lon, alt) in enumerate(fixes)
    )
    return DeviceTrack(device_key, name, records)


def small_fleet():
    """18 devices with three hourly fixes each"""
    tracks = []
    for d in range(FLEET_DEVICES):
        key, name = f"SN{d:04d}", f"Tracker {d:02d}"
        lat = round(34.70 + 0.01 * d, 6)
        records = tuple(
            TraceRecord(key, name, lat, round(-86.50 + 0.0001 * k, 6), START_MS + k * 3_600_000 + d * 1000)
            for k in range(3)
        )
        tracks.append(DeviceTrack(key, name, records))
    return tracks


def test_empty_export_is_valid():
    root = parse(tracks_to_kml([]))
    assert root.tag == f"{{{KML_NAMESPACE}}}kml"
    assert root.findall(".//kml:Folder", NS) == []
    assert root.find("kml:Document/kml:name", NS).text == "Find My tracks"


def test_coordinates_are_lon_lat():
    track = make_track([(34.70, -86.50, None), (34.71, -86.49, None), (34.72, -86.48, None)])
    root = parse(tracks_to_kml([track]))
    (folder,) = root.findall(".//kml:Folder", NS)
    assert folder.find("kml:name", NS).text == "Lara Croft"
    assert folder.find("kml:description", NS).text == "SN1"

    path, last = folder.findall("kml:Placemark", NS)
    assert path.find("kml:name", NS).text == "Lara Croft path"
    assert line_vertices(path) == [(-86.50, 34.70), (-86.49, 34.71), (-86.48, 34.72)]
    assert last.find("kml:Point/kml:coordinates", NS).text == "-86.4800000,34.7200000"


def test_altitude_written_only_when_complete():
    complete = make_track([(1.0, 2.0, 100.0), (1.1, 2.1, 105.5)])
    (path,) = parse(tracks_to_kml([complete])).findall(".//kml:Placemark[kml:LineString]", NS)
    assert line_vertices(path) == [(2.0, 1.0, 100.0), (2.1, 1.1, 105.5)]

    partial = make_track([(1.0, 2.0, 100.0), (1.1, 2.1, None)])
    (path,) = parse(tracks_to_kml([partial])).findall(".//kml:Placemark[kml:LineString]", NS)
    assert all(len(vertex) == 2 for vertex in line_vertices(path))


def test_fleet_layer(fleet_tracks):
    text = tracks_to_kml(fleet_tracks)
    folders = parse(text).findall(".//kml:Folder", NS)
    assert len(folders) == FLEET_DEVICES
    assert [f.find("kml:description", NS).text for f in folders] == sorted(t.device_key for t in fleet_tracks)
    for folder, track in zip(folders, sorted(fleet_tracks, key=lambda t: t.device_key)):
        path = folder.find("kml:Placemark[kml:LineString]", NS)
        assert len(line_vertices(path)) == len(track)

    assert tracks_to_kml(list(reversed(fleet_tracks))) == text


def test_fleet_layer_matches_golden(tmp_path):
    expected = (DATA / "fleet_layer.kml").read_text(encoding="utf-8")
    assert tracks_to_kml(small_fleet()) == expected
    assert tracks_to_kml(list(reversed(small_fleet()))) == expected

    path = tmp_path / "fleet.kml"
    write_kml(tracks_to_kml(small_fleet()), path)
    assert path.read_bytes() == (DATA / "fleet_layer.kml").read_bytes()


def test_track_without_records():
    root = parse(tracks_to_kml([DeviceTrack("SN9", "Idle", ())]))
    (folder,) = root.findall(".//kml:Folder", NS)
    assert folder.findall("kml:Placemark", NS) == []


def test_scenario_layout():
    config = NetworkConfig(d_s_km=miles_to_km(5), d_h_km=miles_to_km(50))
    root = parse(scenario_to_kml(config, PLACEMENTS))
    network, routes = root.findall(".//kml:Folder", NS)

    names = [p.find("kml:name", NS).text for p in network.findall("kml:Placemark", NS)]
    assert names == ["Alpha", "Beta", "Hub"]

    direct, via_hub = routes.findall("kml:Placemark", NS)
    assert len(line_vertices(direct)) == 2
    assert line_vertices(via_hub) == [
        (PLACEMENTS[key][1], PLACEMENTS[key][0]) for key in ("alpha", "hub", "beta")
    ]
    assert direct.find("kml:description", NS).text == "8.047 km modelled"
    assert via_hub.find("kml:description", NS).text == "168.981 km modelled"


def test_scenario_matches_golden():
    config = NetworkConfig(d_s_km=miles_to_km(5), d_h_km=miles_to_km(50))
    assert scenario_to_kml(config, PLACEMENTS) == (DATA / "scenario.kml").read_text(encoding="utf-8")


def test_scenario_co_located_points():
    same = {"alpha": (10.0, 20.0), "beta": (10.0, 20.0), "hub": (10.0, 20.0)}
    root = parse(scenario_to_kml(NetworkConfig(d_s_km=0.0, d_h_km=0.0), same))
    _, routes = root.findall(".//kml:Folder", NS)
    _, via_hub = routes.findall("kml:Placemark", NS)
    assert line_vertices(via_hub) == [(20.0, 10.0)] * 3


@pytest.mark.parametrize(
    "placements, message",
    [
        ({"alpha": (0, 0), "beta": (0, 1)}, "missing coordinates for ['hub']"),
        ({**PLACEMENTS, "depot": (0, 0)}, "placement.depot"),
        ({**PLACEMENTS, "hub": (91.0, 0.0)}, "out of range"),
        ({**PLACEMENTS, "beta": (1.0, 2.0, 3.0)}, "expected [lat, lon]"),
        ({**PLACEMENTS, "hub": ("north", "west")}, "placement.hub: expected a number"),
        ({**PLACEMENTS, "alpha": (None, -86.5)}, "placement.alpha: expected a number"),
    ],
)
def test_placement_fails(placements, message):
    with pytest.raises(ConfigInvalid) as error_message:
        scenario_to_kml(NetworkConfig(), placements)
    assert message in str(error_message.value)


def test_control_characters_stay_well_formed():
    track = make_track([(1.0, 2.0, None), (1.5, 2.5, None)], device_key="SN\u00011", name="Lara\u0001Croft\u001b")
    folder = parse(tracks_to_kml([track])).find(".//kml:Folder", NS)
    assert folder.find("kml:name", NS).text == "LaraCroft"
    assert folder.find("kml:description", NS).text == "SN1"
    assert folder.find("kml:Placemark/kml:name", NS).text == "LaraCroft path"

    item = make_item("Tracker\u0007 One", 34.7304, -86.5861, START_MS, serial="SN\u00082")
    records, _ = parse_items_data(json.dumps([item]))
    folder = parse(tracks_to_kml(build_tracks(records))).find(".//kml:Folder", NS)
    assert folder.find("kml:name", NS).text == "Tracker One"


def test_write_kml(tmp_path):
    path = tmp_path / "tracks.kml"
    write_kml(tracks_to_kml([make_track([(1.0, 2.0, None), (1.5, 2.5, None)])]), path)
    data = path.read_bytes()
    assert b"\r" not in data
    assert data.startswith(b'<?xml version="1.0" encoding="UTF-8"?>\n')
    assert parse(data.decode("utf-8")).find(".//kml:Folder", NS) is not None
