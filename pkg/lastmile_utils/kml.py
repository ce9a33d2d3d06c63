"""KML 2.2 export of device tracks and of the hub-and-spoke scenario layout"""

import logging
from pathlib import Path
from xml.etree import ElementTree

from lastmile_utils.network import ALPHA, BETA, RoutePolicy, route_distance
from lastmile_utils.utils import ConfigInvalid, check_number, clean_text

__all__ = ["KML_NAMESPACE", "tracks_to_kml", "scenario_to_kml", "write_kml", "PLACEMENT_KEYS"]

logger = logging.getLogger(__name__)

KML_NAMESPACE = "http://www.opengis.net/kml/2.2"
PLACEMENT_KEYS = {"alpha", "beta", "hub"}

# aabbggrr
PALETTE = [
    "ff0000ff",
    "ff00a5ff",
    "ff00ffff",
    "ff00ff00",
    "ffffff00",
    "ffff0000",
    "ffff00ff",
    "ff800080",
    "ff008080",
    "ff808000",
]


def _coordinate(lat, lon, alt=None):
    text = f"{lon:.7f},{lat:.7f}"
    if alt is not None:
        text += f",{alt:.2f}"
    return text


def _text(parent, tag, value):
    ElementTree.SubElement(parent, tag).text = clean_text(value)


def _document(name):
    root = ElementTree.Element("kml", xmlns=KML_NAMESPACE)
    document = ElementTree.SubElement(root, "Document")
    _text(document, "name", name)
    return root, document


def _style(parent, style_id, color):
    style = ElementTree.SubElement(parent, "Style", id=style_id)
    line = ElementTree.SubElement(style, "LineStyle")
    ElementTree.SubElement(line, "color").text = color
    ElementTree.SubElement(line, "width").text = "3"
    icon = ElementTree.SubElement(style, "IconStyle")
    ElementTree.SubElement(icon, "color").text = color


def _line_placemark(parent, name, style_id, coordinates):
    placemark = ElementTree.SubElement(parent, "Placemark")
    _text(placemark, "name", name)
    ElementTree.SubElement(placemark, "styleUrl").text = f"#{style_id}"
    line = ElementTree.SubElement(placemark, "LineString")
    ElementTree.SubElement(line, "tessellate").text = "1"
    ElementTree.SubElement(line, "coordinates").text = " ".join(coordinates)
    return placemark


def _point_placemark(parent, name, style_id, coordinate, description=None):
    placemark = ElementTree.SubElement(parent, "Placemark")
    _text(placemark, "name", name)
    if description is not None:
        _text(placemark, "description", description)
    ElementTree.SubElement(placemark, "styleUrl").text = f"#{style_id}"
    point = ElementTree.SubElement(placemark, "Point")
    ElementTree.SubElement(point, "coordinates").text = coordinate
    return placemark


def _serialize(root):
    ElementTree.indent(root, space="  ")
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ElementTree.tostring(root, encoding="unicode") + "\n"


def tracks_to_kml(tracks, name="Find My tracks"):
    """
    Aggregate KML layer with one folder per device

    Each folder holds the chronological path as a LineString and the last
    known position as a Point named after the device. Folders are ordered by
    device_key. Altitude is written only when every fix of a track has one.

    Parameters
    ----------
    tracks: list of DeviceTrack
    name: str
        Document name

    Returns
    -------
    str
        KML document text
    """
    root, document = _document(name)
    ordered = sorted(tracks, key=lambda t: t.device_key)
    for index in range(len(ordered)):
        _style(document, f"device-{index}", PALETTE[index % len(PALETTE)])

    for index, track in enumerate(ordered):
        style_id = f"device-{index}"
        folder = ElementTree.SubElement(document, "Folder")
        _text(folder, "name", track.name)
        _text(folder, "description", track.device_key)
        if len(track.records) == 0:
            logger.warning(f"Track {track.device_key} has no records; writing an empty folder")
            continue
        with_altitude = all(r.altitude is not None for r in track.records)
        coordinates = [
            _coordinate(r.latitude, r.longitude, r.altitude if with_altitude else None) for r in track.records
        ]
        _line_placemark(folder, f"{track.name} path", style_id, coordinates)
        _point_placemark(folder, track.name, style_id, coordinates[-1])

    logger.debug(f"KML layer with {len(ordered)} device folders")
    return _serialize(root)


def _check_placement(placements):
    missing = PLACEMENT_KEYS - set(placements)
    if missing:
        logger.error(f"Placement is missing {sorted(missing)}")
        raise ConfigInvalid("placement", f"missing coordinates for {sorted(missing)}")
    for key in sorted(placements):
        if key not in PLACEMENT_KEYS:
            logger.error(f"Unknown placement key {key}")
            raise ConfigInvalid(f"placement.{key}", "unknown config key")
        value = placements[key]
        if len(value) != 2:
            logger.error(f"Placement {key} is not a [lat, lon] pair: {value}")
            raise ConfigInvalid(f"placement.{key}", f"expected [lat, lon], got {value}")
        lat, lon = value
        check_number(f"placement.{key}", lat)
        check_number(f"placement.{key}", lon)
        if not (-90 <= lat <= 90 and -180 <= lon <= 180):
            logger.error(f"Placement {key} out of range: {value}")
            raise ConfigInvalid(f"placement.{key}", f"coordinates out of range: {value}")


def scenario_to_kml(config, placements, name="Hub-and-spoke scenario"):
    """
    KML layout of a scenario: Alpha, Beta and Hub placemarks plus the direct
    and the via-hub route

    Parameters
    ----------
    config: NetworkConfig
        Supplies the modelled route distances written in the descriptions
    placements: dict
        ``{"alpha": (lat, lon), "beta": (lat, lon), "hub": (lat, lon)}``
    name: str
        Document name

    Returns
    -------
    str
        KML document text

    Raises
    ------
    ConfigInvalid
        If a placement is missing or out of range
    """
    _check_placement(placements)
    alpha, beta, hub = (_coordinate(*placements[key]) for key in ("alpha", "beta", "hub"))

    root, document = _document(name)
    _style(document, "direct", PALETTE[3])
    _style(document, "via_hub", PALETTE[0])
    _style(document, "node", PALETTE[4])

    folder = ElementTree.SubElement(document, "Folder")
    ElementTree.SubElement(folder, "name").text = "Network"
    _point_placemark(folder, ALPHA, "node", alpha, description="spoke")
    _point_placemark(folder, BETA, "node", beta, description="spoke")
    _point_placemark(folder, "Hub", "node", hub, description="hub")

    folder = ElementTree.SubElement(document, "Folder")
    ElementTree.SubElement(folder, "name").text = "Routes"
    for policy, coordinates in (("direct", [alpha, beta]), ("via_hub", [alpha, hub, beta])):
        km = route_distance(RoutePolicy(policy), config.d_s_km, config.d_h_km)
        placemark = _line_placemark(folder, f"{ALPHA}-{BETA} {policy}", policy, coordinates)
        description = ElementTree.Element("description")
        description.text = f"{km:.3f} km modelled"
        placemark.insert(1, description)

    return _serialize(root)


def write_kml(text, path):
    """Write KML text as UTF-8 with LF line endings"""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    logger.info(f"KML written to {path}")
