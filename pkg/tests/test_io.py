import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from sardkit.errors import ConfigError
from sardkit.geometry import build_domain
from sardkit.io import EARTH_RADIUS_KM, LocationData, project_equal_area, read_locations, write_columns, write_locations


def test_projection_preserves_area():
    # a 1x1 degree cell at 45N has area R^2 * dlon * (sin(lat2) - sin(lat1))
    lon = np.array([10.0, 11.0, 11.0, 10.0])
    lat = np.array([45.0, 45.0, 46.0, 46.0])
    xy = project_equal_area(lon, lat, lat_ts=30.0)
    w = xy[1, 0] - xy[0, 0]
    h = xy[2, 1] - xy[1, 1]
    exact = EARTH_RADIUS_KM**2 * math.radians(1.0) * (math.sin(math.radians(46)) - math.sin(math.radians(45)))
    assert_allclose(w * h, exact, rtol=1e-12)


def test_projection_true_scale_latitude():
    xy = project_equal_area([0.0, 0.01], [40.0, 40.0], lon0=0.0, lat_ts=40.0)
    arc = EARTH_RADIUS_KM * math.cos(math.radians(40)) * math.radians(0.01)
    assert_allclose(xy[1, 0] - xy[0, 0], arc, rtol=1e-12)


def test_projection_rejects_bad_latitude():
    with pytest.raises(ValueError):
        project_equal_area([0.0], [95.0])


def sample_data(n=20, alt=True):
    rng = np.random.default_rng(0)
    d = build_domain(rng.uniform(0, 50, (n, 2)), rng.uniform(1, 3, n), ids=[f"m{i}" for i in range(n)])
    y0 = rng.uniform(1, 2, n)
    return LocationData(d, y0, 1.1 * y0, rng.normal(size=n), rng.uniform(size=n) if alt else None)


@pytest.mark.parametrize("alt", [True, False])
def test_round_trip(tmp_path, alt):
    data = sample_data(alt=alt)
    path = tmp_path / "loc.csv"
    write_locations(path, data)
    back = read_locations(path)
    assert back.ids == data.ids
    assert_allclose(back.domain.locations, data.domain.locations, rtol=0, atol=0)
    assert_allclose(back.y1, data.y1, rtol=0, atol=0)
    assert (back.alt is None) == (not alt)


def test_totals_are_divided_by_area(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("id,x,y,area,y_t0,y_t1,s\na,0,0,2,10,12,0\nb,1,0,4,10,12,0\n")
    data = read_locations(path, totals=True)
    assert_allclose(data.y0, [5.0, 2.5])
    assert_allclose(data.y1, [6.0, 3.0])


def test_geographic_input(tmp_path):
    path = tmp_path / "g.csv"
    path.write_text("id,lon,lat,area,y_t0,y_t1,s\na,10,45,1,1,1,0\nb,10.1,45,1,1,1,0\nc,10,45.1,1,1,1,0\n")
    data = read_locations(path, lon0=10.0, lat_ts=45.0)
    assert_allclose(data.domain.locations[0], [0.0, EARTH_RADIUS_KM * math.sin(math.radians(45)) / math.cos(math.radians(45))])
    assert 7 < data.domain.locations[1, 0] < 8


@pytest.mark.parametrize(
    "text",
    [
        "id,x,y,area,y_t0,s\na,0,0,1,1,0\n",
        "id,area,y_t0,y_t1,s\na,1,1,1,0\n",
        "id,x,y,area,y_t0,y_t1,s\na,0,zero,1,1,1,0\n",
        "id,x,y,area,y_t0,y_t1,s\n",
    ],
)
def test_bad_files(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ConfigError):
        read_locations(path)


def test_write_columns_formats(tmp_path):
    path = write_columns(tmp_path / "sub" / "c.csv", {"a": np.array([1, 2]), "b": [0.5, np.nan], "c": [True, False]}, ids=["x", "y"])
    assert path.read_text().splitlines() == ["id,a,b,c", "x,1,0.5,1", "y,2,,0"]
