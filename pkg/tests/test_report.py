import json

import numpy as np
import pytest

from bergflow.errors import InputError
from bergflow.report import fit_rate, is_empty_diff, read_csv, report_diff, write_csv


def test_power_law_fit_is_exact():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    fit = fit_rate(x, 4 / x, "power")
    assert fit.rate == pytest.approx(-1.0, abs=1e-12)
    assert fit.prefactor == pytest.approx(4.0)
    assert fit.r2 == pytest.approx(1.0)


def test_exponential_fit_is_exact():
    x = np.linspace(0, 2, 5)
    fit = fit_rate(x, np.exp(-2 * x), "exponential")
    assert fit.rate == pytest.approx(-2.0, abs=1e-12)


@pytest.mark.parametrize(
    "x,y,model",
    [([1, 2], [1, 2], "power"), ([1, 2, 3], [1, -1, 2], "power"), ([1, 1, 1], [1, 2, 3], "power"), ([0, 1, 2], [1, 2, 3], "power"), ([1, 2, 3], [1, 2, 3], "cubic")],
)
def test_degenerate_series_are_rejected(x, y, model):
    with pytest.raises(InputError):
        fit_rate(x, y, model)


def test_csv_round_trip_is_exact(tmp_path):
    rows = [[0, 0.1, float("nan")], [1, 1 / 3, 2.5e-300]]
    write_csv(tmp_path / "a.csv", ["m", "x", "y"], rows)
    header, data = read_csv(tmp_path / "a.csv")
    assert header == ["m", "x", "y"]
    assert data[1, 1] == 1 / 3 and data[1, 2] == 2.5e-300 and np.isnan(data[0, 2])
    assert (tmp_path / "a.csv").read_text().splitlines()[1] == "0,0.1,nan"


def make_report(path, scenario, values, extra=None):
    path.mkdir()
    (path / "summary.json").write_text(json.dumps({"scenario": scenario, "version": "x", "metrics": {"v": values[0]}}))
    write_csv(path / "s.csv", ["k", "e"], [[k, v] for k, v in enumerate(values)])
    if extra:
        write_csv(path / extra, ["k"], [[1]])


def test_report_diff(tmp_path):
    make_report(tmp_path / "a", "flow", [1.0, 2.0])
    make_report(tmp_path / "b", "flow", [1.0, 2.0])
    make_report(tmp_path / "c", "flow", [1.5, 2.0], extra="more.csv")
    make_report(tmp_path / "d", "bergman", [1.0, 2.0])
    assert is_empty_diff(report_diff(tmp_path / "a", tmp_path / "b"))
    diff = report_diff(tmp_path / "a", tmp_path / "c")
    assert diff["summary"]["metrics.v"] == {"a": 1.0, "b": 1.5}
    assert diff["series"]["s.csv"]["columns"] == ["e"]
    assert diff["series"]["more.csv"]["status"] == "only in b"
    # tolerances absorb value changes but not missing series
    assert not is_empty_diff(report_diff(tmp_path / "a", tmp_path / "c", atol=0.6))
    with pytest.raises(InputError):
        report_diff(tmp_path / "a", tmp_path / "d")
