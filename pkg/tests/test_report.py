import csv
import io
import json

import pytest

from embsurg import report
from embsurg.errors import ConfigurationError


def test_empty_directory_is_an_error(tmp_path):
    with pytest.raises(ConfigurationError):
        report.build_report(tmp_path)


def test_aggregates_rows_per_method(tmp_path):
    report.write_result(tmp_path / "a", "repair", [
        {"method": "am", "class": 1, "accuracy": 0.8, "perceptual": 0.4},
        {"method": "am", "class": 2, "accuracy": 0.6, "perceptual": None},
        {"method": "corrupted", "class": 1, "accuracy": 0.0, "perceptual": 0.05},
    ])
    rep = report.write_report(tmp_path)
    rows = {r["method"]: r for r in rep["rows"]}
    assert rows["am"]["accuracy"] == pytest.approx(0.7)
    assert rows["am"]["perceptual"] == pytest.approx(0.4)
    assert rows["am"]["n_classes"] == 2 and rows["corrupted"]["frechet"] is None
    assert rep["sources"] == ["a.result.json"]
    md = (tmp_path / "report.md").read_text()
    assert "MS-SSIM ↓" in md and "Perceptual ↑" in md and "| repair | am | 2 |" in md
    parsed = list(csv.DictReader(io.StringIO((tmp_path / "report.csv").read_text())))
    assert {r["method"] for r in parsed} == {"am", "corrupted"}
    assert json.loads((tmp_path / "report.json").read_text()) == rep


def test_report_is_deterministic(tmp_path):
    for name in ("b", "a"):
        report.write_result(tmp_path / name, name, [{"method": "m", "class": 0, "accuracy": 1.0}])
    assert report.to_markdown(report.build_report(tmp_path)) == report.to_markdown(report.build_report(tmp_path))
    assert [r["experiment"] for r in report.build_report(tmp_path)["rows"]] == ["a", "b"]
