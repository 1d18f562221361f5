import json
from pathlib import Path

from PIL import Image

from fairperturb.report import (
    comparison_table,
    delta_table,
    fmt_delta,
    fmt_metric,
    fmt_percent,
    model_table,
    occupation_table,
    regression_table,
    render_report,
    write_figures,
)

FIXTURES = Path(__file__).parent / "fixtures"


def table5():
    return json.loads((FIXTURES / "table5.json").read_text())


def test_formatters():
    assert fmt_metric(0.983) == "0.983"
    assert fmt_metric(0.98) == "0.980"
    assert fmt_percent(0.901) == "90.1%"
    assert fmt_delta(-0.0609) == "-6.09%"
    assert fmt_delta(0.0) == "+0.00%"
    assert fmt_metric(None) == "n/a"


def test_model_table_row():
    table = model_table(table5()["models"])
    lines = table.splitlines()
    assert lines[0] == "| Model | Fairness Metric | Classification Accuracy |"
    assert "| FLAVA | 0.983 | 90.1% |" in lines
    assert "| CLIP-OpenAI | 0.884 | 68.6% |" in lines


def test_occupation_table_row():
    table = occupation_table(table5()["models"], ["chef", "doctor", "firefighter", "mechanic", "pilot"])
    assert table.splitlines()[0] == "| Model | Chef | Doc | FF | Mec | Pilot |"
    assert "| FLAVA | 0.999 | 0.728 | 0.988 | 0.986 | 0.973 |" in table


def test_render_skips_missing_accuracy_breakdown():
    md = render_report(table5())
    assert "difficult labels" in md
    assert "Fairness metric by occupation" in md
    assert "Accuracy by occupation" not in md


def test_delta_table():
    row = {"model": "m", "accuracy_delta": {"Black": -0.0609, "EastAsian": -0.0321, "Indian": -0.032}}
    assert delta_table([row]).splitlines()[-1] == "| m | -6.09% | -3.21% | -3.20% |"


def test_comparison_and_regression_tables():
    cmp = comparison_table([{"model_a": "a", "model_b": "b", "chi2": 10.0, "p_value": 0.0015654,
                             "adjusted_p": 0.0093924, "reject": True, "fairer": "a"}])
    assert cmp.splitlines()[-1] == "| a | b | 10.000 | 0.001565 | 0.009392 | yes | a |"
    reg = regression_table("m", {"Intercept": {"coef": 0.9, "se": 0.01, "t": 90.0, "p": 0.0}, "n_obs": 4})
    assert "| Intercept | +0.9000 | 0.0100 | 90.000 | 0 |" in reg


def test_figures(tmp_path):
    report = table5()
    report["models"][0]["per_group_accuracy"] = {"Black": 0.9, "Caucasian": 0.95, "EastAsian": 0.9, "Indian": 0.9}
    paths = write_figures(report, tmp_path / "fig")
    assert [p.name for p in paths] == ["models.png", "occupations.png", "groups.png"]
    for p in paths:
        with Image.open(p) as im:
            assert im.format == "PNG" and im.size[0] > 100
