import pytest

from tokencompact.errors import ConfigError, DataError
from tokencompact.plots import emit_plots, line_chart, render_plots, validate_svg


def profile():
    return [{"layer": i, "tokens": 10 - i, "stable_rank": 2.0 + i * 0.1, "coding_rate": 5.0 - i} for i in range(4)]


def test_line_chart_is_valid_svg():
    (pts,) = validate_svg(line_chart([0, 1, 2], [1.0, 3.0, 2.0], "t <1>", "y"))
    assert len(pts) == 3
    xs = [p[0] for p in pts]
    assert xs == sorted(xs)
    # larger values sit higher on the page
    assert pts[1][1] < pts[0][1] < pts[2][1] or pts[1][1] < pts[2][1] < pts[0][1]


def test_flat_and_missing_values():
    (pts,) = validate_svg(line_chart([0, 1, 2], [4.0, None, 4.0], "flat", "y"))
    assert len(pts) == 2 and pts[0][1] == pts[1][1]


def test_render_plots_three_charts(tmp_path):
    charts = render_plots({"density_profile": profile()})
    assert sorted(charts) == ["coding_rate.svg", "stable_rank.svg", "tokens.svg"]
    for text in charts.values():
        assert len(validate_svg(text)[0]) == 4
    written = emit_plots({"density_profile": profile()}, tmp_path)
    assert len(written) == 3


def test_render_plots_requires_profile():
    with pytest.raises(ConfigError):
        render_plots({})


def test_validate_svg_rejects_wrong_content():
    with pytest.raises(DataError):
        validate_svg('<svg xmlns="http://www.w3.org/2000/svg"></svg>')
    with pytest.raises(DataError):
        validate_svg("<html/>")
