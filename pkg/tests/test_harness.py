"""Experiment configs, sample-weight modes, presets, and the ablation grid."""

import csv
import io
import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from burstmtl.errors import ConfigError
from burstmtl.harness import (
    CHAIN_BLOCKS,
    CONFIG_KEYS,
    PRESET_CONFIGS,
    PRESET_ORDER,
    ExperimentConfig,
    GridRow,
    SampleWeighting,
    apply_overrides,
    compute_sample_weights,
    format_config,
    parse_config,
    parse_config_text,
    render_grid_csv,
    render_grid_markdown,
    rows_from_json,
    run_grid,
    run_preset,
)
from burstmtl.objectives import MetricsReport
from burstmtl.trainer import Stage

# --- sample weights ----------------------------------------------------------


def test_sample_weights_none_mode_is_ones():
    np.testing.assert_array_equal(
        compute_sample_weights([0, 3, 3, 1], SampleWeighting.NONE), np.ones(4)
    )


def test_sample_weights_balanced_groups_are_ones():
    got = compute_sample_weights([0, 0, 1, 1], SampleWeighting.INVERSE_COUNTRY)
    np.testing.assert_allclose(got, np.ones(4), atol=1e-12)


def test_sample_weights_worked_example():
    # B=4, two groups: n_0=3 -> 4/(2*3), n_1=1 -> 4/(2*1)
    got = compute_sample_weights([0, 0, 0, 1], SampleWeighting.INVERSE_COUNTRY)
    np.testing.assert_allclose(got, [2 / 3, 2 / 3, 2 / 3, 2.0], atol=1e-9)


def test_sample_weights_single_group_is_ones():
    got = compute_sample_weights([2, 2, 2], SampleWeighting.INVERSE_COUNTRY)
    np.testing.assert_allclose(got, np.ones(3), atol=1e-12)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 64))
def test_sample_weights_mean_is_exactly_one(seed, n):
    countries = np.random.default_rng(seed).integers(0, 4, n)
    weights = compute_sample_weights(countries, SampleWeighting.INVERSE_COUNTRY)
    assert weights.mean() == pytest.approx(1.0, abs=1e-12)
    assert (weights > 0).all()


# --- config parsing ----------------------------------------------------------


def test_minimal_config_uses_defaults():
    config = parse_config_text("seed = 7\n")
    assert config.seed == 7
    assert config.tasks_preset == "2/3"
    assert config.s1_max_epochs == 30 and config.s2_warmup_epochs == 1
    assert config.objective_class_weights is True


def test_seed_is_mandatory():
    with pytest.raises(ConfigError, match="seed"):
        parse_config_text("data.n_samples = 50\n")


def test_format_parse_round_trip():
    config = parse_config_text(
        "seed = 3\ndata.noise_level = 0.05\ntasks.preset = 0/5\ntasks.flags = -Two,-SM\n"
        "trainer.stage2.lr_max = 3e-05\nmodel.detach_intermediate = true\n"
    )
    assert parse_config_text(format_config(config)) == config
    # every known key appears in the emitted text
    emitted = format_config(config)
    for key in CONFIG_KEYS:
        assert f"{key} = " in emitted


def test_unknown_key_is_named_with_line():
    with pytest.raises(ConfigError, match=r"line 2.*modle\.dim"):
        parse_config_text("seed = 0\nmodle.dim = 4\n")


def test_comments_and_blanks_are_ignored():
    config = parse_config_text(
        "# an experiment\n\nseed = 1  # inline comment\n\n# data block\ndata.n_samples = 64\n"
    )
    assert config.seed == 1 and config.data_n_samples == 64


def test_type_errors_name_the_key():
    with pytest.raises(ConfigError, match="'data.n_samples'"):
        parse_config_text("seed = 0\ndata.n_samples = many\n")
    with pytest.raises(ConfigError, match="'trainer.stage1.lr'"):
        parse_config_text("seed = 0\ntrainer.stage1.lr = fast\n")
    with pytest.raises(ConfigError, match="'model.detach_intermediate'"):
        parse_config_text("seed = 0\nmodel.detach_intermediate = maybe\n")


def test_overrides_win_over_file_text():
    config = parse_config_text(
        "seed = 0\ntrainer.stage2.lr_max = 4e-05\n", overrides=("trainer.stage2.lr_max=1e-05",)
    )
    assert config.s2_lr_max == 1e-5


def test_malformed_override_is_located():
    with pytest.raises(ConfigError, match="override 1"):
        parse_config_text("seed = 0\n", overrides=("no_equals_sign",))


def test_validation_failures_surface_at_parse_time():
    with pytest.raises(ConfigError, match="3/2"):
        parse_config_text("seed = 0\ntasks.preset = 3/2\n")
    with pytest.raises(ConfigError, match="sample_weights"):
        parse_config_text("seed = 0\nobjective.sample_weights = inverse_type\n")
    with pytest.raises(ConfigError, match="manifest"):
        parse_config_text("seed = 0\ndata.source = manifest\n")
    with pytest.raises(ConfigError, match="backbone"):
        parse_config_text("seed = 0\nmodel.backbone = resnet\n")


def test_parse_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.cfg")


def test_parse_config_reads_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("seed = 5\ndata.n_samples = 32\n")
    config = parse_config(path, overrides=("data.n_samples=48",))
    assert config.seed == 5 and config.data_n_samples == 48


def test_apply_overrides_returns_new_config():
    base = ExperimentConfig(seed=0)
    updated = apply_overrides(base, ("data.dim=8", "tasks.flags=-Two"))
    assert updated.data_dim == 8 and updated.tasks_flags == ("-Two",)
    assert base.data_dim == 16  # original untouched
    with pytest.raises(ConfigError):
        apply_overrides(base, ("bogus.key=1",))


def test_config_helper_views():
    config = ExperimentConfig(seed=9, data_n_samples=64, data_t_min=3, data_t_max=9)
    spec = config.synth_spec()
    assert spec.n_samples == 64 and spec.t_range == (3, 9) and spec.seed == 9
    heads, finetune = config.stage_configs()
    assert heads.stage is Stage.HEADS_ONLY and finetune.stage is Stage.FINE_TUNE
    assert heads.lr == config.s1_lr and finetune.lr_max == config.s2_lr_max
    assert config.task_set().names() == ("High", "Culture", "Two", "Type", "Country")


# --- ablation presets --------------------------------------------------------


def test_preset_table_row_order():
    assert PRESET_ORDER == ("2/3", "1/4", "0/5", "MSE", "MAE", "-Two", "-CW", "+SW", "-SM", "-Country")
    assert tuple(p for block in CHAIN_BLOCKS for p in block) == PRESET_ORDER[:6] + PRESET_ORDER[6:]


def test_every_preset_is_a_resolvable_config():
    base = ExperimentConfig(seed=0)
    for preset, overrides in PRESET_CONFIGS.items():
        config = apply_overrides(base, overrides)
        config.validate()
        # and it round-trips through the text form
        assert parse_config_text(format_config(config)) == config


def test_preset_axes_spot_checks():
    base = ExperimentConfig(seed=0)
    later = apply_overrides(base, PRESET_CONFIGS["-SM"])
    assert later.tasks_preset == "0/5" and later.tasks_flags == ("-Two", "-SM")
    no_cw = apply_overrides(base, PRESET_CONFIGS["-CW"])
    assert no_cw.objective_class_weights is False and no_cw.objective_sample_weights == "none"
    sw = apply_overrides(base, PRESET_CONFIGS["+SW"])
    assert sw.objective_class_weights is False and sw.objective_sample_weights == "inverse_country"
    removed = apply_overrides(base, PRESET_CONFIGS["-Country"])
    assert "Country" not in removed.task_set()
    assert removed.tasks_preset == "0/5"


# --- grid rendering ----------------------------------------------------------


def _fake_row(preset, values):
    names = ("High", "Culture", "Two", "Type", "Country")
    metrics = {n: v for n, v in zip(names, values) if v is not None}
    kinds = {n: ("UAR" if n in ("Type", "Country") else "CCC") for n in metrics}
    return GridRow(preset=preset, report=MetricsReport(metrics=metrics, metric_kinds=kinds))


def test_markdown_layout_and_missing_cells():
    rows = [
        _fake_row("0/5", (0.5, 0.4, 0.3, 0.6, 0.7)),
        _fake_row("-Two", (0.55, 0.45, None, 0.65, 0.75)),
    ]
    text = render_grid_markdown(rows)
    lines = text.splitlines()
    assert lines[0] == "| Preset | High CCC | Culture CCC | Two CCC | Type UAR | Country UAR |"
    assert lines[1].startswith("| ---")
    assert lines[2] == "| 0/5 | 0.500 | 0.400 | 0.300 | 0.600 | 0.700 |"
    assert lines[3] == "| -Two | 0.550 | 0.450 | -- | 0.650 | 0.750 |"


def test_markdown_bold_best_marks_column_maxima():
    rows = [
        _fake_row("a", (0.5, 0.4, 0.3, 0.6, 0.7)),
        _fake_row("b", (0.55, 0.35, None, 0.65, 0.7)),
    ]
    text = render_grid_markdown(rows, bold_best=True)
    assert "**0.550**" in text and "**0.400**" in text and "**0.300**" in text
    # ties are both bolded
    assert text.count("**0.700**") == 2


def test_markdown_error_rows():
    rows = [_fake_row("0/5", (0.5, 0.4, 0.3, 0.6, 0.7)), GridRow("MSE", None, "ConfigError: boom")]
    text = render_grid_markdown(rows)
    assert "| MSE | ERR | ERR | ERR | ERR | ERR |" in text
    assert "- MSE: ConfigError: boom" in text


def test_csv_round_trips_float_values():
    rows = [_fake_row("0/5", (0.123456789012345, 0.4, 0.3, 0.6, 0.7))]
    text = render_grid_csv(rows)
    reader = csv.DictReader(io.StringIO(text))
    record = next(reader)
    assert record["preset"] == "0/5"
    assert float(record["high_ccc"]) == 0.123456789012345
    assert record["error"] == ""


# --- end-to-end grid runs ----------------------------------------------------


def _tiny_base(tmp_path, **kw):
    defaults = dict(
        seed=0,
        out_dir=str(tmp_path / "runs"),
        data_n_samples=24,
        model_encoder_dim=8,
        model_encoder_blocks=1,
        model_head_hidden=8,
        s1_max_epochs=1,
        s1_patience=0,
        s1_batch_size=8,
        s2_max_epochs=1,
        s2_patience=0,
        s2_batch_size=8,
        s2_warmup_epochs=0,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


def test_grid_two_rows_and_artifacts(tmp_path):
    base = _tiny_base(tmp_path)
    result = run_grid(["0/5", "-Two"], base)
    assert [r.preset for r in result.rows] == ["0/5", "-Two"]
    assert all(r.error is None for r in result.rows)
    assert "Two" not in result.rows[1].report.metrics
    md_lines = result.markdown.splitlines()
    assert md_lines[3].split("|")[4].strip() == "--"  # Two column of the -Two row
    # artifacts: grid-level renderings plus one run directory per preset
    assert (result.out_dir / "ablation.md").read_text() == result.markdown
    assert (result.out_dir / "ablation.csv").read_text() == result.csv
    restored = rows_from_json((result.out_dir / "rows.json").read_text())
    assert [r.preset for r in restored] == ["0/5", "-Two"]
    assert restored[0].report.metrics == result.rows[0].report.metrics
    for sub in ("0-5", "-Two"):
        run_dir = result.out_dir / sub
        for artifact in (
            "config.txt", "history_heads.jsonl", "history_finetune.jsonl",
            "checkpoint.pt", "metrics.txt", "metrics.json",
        ):
            assert (run_dir / artifact).exists(), f"{sub}/{artifact} missing"


def test_grid_is_deterministic(tmp_path):
    a = run_grid(["0/5"], _tiny_base(tmp_path / "a"))
    b = run_grid(["0/5"], _tiny_base(tmp_path / "b"))
    assert a.markdown == b.markdown
    assert a.csv == b.csv
    assert a.rows[0].report.metrics == b.rows[0].report.metrics


def test_singleton_grid_matches_run_preset(tmp_path):
    base = _tiny_base(tmp_path)
    grid = run_grid(["1/4"], base, write_artifacts=False)
    solo = run_preset("1/4", base, write_artifacts=False)
    assert grid.rows[0].report.metrics == solo.report.metrics


def test_unknown_preset_is_named():
    base = ExperimentConfig(seed=0)
    with pytest.raises(ConfigError, match="'3/2'"):
        run_grid(["3/2"], base, write_artifacts=False)
    with pytest.raises(ConfigError, match="known:"):
        run_preset("bogus", base, write_artifacts=False)
    with pytest.raises(ConfigError):
        run_grid([], base, write_artifacts=False)


def test_failing_row_is_recorded_not_raised(tmp_path):
    # three samples leave a single-sample validation split, whose regression
    # metrics are undefined; the row must record the error and the grid finish
    base = _tiny_base(tmp_path, data_n_samples=3)
    result = run_grid(["0/5"], base, write_artifacts=False)
    (row,) = result.rows
    assert row.report is None and row.error
    assert "| 0/5 | ERR |" in result.markdown


def test_chain_carries_winning_routing_forward(tmp_path):
    base = _tiny_base(tmp_path)
    result = run_grid(["2/3", "-Two"], base, chain=True)
    assert [r.preset for r in result.rows] == ["2/3", "-Two"]
    assert all(r.error is None for r in result.rows)
    # with only 2/3 in the routing block, -Two must run on 2/3 routing,
    # not on its fixed reference configuration (0/5)
    chained_cfg = (result.out_dir / "-Two" / "config.txt").read_text()
    assert "tasks.preset = 2/3" in chained_cfg
    assert "tasks.flags = -Two" in chained_cfg


def test_chain_records_impossible_combination_in_row(tmp_path):
    # dropping Country while it is routed as an intermediate task is a config
    # error; in chain mode that lands in the row, not as an exception
    base = _tiny_base(tmp_path)
    result = run_grid(["2/3", "-Country"], base, chain=True, write_artifacts=False)
    by_preset = {r.preset: r for r in result.rows}
    assert by_preset["2/3"].error is None
    assert by_preset["-Country"].error is not None
    assert "ConfigError" in by_preset["-Country"].error


def test_run_preset_writes_under_sanitized_subdir(tmp_path):
    base = _tiny_base(tmp_path)
    result = run_preset("2/3", base)
    assert result.out_dir == tmp_path / "runs" / "2-3"
    assert (result.out_dir / "config.txt").exists()
