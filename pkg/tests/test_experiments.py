import numpy as np
import pytest

from discrete_grad.estimators import EstimatorConfig
from discrete_grad.experiments import (
    CSV_HEADER,
    SCHEDULE_PAIRS,
    CellResult,
    ExperimentGrid,
    aggregate,
    best_cell,
    bias_variance_pairs,
    cell_run,
    emit_csv,
    pivot,
    read_csv,
    run_cell,
    run_grid,
    run_schedule_grid,
    schedule_runs,
    spearman,
)
from discrete_grad.errors import ConfigError
from discrete_grad.models import binary_ae_spec
from discrete_grad.training import RunConfig, train


def _base(**kw):
    d = dict(model=binary_ae_spec(bits=8, hidden=(16,)), estimator=EstimatorConfig(), dataset="synthetic",
             batch_size=50, epochs=1, seed=0, learning_rate=1e-3)
    d.update(kw)
    return RunConfig(**d)


def test_grid_cell_count_and_validation():
    g = ExperimentGrid((0.3, 1.0), (0.3, 1.0, 3.0), (0, 1), _base())
    assert len(g.cells()) == 2 * 3 * 2
    diag = ExperimentGrid((0.3, 1.0), (0.3, 1.0, 3.0), (0,), _base(), coupled_only=True)
    assert [(tf, tb) for tf, tb, _ in diag.cells()] == [(0.3, 0.3), (1.0, 1.0)]
    with pytest.raises(ConfigError):
        ExperimentGrid((), (1.0,), (0,), _base())
    with pytest.raises(ConfigError):
        ExperimentGrid((0.0,), (1.0,), (0,), _base())


def test_single_cell_equals_direct_train(synth_data):
    g = ExperimentGrid((0.5,), (2.0,), (7,), _base())
    [cell] = run_grid(g, synth_data)
    direct = train(cell_run(_base(), 0.5, 2.0, 7), synth_data)
    assert cell.final_val_loss == direct.final_val_loss
    assert cell.error is None


def test_workers_do_not_change_results(synth_data):
    g = ExperimentGrid((0.5, 1.0), (1.0, 3.0), (0,), _base())
    one = run_grid(g, synth_data, workers=1)
    many = run_grid(g, synth_data, workers=4)
    assert [(r.key, r.metrics) for r in one] == [(r.key, r.metrics) for r in many]


def test_coupled_baseline_equals_diagonal_of_full_grid(synth_data):
    full = run_grid(ExperimentGrid((0.5, 1.0), (0.5, 1.0), (0,), _base()), synth_data)
    diag = run_grid(ExperimentGrid((0.5, 1.0), (0.5, 1.0), (0,), _base(), coupled_only=True), synth_data)
    full_diag = {r.key: r.metrics for r in full if r.tau_forward == r.tau_backward}
    assert full_diag == {r.key: r.metrics for r in diag}


def test_seed_isolation(synth_data):
    g = ExperimentGrid((0.5, 1.0), (2.0,), (0, 1), _base())
    results = run_grid(g, synth_data)
    target = results[2]
    rerun = run_cell(cell_run(_base(), target.tau_forward, target.tau_backward, target.seed),
                     target.tau_forward, target.tau_backward, synth_data)
    assert rerun.metrics == target.metrics


def test_failed_cell_is_recorded_and_others_run(synth_data, monkeypatch):
    import discrete_grad.experiments as ex

    real = ex.train

    def flaky(run, data, *a, **k):
        if run.estimator.tau_backward == 3.0:
            raise FloatingPointError("boom")
        return real(run, data, *a, **k)

    monkeypatch.setattr(ex, "train", flaky)
    results = run_grid(ExperimentGrid((1.0,), (1.0, 3.0), (0,), _base()), synth_data)
    errors = [r for r in results if r.error]
    assert len(errors) == 1 and "boom" in errors[0].error
    assert any(r.metrics for r in results)


def _fake_results():
    rng = np.random.default_rng(0)
    out = []
    for tf in (0.3, 1.0):
        for tb in (0.3, 1.0, 3.0):
            for s in (0, 1, 2):
                out.append(CellResult(tf, tb, s, {"final_val_loss": float(rng.uniform())}, 0.1))
    return out


def test_emit_csv_round_trip_is_bitwise(tmp_path):
    results = _fake_results()
    path = emit_csv(results, tmp_path / "r.csv")
    text = path.read_bytes()
    assert b"\r\n" not in text
    assert text.splitlines()[0].decode() == ",".join(CSV_HEADER)
    rows = read_csv(path)
    seed_rows = {(r["tau_f"], r["tau_b"], r["seed"]): r["value"] for r in rows if r["metric"] == "final_val_loss"}
    for r in results:
        assert seed_rows[(r.tau_forward, r.tau_backward, float(r.seed))] == r.metrics["final_val_loss"]
    means = {(r["tau_f"], r["tau_b"]): r["value"] for r in rows if r["metric"] == "final_val_loss_mean"}
    agg = aggregate(results)
    assert len(means) == 6
    assert all(means[k] == agg[k]["final_val_loss"][0] for k in agg)
    assert all(r["seed"] == "agg" for r in rows if r["metric"].endswith(("_mean", "_std")))


def test_emit_csv_empty_and_unwritable(tmp_path):
    with pytest.raises(ValueError):
        emit_csv([], tmp_path / "none.csv")
    assert not (tmp_path / "none.csv").exists()
    with pytest.raises(OSError):
        emit_csv(_fake_results(), tmp_path / "missing" / "r.csv")


def test_single_seed_has_no_std(tmp_path):
    rows = read_csv(emit_csv([CellResult(1.0, 1.0, 0, {"final_val_loss": 0.5})], tmp_path / "r.csv"))
    metrics = [r["metric"] for r in rows]
    assert "final_val_loss_mean" in metrics and "final_val_loss_std" not in metrics


def test_error_rows_in_csv(tmp_path):
    rows = read_csv(emit_csv([CellResult(1.0, 2.0, 0, {}, error="NumericError: nan")], tmp_path / "r.csv"))
    assert rows[0]["metric"] == "error" and "nan" in rows[0]["value"]


def test_pivot_and_best_cell():
    results = _fake_results()
    tbs, tfs, mat = pivot(results)
    assert mat.shape == (3, 2) and not np.isnan(mat).any()
    best = best_cell(results)
    assert best[2] == np.nanmin(mat)
    diag = best_cell(results, diagonal_only=True)
    assert diag[0] == diag[1]


def test_schedule_table_structure(synth_data):
    labels = [(lf, lb) for lf, lb, _ in schedule_runs(_base())]
    assert len(labels) == len(SCHEDULE_PAIRS) == 13
    assert ("1->0.3", "1") in labels and ("0.3->0.03", "5->3") in labels
    results = run_schedule_grid(_base(), synth_data)
    assert len(results) == 13 and not any(r.error for r in results)


def test_bias_variance_pairs_cover_both_sweeps():
    pairs = bias_variance_pairs()
    assert len(pairs) == 7
    assert {(1.6, tb) for tb in (0.5, 1.0, 1.3, 2.5)} <= set(pairs)
    assert {(tf, 1.3) for tf in (0.5, 1.0, 1.6, 2.5)} <= set(pairs)


def test_spearman():
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert spearman([1, 2, 3], [1, 1, 1]) == 0.0
