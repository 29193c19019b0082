import csv
import statistics
from pathlib import Path

import numpy as np
import pytest

from fstlab import harness
from fstlab.config import plan_from_mapping
from fstlab.harness import compare, export_curves, load_manifest, render_compare, rng_streams, run


def tiny_plan(tmp_path, **overrides):
    mapping = {
        "task": "grid-seg",
        "grid_h": "8",
        "grid_w": "8",
        "n_labeled": "4",
        "n_unlabeled": "8",
        "n_eval": "4",
        "batch_labeled": "2",
        "batch_unlabeled": "2",
        "iters": "6",
        "eval_every": "3",
        "seeds": "1",
        "lr": "0.3",
        "tau": "0.5",
        "mu": "0.9",
        "out": str(tmp_path / "runs"),
    }
    mapping.update({k: str(v) for k, v in overrides.items()})
    return plan_from_mapping(mapping)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_rng_streams_are_independent():
    init_a, streams_a = rng_streams(7)
    init_b, streams_b = rng_streams(7)
    assert init_a == init_b
    # consuming one stream leaves the others' draws unchanged
    streams_a["exploration"].normal(size=100)
    assert streams_a["data"].normal(size=5).tolist() == streams_b["data"].normal(size=5).tolist()
    assert rng_streams(8)[0] != init_a


def test_run_writes_csv_and_manifest(tmp_path):
    plan = tiny_plan(tmp_path, seeds="1,2")
    manifest = run(plan)
    assert set(manifest.csv_paths) == {1, 2}
    for path in manifest.csv_paths.values():
        rows = read_csv(path)
        assert [r["iter"] for r in rows] == ["0", "3", "6"]
        assert rows[0]["loss_labeled"] == "nan"
        assert all(r["wall_ms"] == "0" for r in rows)
    loaded = load_manifest(manifest.path)
    assert loaded.run_id == manifest.run_id
    assert loaded.config == manifest.config
    assert manifest.wall_s > 0


def test_same_plan_same_seed_byte_identical(tmp_path):
    plan = tiny_plan(tmp_path)
    m1 = run(plan)
    first = Path(m1.csv_paths[1]).read_bytes()
    m2 = run(plan)
    second = Path(m2.csv_paths[1]).read_bytes()
    assert first == second


def test_improved_mu_prime_one_matches_st_csv(tmp_path):
    st = run(tiny_plan(tmp_path, variant="st"))
    imp = run(tiny_plan(tmp_path, variant="improved", mu_prime="1.0"))
    a = read_csv(st.csv_paths[1])
    b = read_csv(imp.csv_paths[1])
    for ra, rb in zip(a, b):
        assert {k: v for k, v in ra.items() if k != "variant"} == {
            k: v for k, v in rb.items() if k != "variant"
        }


def test_zero_iters_logs_only_initial_row(tmp_path):
    manifest = run(tiny_plan(tmp_path, iters=0))
    rows = read_csv(manifest.csv_paths[1])
    assert len(rows) == 1 and rows[0]["iter"] == "0"
    assert rows[0]["student_eval"] == rows[0]["teacher_eval"]  # teacher starts at the student


def test_student_update_count_equal_across_variants(tmp_path):
    iters = {}
    for variant in ("st", "naive", "improved", "fst-d", "fst-w"):
        m = run(tiny_plan(tmp_path, variant=variant, k=2, n=2))
        iters[variant] = [r["iter"] for r in read_csv(m.csv_paths[1])]
    assert len({tuple(v) for v in iters.values()}) == 1


def test_batch_mode_different_changes_lookahead_only(tmp_path):
    # exploration draws alter the virtual passes, hence the teacher weights
    from fstlab.tasks import generate

    states = {}
    for mode in ("same", "different"):
        plan = tiny_plan(tmp_path, variant="fst-d", k=2, batch_mode=mode)
        rep = harness._Replicate(plan, generate(plan.task), 1)
        for _ in range(3):
            rep.step()
        states[mode] = rep.teacher.params.values.copy()
    assert states["same"].tobytes() != states["different"].tobytes()
    # the exploration stream must not perturb the main data stream: st runs
    # ignore it entirely, so k has no effect there
    st_a = run(tiny_plan(tmp_path, variant="st", k=2))
    st_b = run(tiny_plan(tmp_path, variant="st", k=3))
    assert Path(st_a.csv_paths[1]).read_text() == Path(st_b.csv_paths[1]).read_text()


def test_class_mix_run_executes(tmp_path):
    m = run(tiny_plan(tmp_path, class_mix="true"))
    assert len(read_csv(m.csv_paths[1])) == 3
    m2 = run(tiny_plan(tmp_path, class_mix="true", resample_augmentation="true"))
    assert len(read_csv(m2.csv_paths[1])) == 3


def test_two_moons_run_reports_accuracy(tmp_path):
    plan = tiny_plan(tmp_path, task="two-moons", n_labeled=16, n_unlabeled=16, n_eval=16, batch_labeled=8, batch_unlabeled=8)
    m = run(plan)
    rows = read_csv(m.csv_paths[1])
    assert 0.0 <= float(rows[-1]["student_eval"]) <= 1.0


def test_compare_single_run_has_empty_delta(tmp_path):
    m = run(tiny_plan(tmp_path))
    rows = compare([m])
    assert len(rows) == 1
    assert rows[0].variant == "st"
    assert rows[0].delta is None
    assert "variant" in render_compare(rows)


def test_compare_identical_seeds_zero_sd(tmp_path):
    m = run(tiny_plan(tmp_path, seeds="1,2,3"))
    row = compare([m])[0]
    assert row.n_seeds == 3
    assert row.sd >= 0.0


def test_compare_mean_sd_match_spreadsheet_recomputation(tmp_path):
    st = run(tiny_plan(tmp_path, seeds="1,2,3"))
    fst = run(tiny_plan(tmp_path, seeds="1,2,3", variant="fst-d", k=2))
    rows = {r.variant: r for r in compare([st, fst])}
    # independent recomputation straight from the CSV files
    for manifest, variant in ((st, "st"), (fst, "fst-d")):
        finals = [float(read_csv(p)[-1]["student_eval"]) for _, p in sorted(manifest.csv_paths.items())]
        assert rows[variant].mean == pytest.approx(statistics.mean(finals), abs=1e-15)
        assert rows[variant].sd == pytest.approx(statistics.stdev(finals), abs=1e-15)
    assert rows["fst-d"].delta == pytest.approx(rows["fst-d"].mean - rows["st"].mean, abs=1e-15)


def test_compare_rejects_mismatched_scenarios(tmp_path):
    a = run(tiny_plan(tmp_path))
    b = run(tiny_plan(tmp_path, noise="0.2"))
    with pytest.raises(ValueError, match="scenario"):
        compare([a, b])


def test_export_curves_values_match_csv_cells(tmp_path):
    m = run(tiny_plan(tmp_path, seeds="1,2"))
    out = export_curves(m)
    curve_rows = read_csv(out)
    series = {r["series"] for r in curve_rows}
    assert f"pseudo_error.st.seed1" in series
    assert len(series) == len(harness.CURVE_METRICS) * 2
    source = {(r["iter"], f"{metric}.st.seed{seed}"): r[metric]
              for seed in (1, 2)
              for r in read_csv(m.csv_paths[seed])
              for metric in harness.CURVE_METRICS}
    for r in curve_rows:
        assert source[(r["iter"], r["series"])] == r["value"]


def test_export_curves_merged_runs_tagged_by_variant(tmp_path):
    a = run(tiny_plan(tmp_path))
    b = run(tiny_plan(tmp_path, variant="improved"))
    out = export_curves([a, b], tmp_path / "curves.csv")
    series = {r["series"] for r in read_csv(out)}
    assert any(s.endswith(".st.seed1") for s in series)
    assert any(s.endswith(".improved.seed1") for s in series)


def test_run_id_is_deterministic(tmp_path):
    plan = tiny_plan(tmp_path)
    assert run(plan).run_id == run(plan).run_id
