"""Binning, percentile widths, widening, and imputation oracles."""

from __future__ import annotations

import math
import random
from datetime import datetime, timedelta

import pandas as pd
import pytest

from ehrfuse.align import (AlignmentError, AlignmentPlan, WideTable,
                           assign_bin, build_bins, collect_bin_counts,
                           compute_widths, impute, nearest_rank,
                           plan_with_widths, read_plan_json, widen,
                           write_plan_json)
from ehrfuse.assets import resolve_records
from ehrfuse.cohort import MODE_ALL, CohortSpec, search
from ehrfuse.ingest import AdmissionWindow, load_snapshot
from ehrfuse.sectionize import sectionize_table

ALL = CohortSpec(mode=MODE_ALL)

T0 = datetime(2150, 1, 1, 8, 0, 0)


def _window(hours: float, subject_id: int = 1, hadm_id: int = 10) -> AdmissionWindow:
    return AdmissionWindow(subject_id, hadm_id, T0, T0 + timedelta(hours=hours))


# ---------------------------------------------------------------- binning

def test_assign_bin_day_examples():
    w = _window(48)  # admit d0 08:00, disch d2 08:00, exact 2-day span
    assert assign_bin(w, T0, "day") == 0
    assert assign_bin(w, T0 + timedelta(hours=23, minutes=59), "day") == 0
    assert assign_bin(w, T0 + timedelta(hours=24), "day") == 1
    # discharge instant clamps into the last bin instead of opening a new one
    assert assign_bin(w, w.dischtime, "day") == 1


def test_assign_bin_hour_boundaries():
    w = _window(5.5)
    assert assign_bin(w, T0 + timedelta(minutes=59), "hour") == 0
    assert assign_bin(w, T0 + timedelta(hours=1), "hour") == 1
    assert assign_bin(w, w.dischtime, "hour") == 5


def test_assign_bin_stay_always_zero():
    w = _window(200)
    for h in (0, 13, 200):
        assert assign_bin(w, T0 + timedelta(hours=h), "stay") == 0


def test_assign_bin_outside_window_raises():
    w = _window(48)
    with pytest.raises(AlignmentError, match="outside admission"):
        assign_bin(w, T0 - timedelta(seconds=1), "day")
    with pytest.raises(AlignmentError, match="outside admission"):
        assign_bin(w, w.dischtime + timedelta(seconds=1), "day")


def test_build_bins_exact_boundary_count():
    assert len(build_bins(_window(48), "day")) == 2
    assert len(build_bins(_window(49), "day")) == 3
    assert len(build_bins(_window(47), "day")) == 2
    assert len(build_bins(_window(0.5), "day")) == 1
    assert len(build_bins(_window(3), "hour")) == 3
    assert len(build_bins(_window(200), "stay")) == 1


def test_build_bins_tile_window():
    rng = random.Random(23)
    for _ in range(60):
        hours = rng.randint(1, 400) + rng.choice([0, 0.25, 0.5])
        w = _window(hours)
        for granularity in ("stay", "day", "hour"):
            bins = build_bins(w, granularity)
            assert bins[0].bin_start == w.admittime
            assert bins[-1].bin_end == w.dischtime
            for a, b in zip(bins, bins[1:]):
                assert a.bin_end == b.bin_start
            assert [b.bin_index for b in bins] == list(range(len(bins)))


def test_every_in_window_instant_maps_into_its_bin():
    rng = random.Random(29)
    for _ in range(40):
        w = _window(rng.randint(2, 300))
        granularity = rng.choice(("day", "hour"))
        bins = build_bins(w, granularity)
        span_s = int((w.dischtime - w.admittime).total_seconds())
        for _ in range(20):
            t = w.admittime + timedelta(seconds=rng.randint(0, span_s))
            idx = assign_bin(w, t, granularity)
            b = bins[idx]
            assert b.bin_start <= t
            assert t < b.bin_end or (idx == len(bins) - 1 and t <= b.bin_end)


def test_bad_granularity_rejected():
    with pytest.raises(AlignmentError, match="granularity"):
        build_bins(_window(48), "week")
    with pytest.raises(AlignmentError, match="granularity"):
        assign_bin(_window(48), T0, "week")


# ------------------------------------------------------- percentile widths

def test_nearest_rank_frozen_values():
    assert nearest_rank([1, 2, 2, 3, 3, 3, 4, 4, 4, 16], 90) == 4
    assert nearest_rank([1, 2, 2, 3, 3, 3, 4, 4, 4, 16], 100) == 16
    assert nearest_rank([6], 100) == 6
    assert nearest_rank([6], 1) == 6
    assert nearest_rank([1, 2, 3, 4], 50) == 2
    assert nearest_rank([], 90) == 0


def _rank_oracle(values: list[int], k: float) -> int:
    """Smallest v with at least ceil(k*n/100) values <= v; counting, no indexing."""
    n = len(values)
    need = math.ceil(k * n / 100.0)
    for v in sorted(set(values)):
        if sum(1 for x in values if x <= v) >= need:
            return v
    return max(values)


def test_nearest_rank_random_multisets():
    rng = random.Random(31)
    for _ in range(200):
        values = [rng.randint(1, 40) for _ in range(rng.randint(1, 60))]
        k = rng.choice([1, 10, 25, 50, 75, 90, 95, 99, 100])
        assert nearest_rank(sorted(values), k) == _rank_oracle(values, k)


def test_nearest_rank_monotone_in_k():
    rng = random.Random(37)
    for _ in range(50):
        values = sorted(rng.randint(1, 30) for _ in range(rng.randint(1, 40)))
        widths = [nearest_rank(values, k) for k in (25, 50, 75, 90, 95, 100)]
        assert widths == sorted(widths)
        assert widths[-1] == values[-1]


def test_compute_widths_single_busy_bin():
    counts = {"ds": [1, 0, 1], "rr": [4, 2, 0], "cxr": [6, 0, 0], "ecg": [2, 1, 0]}
    widths, cutoffs = compute_widths(counts, 100.0)
    assert widths == {"ds": 1, "rr": 4, "cxr": 6, "ecg": 2}
    assert cutoffs == widths


def test_compute_widths_ignores_zero_bins():
    widths, _ = compute_widths({"ds": [0, 0, 3]}, 1.0)
    assert widths == {"ds": 3}
    widths, _ = compute_widths({"ds": [0, 0, 0]}, 90.0)
    assert widths == {"ds": 0}


def test_compute_widths_outlier_excluded_below_100():
    counts = {"rr": [1, 2, 2, 3, 3, 3, 4, 4, 4, 16]}
    widths, _ = compute_widths(counts, 90.0)
    assert widths == {"rr": 4}


def test_compute_widths_bad_k():
    for k in (0, -5, 101):
        with pytest.raises(AlignmentError, match="percentile_k"):
            compute_widths({"ds": [1]}, k)


# ------------------------------------------------------------ collecting

def test_collect_bin_counts_zero_bins_included(tiny_snapshot):
    cohort = search(tiny_snapshot, ALL)
    records = resolve_records(tiny_snapshot, cohort)
    sections = sectionize_table(tiny_snapshot, cohort)
    counts = collect_bin_counts(tiny_snapshot, cohort, records, sections, "day")
    total_bins = 0
    for subject_id, hadm_id in cohort.members:
        window = next(w for w in tiny_snapshot.admissions_for_subject(subject_id)
                      if w.hadm_id == hadm_id)
        total_bins += len(build_bins(window, "day"))
    for modality, per_bin in counts.items():
        assert len(per_bin) == total_bins, modality
    # one DS per admission charted at discharge: ds events == member count
    assert sum(counts["ds"]) == len(cohort.members)


def test_collect_bin_counts_match_manifest(tiny_corpus, tiny_snapshot):
    _, manifest = tiny_corpus
    cohort = search(tiny_snapshot, ALL)
    records = resolve_records(tiny_snapshot, cohort)
    sections = sectionize_table(tiny_snapshot, cohort)
    for granularity in ("stay", "day"):
        counts = collect_bin_counts(tiny_snapshot, cohort, records, sections,
                                    granularity)
        for modality in ("ds", "cxr", "ecg", "waveform", "echo"):
            want = sum(len(evs.get(modality, []))
                       for evs in manifest.events.values())
            assert sum(counts[modality]) == want, (modality, granularity)
        # rr notes without a hadm anchor are excluded from binning
        notes = tiny_snapshot.table("notes")
        anchored_rr = int(((notes["note_type"] == "RR")
                           & notes["hadm_id"].notna()).sum())
        assert sum(counts["rr"]) == anchored_rr


# --------------------------------------------------------------- widening

def _fmt(t: datetime) -> str:
    return t.strftime("%Y-%m-%d %H:%M:%S")


def _one_admission_corpus(make_corpus, extra: dict[str, list[list]],
                          hours: float = 96) -> tuple:
    rows = {
        "patients": [[1, "F", 60]],
        "admissions": [[1, 10, _fmt(T0), _fmt(T0 + timedelta(hours=hours)), 0]],
    }
    rows.update(extra)
    root = make_corpus(rows)
    snapshot = load_snapshot(root)
    cohort = search(snapshot, ALL)
    return snapshot, cohort


def _widen(snapshot, cohort, plan):
    records = resolve_records(snapshot, cohort)
    sections = sectionize_table(snapshot, cohort)
    filled = plan_with_widths(snapshot, cohort, records, sections, plan)
    return widen(snapshot, cohort, records, sections, filled)


def test_widen_stay_one_row_per_admission(corpus200_snapshot):
    cohort = search(corpus200_snapshot, ALL)
    table = _widen(corpus200_snapshot, cohort,
                   AlignmentPlan(granularity="stay", percentile_k=100.0))
    assert len(table.frame) == len(cohort.members)
    assert len(table.log) == 0  # k=100 cutoff is the max, nothing exceeds it


def test_widen_left_packed_slots(corpus200_snapshot):
    cohort = search(corpus200_snapshot, ALL)
    table = _widen(corpus200_snapshot, cohort,
                   AlignmentPlan(granularity="day", percentile_k=100.0))
    frame = table.frame
    for modality, width in table.plan.widths.items():
        if width == 0:
            continue
        cols = [f"{modality}_{j}" for j in range(1, width + 1)]
        values = frame[cols].notna().to_numpy()
        # no null gap before a filled slot anywhere
        assert not ((~values[:, :-1]) & values[:, 1:]).any(), modality
        assert (values.sum(axis=1) == frame[f"{modality}_count"]).all()


def test_widen_drop_and_log(make_corpus):
    t = T0 + timedelta(hours=30)
    snapshot, cohort = _one_admission_corpus(make_corpus, {
        "ecg_metadata": [
            [1, 10, 40, _fmt(t), 12, 10],
            [1, 10, 41, _fmt(t + timedelta(minutes=5)), 12, 10],
            [1, 10, 42, _fmt(t + timedelta(minutes=9)), 12, 10],
        ],
    })
    records = resolve_records(snapshot, cohort)
    sections = sectionize_table(snapshot, cohort)
    plan = AlignmentPlan(granularity="day", percentile_k=100.0,
                         widths={"ecg": 2}, cutoffs={"ecg": 2},
                         drop_over_threshold=True)
    table = widen(snapshot, cohort, records, sections, plan)
    # four day bins; the overloaded bin 1 is gone, the others survive
    assert table.frame["bin_index"].tolist() == [0, 2, 3]
    assert table.log.to_dict("records") == [{
        "subject_id": 1, "hadm_id": 10, "bin_index": 1, "modality": "ecg",
        "count": 3, "cutoff": 2, "action": "dropped"}]


def test_widen_truncate_keeps_row(make_corpus):
    t = T0 + timedelta(hours=30)
    snapshot, cohort = _one_admission_corpus(make_corpus, {
        "ecg_metadata": [
            [1, 10, 40, _fmt(t), 12, 10],
            [1, 10, 41, _fmt(t + timedelta(minutes=5)), 12, 10],
            [1, 10, 42, _fmt(t + timedelta(minutes=9)), 12, 10],
        ],
    })
    records = resolve_records(snapshot, cohort)
    sections = sectionize_table(snapshot, cohort)
    plan = AlignmentPlan(granularity="day", percentile_k=100.0,
                         widths={"ecg": 2}, cutoffs={"ecg": 2},
                         drop_over_threshold=False)
    table = widen(snapshot, cohort, records, sections, plan)
    assert table.frame["bin_index"].tolist() == [0, 1, 2, 3]
    row = table.frame.set_index("bin_index").loc[1]
    # earliest two by time survive, pre-truncation count is recorded
    assert row["ecg_1"].endswith("s40.dat") or "s40" in row["ecg_1"]
    assert row["ecg_count"] == 3
    assert row["overflow"] == 1
    assert table.log["action"].tolist() == ["truncated"]


def test_widen_slot_order_time_then_sort_id(make_corpus):
    t = T0 + timedelta(hours=2)
    snapshot, cohort = _one_admission_corpus(make_corpus, {
        "ecg_metadata": [
            [1, 10, 45, _fmt(t), 12, 10],            # same instant, higher id
            [1, 10, 44, _fmt(t), 12, 10],
            [1, 10, 43, _fmt(t + timedelta(hours=1)), 12, 10],
        ],
    }, hours=96)
    table = _widen(snapshot, cohort, AlignmentPlan(granularity="stay"))
    row = table.frame.iloc[0]
    assert "s44" in row["ecg_1"]
    assert "s45" in row["ecg_2"]
    assert "s43" in row["ecg_3"]


def test_widen_lab_aggregates(make_corpus):
    snapshot, cohort = _one_admission_corpus(make_corpus, {
        "labevents": [
            [1, 10, 50912, _fmt(T0 + timedelta(hours=1)), 1.4],
            [1, 10, 50912, _fmt(T0 + timedelta(hours=5)), 0.8],
            [1, 10, 50912, _fmt(T0 + timedelta(hours=30)), 2.0],
        ],
    })
    table = _widen(snapshot, cohort, AlignmentPlan(granularity="day"))
    frame = table.frame.set_index("bin_index")
    assert frame.loc[0, "lab_50912_mean"] == pytest.approx(1.1)
    assert frame.loc[0, "lab_50912_min"] == pytest.approx(0.8)
    assert frame.loc[0, "lab_50912_max"] == pytest.approx(1.4)
    assert frame.loc[0, "lab_50912_last"] == pytest.approx(0.8)
    assert frame.loc[0, "lab_50912_count"] == 2
    assert frame.loc[1, "lab_50912_count"] == 1
    assert pd.isna(frame.loc[2, "lab_50912_mean"])
    assert frame.loc[2, "lab_50912_count"] == 0


def test_widen_ds_slot_holds_note_id(make_corpus):
    disch = T0 + timedelta(hours=96)
    snapshot, cohort = _one_admission_corpus(make_corpus, {
        "notes": [["1-DS-1", 1, 10, "DS", _fmt(disch),
                   "", "Chief Complaint: pain\nFindings: none\n"]],
    })
    table = _widen(snapshot, cohort, AlignmentPlan(granularity="stay"))
    assert table.frame.loc[0, "ds_1"] == "1-DS-1"
    assert table.frame.loc[0, "ds_count"] == 1


def test_widen_all_slot_events_recoverable(tiny_corpus, tiny_snapshot):
    _, manifest = tiny_corpus
    cohort = search(tiny_snapshot, ALL)
    table = _widen(tiny_snapshot, cohort, AlignmentPlan(granularity="day"))
    frame = table.frame
    assert len(table.log) == 0
    ds_cols = [c for c in frame.columns
               if c.startswith("ds_") and c.removeprefix("ds_").isdigit()]
    placed = {}
    for _, row in frame.iterrows():
        for c in ds_cols:
            if pd.notna(row[c]):
                placed[row[c]] = int(row["hadm_id"])
    for hadm, evs in manifest.events.items():
        for ev in evs.get("ds", []):
            assert placed[ev["note_id"]] == hadm


# ------------------------------------------------------------- meds/procs

def test_med_dose_split_across_bins(make_corpus):
    snapshot, cohort = _one_admission_corpus(make_corpus, {
        "inputevents": [[1, 10, 221906, _fmt(T0 + timedelta(hours=24)),
                         _fmt(T0 + timedelta(hours=72)), 100.0]],
    })
    table = _widen(snapshot, cohort, AlignmentPlan(granularity="day"))
    doses = table.frame.set_index("bin_index")["med_221906_dose"]
    assert doses.loc[0] == pytest.approx(0.0)
    assert doses.loc[1] == pytest.approx(50.0)
    assert doses.loc[2] == pytest.approx(50.0)
    assert doses.loc[3] == pytest.approx(0.0)
    assert doses.sum() == pytest.approx(100.0)


def test_med_dose_partial_overlap(make_corpus):
    # 30h infusion starting 12h in: 12h in bin 0, 18h in bin 1
    snapshot, cohort = _one_admission_corpus(make_corpus, {
        "inputevents": [[1, 10, 221906, _fmt(T0 + timedelta(hours=12)),
                         _fmt(T0 + timedelta(hours=42)), 90.0]],
    })
    table = _widen(snapshot, cohort, AlignmentPlan(granularity="day"))
    doses = table.frame.set_index("bin_index")["med_221906_dose"]
    assert doses.loc[0] == pytest.approx(90.0 * 12 / 30)
    assert doses.loc[1] == pytest.approx(90.0 * 18 / 30)
    assert doses.sum() == pytest.approx(90.0)


def test_instant_med_full_dose_in_start_bin(make_corpus):
    t = T0 + timedelta(hours=26)
    snapshot, cohort = _one_admission_corpus(make_corpus, {
        "inputevents": [[1, 10, 5, _fmt(t), _fmt(t), 40.0]],
    })
    table = _widen(snapshot, cohort, AlignmentPlan(granularity="day"))
    doses = table.frame.set_index("bin_index")["med_5_dose"]
    assert doses.loc[1] == pytest.approx(40.0)
    assert doses.drop(1).abs().sum() == pytest.approx(0.0)


def test_proc_flags_every_overlapped_bin(make_corpus):
    snapshot, cohort = _one_admission_corpus(make_corpus, {
        "procedureevents": [[1, 10, 225792, _fmt(T0 + timedelta(hours=30)),
                             _fmt(T0 + timedelta(hours=49))]],
    })
    table = _widen(snapshot, cohort, AlignmentPlan(granularity="day"))
    on = table.frame.set_index("bin_index")["proc_225792_on"]
    assert on.tolist() == [0, 1, 1, 0]


def test_instant_proc_single_bin(make_corpus):
    t = T0 + timedelta(hours=5, minutes=30)
    snapshot, cohort = _one_admission_corpus(make_corpus, {
        "procedureevents": [[1, 10, 7, _fmt(t), ""]],
    }, hours=10)
    table = _widen(snapshot, cohort, AlignmentPlan(granularity="hour"))
    on = table.frame.set_index("bin_index")["proc_7_on"]
    assert on.loc[5] == 1
    assert on.drop(5).sum() == 0


def test_med_dose_conserved_on_forged_corpus(corpus200_snapshot, corpus200):
    _, manifest = corpus200
    cohort = search(corpus200_snapshot, ALL)
    table = _widen(corpus200_snapshot, cohort, AlignmentPlan(granularity="day"))
    got = 0.0
    med_cols = [c for c in table.frame.columns if c.startswith("med_")]
    for c in med_cols:
        got += float(table.frame[c].sum())
    want = sum(ev["dose"] for evs in manifest.events.values()
               for ev in evs.get("med", []))
    assert got == pytest.approx(want, rel=1e-9)


# -------------------------------------------------------------- imputation

def _lab_table(values_by_hadm: dict[int, list], policy: str) -> WideTable:
    rows = []
    for hadm, values in values_by_hadm.items():
        for i, v in enumerate(values):
            rows.append({"subject_id": hadm, "hadm_id": hadm, "bin_index": i,
                         "lab_1_mean": v})
    frame = pd.DataFrame(rows)
    plan = AlignmentPlan(granularity="day", imputation={"1": policy})
    return WideTable(frame=frame, plan=plan,
                     log=pd.DataFrame(columns=["subject_id"]))


def test_forward_fill_within_admission():
    table = impute(_lab_table({10: [5.0, None, None, 7.0]}, "forward_fill"))
    assert table.frame["lab_1_mean"].tolist() == [5.0, 5.0, 5.0, 7.0]
    assert table.frame["lab_1_imputed"].tolist() == [0, 1, 1, 0]


def test_forward_fill_does_not_cross_admissions():
    table = impute(_lab_table({10: [5.0, 6.0], 20: [None, 3.0]}, "forward_fill"))
    by_hadm = table.frame.set_index(["hadm_id", "bin_index"])["lab_1_mean"]
    assert pd.isna(by_hadm.loc[(20, 0)])
    assert by_hadm.loc[(20, 1)] == 3.0


def test_mean_imputation_value():
    table = impute(_lab_table({10: [2.0, None, 4.0]}, "mean"))
    assert table.frame["lab_1_mean"].tolist() == [2.0, 3.0, 4.0]


def test_median_imputation_value():
    table = impute(_lab_table({10: [1.0, None, 9.0, 2.0]}, "median"))
    assert table.frame.loc[1, "lab_1_mean"] == pytest.approx(2.0)


def test_imputation_idempotent():
    once = impute(_lab_table({10: [5.0, None, None, 7.0], 20: [None, 1.0]},
                             "forward_fill"))
    twice = impute(once)
    pd.testing.assert_frame_equal(once.frame, twice.frame)


def test_imputation_all_null_column_stays_null():
    table = impute(_lab_table({10: [None, None]}, "mean"))
    assert table.frame["lab_1_mean"].isna().all()
    assert table.frame["lab_1_imputed"].tolist() == [0, 0]


def test_imputed_mask_mirrors_flags():
    table = impute(_lab_table({10: [5.0, None]}, "forward_fill"))
    assert table.imputed_mask.columns.tolist() == ["lab_1_imputed"]
    assert table.imputed_mask["lab_1_imputed"].tolist() == [0, 1]


# ------------------------------------------------------------------ plans

def test_plan_validation_errors():
    with pytest.raises(AlignmentError, match="granularity"):
        AlignmentPlan(granularity="week").validate()
    with pytest.raises(AlignmentError, match="percentile_k"):
        AlignmentPlan(percentile_k=0).validate()
    with pytest.raises(AlignmentError, match="percentile_k"):
        AlignmentPlan(percentile_k=100.5).validate()
    with pytest.raises(AlignmentError, match="imputation"):
        AlignmentPlan(imputation={"1": "hot_deck"}).validate()


def test_plan_json_round_trip(tmp_path):
    plan = AlignmentPlan(granularity="hour", percentile_k=90.0,
                         widths={"rr": 3}, cutoffs={"rr": 3},
                         imputation={"50912": "forward_fill"},
                         drop_over_threshold=False)
    path = tmp_path / "plan.json"
    write_plan_json(plan, path)
    assert read_plan_json(path) == plan


def test_plan_with_widths_k100_is_max(tiny_snapshot):
    cohort = search(tiny_snapshot, ALL)
    records = resolve_records(tiny_snapshot, cohort)
    sections = sectionize_table(tiny_snapshot, cohort)
    plan = plan_with_widths(tiny_snapshot, cohort, records, sections,
                            AlignmentPlan(granularity="day", percentile_k=100.0))
    counts = collect_bin_counts(tiny_snapshot, cohort, records, sections, "day")
    for modality, per_bin in counts.items():
        assert plan.widths[modality] == max(per_bin, default=0), modality


def test_plan_with_widths_monotone_in_k(corpus200_snapshot):
    cohort = search(corpus200_snapshot, ALL)
    records = resolve_records(corpus200_snapshot, cohort)
    sections = sectionize_table(corpus200_snapshot, cohort)
    previous = None
    for k in (50.0, 75.0, 90.0, 100.0):
        plan = plan_with_widths(corpus200_snapshot, cohort, records, sections,
                                AlignmentPlan(granularity="day", percentile_k=k))
        if previous is not None:
            for modality, width in plan.widths.items():
                assert previous[modality] <= width, modality
        previous = plan.widths
    assert AlignmentPlan().percentile_k == 100.0
