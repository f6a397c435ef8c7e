import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import pairwise_auroc
from pcgscreen.errors import EmptyDataset, EmptyGroup, EmptySite, LengthMismatch, SingleClass
from pcgscreen.evaluate import (
    Level,
    ProtocolConfig,
    ScoredRecording,
    aggregate_patient,
    auroc,
    confusion,
    per_site_protocol,
    pr_curve,
    quality_slice,
    read_points,
    read_report,
    report_from,
    report_from_scored,
    roc_curve,
    site_slice,
    trapezoid_area,
    write_report,
)
from pcgscreen.signal_io import (
    DatasetManifest,
    Label,
    PatientRecord,
    Quality,
    Recording,
    RecordingRef,
    Site,
    SplitSpec,
)

labels_and_scores = st.integers(2, 120).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
        st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.5, 0.75, 1.0]) | st.floats(0, 1), min_size=n, max_size=n),
    )
).filter(lambda ls: 0 < sum(ls[0]) < len(ls[0]))


# -------------------------------------------------------------- aggregation


def test_aggregate_examples():
    assert aggregate_patient([0.9, 0.8, 0.7, 0.6]) == pytest.approx(0.75, abs=1e-15)
    assert aggregate_patient([0.42]) == 0.42
    with pytest.raises(EmptyGroup):
        aggregate_patient([])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.randoms())
def test_aggregate_is_mean_and_order_free(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert aggregate_patient(values) == aggregate_patient(shuffled)
    assert abs(aggregate_patient(values) - np.mean(values)) <= 1e-12


def test_aggregate_accepts_scored_recordings():
    recs = [ScoredRecording("p", s, v, Label.POSITIVE) for s, v in zip(Site, [0.9, 0.8, 0.7, 0.6])]
    assert aggregate_patient(recs) == aggregate_patient([0.9, 0.8, 0.7, 0.6])


def test_scored_recording_rejects_bad_probability():
    with pytest.raises(ValueError):
        ScoredRecording("p", Site.AV, 1.5, Label.POSITIVE)
    with pytest.raises(ValueError):
        ScoredRecording("p", Site.AV, float("nan"), Label.POSITIVE)


# ---------------------------------------------------------------- confusion


def test_confusion_examples():
    c = confusion([0.9, 0.2], [Label.POSITIVE, Label.NEGATIVE])
    assert (c.tp, c.fp, c.tn, c.fn) == (1, 0, 1, 0)
    assert confusion([0.5], [1]).tp == 1
    c = confusion([0.9] * 5, [0] * 5)
    assert c.fp == 5 == c.total
    with pytest.raises(LengthMismatch):
        confusion([0.1, 0.2], [1])


# -------------------------------------------------------------------- AUROC


def test_auroc_examples():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auroc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(SingleClass):
        auroc([0.1, 0.2], [1, 1])


def test_auroc_matches_pairwise_on_random_200():
    rng = np.random.default_rng(7)
    for _ in range(20):
        y = rng.integers(0, 2, 200)
        s = rng.random(200)
        assert abs(auroc(s, y) - pairwise_auroc(s, y)) <= 1e-12


@given(labels_and_scores)
def test_auroc_matches_pairwise_with_ties(ls):
    y, s = ls
    assert abs(auroc(s, y) - pairwise_auroc(s, y)) <= 1e-12
    # the emitted curve integrates to the same area
    assert abs(trapezoid_area(roc_curve(s, y)) - auroc(s, y)) <= 1e-12


@given(labels_and_scores, st.sampled_from(["cube", "exp", "logit", "affine"]))
def test_auroc_invariant_to_monotone_transform(ls, kind):
    y, s = ls
    # a coarse grid keeps the transforms strictly monotone in floating point
    s = np.round(np.array(s) * 1024) / 1024
    f = {
        "cube": lambda v: v**3,
        "exp": np.exp,
        "logit": lambda v: np.log((v + 1) / (2 - v)),
        "affine": lambda v: 3 * v - 7,
    }[kind]
    assert auroc(f(s), y) == auroc(s, y)


@given(labels_and_scores)
def test_roc_is_monotone_from_origin_to_corner(ls):
    y, s = ls
    pts = roc_curve(s, y)
    assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
    xs, ys = zip(*pts)
    assert all(b >= a for a, b in zip(xs, xs[1:]))
    assert all(b >= a for a, b in zip(ys, ys[1:]))


@given(labels_and_scores)
def test_pr_curve_shape(ls):
    y, s = ls
    pts = pr_curve(s, y)
    assert pts[0] == (0.0, 1.0)
    assert pts[-1][0] == 1.0
    assert pts[-1][1] == pytest.approx(sum(y) / len(y))
    assert all(0 <= p <= 1 for _, p in pts)


# ------------------------------------------------------------------ reports


def check_consistent(report):
    total = report.tp + report.fp + report.tn + report.fn
    assert report.accuracy == (report.tp + report.tn) / total
    assert report.sensitivity == report.tp / (report.tp + report.fn)
    assert report.specificity == report.tn / (report.tn + report.fp)


def test_perfect_predictions():
    labels = [1, 0, 1, 1, 0]
    report = report_from([float(v) for v in labels], labels)
    assert report.accuracy == report.sensitivity == report.specificity == report.auroc == 1.0
    check_consistent(report)


@given(labels_and_scores)
def test_report_internally_consistent_and_duplication_invariant(ls):
    y, s = ls
    a = report_from(s, y)
    b = report_from(s + s, y + y)
    check_consistent(a)
    for name in ("accuracy", "sensitivity", "specificity", "auroc"):
        assert getattr(a, name) == pytest.approx(getattr(b, name), abs=1e-15)
    assert a.roc_points == b.roc_points


def test_single_class_report_has_nan_auroc():
    report = report_from([0.7, 0.2], [1, 1])
    assert math.isnan(report.auroc) and report.roc_points == []
    with pytest.raises(EmptyDataset):
        report_from([], [])


def scored_cohort(rng, n_patients=12, sites=(Site.AV, Site.MV, Site.PV)):
    out = []
    for i in range(n_patients):
        label = Label.POSITIVE if i % 3 else Label.NEGATIVE
        for site in sites:
            out.append(ScoredRecording(f"p{i:02d}", site, float(rng.random()), label))
    return out


def test_patient_level_uses_mean_and_ignores_order(rng):
    scored = scored_cohort(rng)
    report = report_from_scored(scored, Level.PATIENT)
    means = {}
    for s in scored:
        means.setdefault(s.patient_id, []).append(s.probability_positive)
    pids = sorted(means)
    expected = report_from([np.mean(means[p]) for p in pids],
                           [Label.NEGATIVE if int(p[1:]) % 3 == 0 else Label.POSITIVE for p in pids])
    assert report.tp == expected.tp and report.tn == expected.tn
    assert report.auroc == expected.auroc
    shuffled = [scored[i] for i in rng.permutation(len(scored))]
    assert report_from_scored(shuffled, Level.PATIENT) == report


def test_recording_level_counts_every_recording(rng):
    scored = scored_cohort(rng)
    report = report_from_scored(scored, Level.RECORDING)
    assert report.tp + report.fp + report.tn + report.fn == len(scored)
    assert report.level is Level.RECORDING


def test_report_files_round_trip(tmp_path, rng):
    report = report_from_scored(scored_cohort(rng))
    write_report(report, tmp_path)
    rows = read_report(tmp_path / "report.csv")
    assert rows["level"] == "patient"
    assert float(rows["auroc"]) == report.auroc and int(rows["tp"]) == report.tp
    roc = read_points(tmp_path / "roc.csv")
    assert roc == report.roc_points
    assert abs(trapezoid_area(roc) - report.auroc) <= 1e-9
    assert read_points(tmp_path / "pr.csv") == report.pr_points


# ------------------------------------------------------------------- slices


def quality_manifest():
    entries = []
    qualities = [Quality.SATISFACTORY, Quality.UNSATISFACTORY]
    for i in range(6):
        refs = tuple(
            RecordingRef(f"p{i}", site, qualities[(i + j) % 2], buffer=Recording(np.zeros(4), 4000))
            for j, site in enumerate((Site.AV, Site.MV, Site.PV))
        )
        entries.append(PatientRecord(f"p{i}", Label.POSITIVE if i % 2 else Label.NEGATIVE, refs))
    return DatasetManifest(tuple(entries))


def test_quality_slices_partition():
    m = quality_manifest()
    good = quality_slice(m, Quality.SATISFACTORY)
    bad = quality_slice(m, Quality.UNSATISFACTORY)
    assert good.num_recordings + bad.num_recordings == m.num_recordings
    assert quality_slice(m, Quality.UNRATED).num_recordings == 0
    assert quality_slice(good, Quality.SATISFACTORY) == good


def test_site_slice_keeps_only_that_site():
    m = quality_manifest()
    av = site_slice(m, Site.AV)
    assert av.num_recordings == 6
    assert all(r.site is Site.AV for _, r in av.recordings())


def test_missing_site_raises():
    from pcgscreen.model import NetworkConfig

    cfg = ProtocolConfig(NetworkConfig(depth=1, input_length=8), split=SplitSpec(0.5, 0.5, 0.0))
    with pytest.raises(EmptySite):
        per_site_protocol(quality_manifest(), Site.TV, cfg)


@pytest.mark.slow
def test_site_carrying_the_cue_dominates():
    from pcgscreen.dsp import PreprocessConfig
    from pcgscreen.model import InceptionModuleConfig, NetworkConfig
    from pcgscreen.synth import SynthSpec, generate_cohort
    from pcgscreen.train import TrainConfig

    pcfg = PreprocessConfig(duration_s=2.5)
    net = NetworkConfig(depth=3, module=InceptionModuleConfig(8, (5, 11, 21), 8), input_length=pcfg.target_len)
    cohort = generate_cohort(120, 0.63, spec_base=SynthSpec(duration_s=2.5, snr_db=10), seed=3,
                             murmur_sites=[Site.MV])
    cfg = ProtocolConfig(net, TrainConfig(max_epochs=15, batch_size=16, early_stop_patience=6, seed=3),
                         SplitSpec(0.7, 0.15, 0.15, seed=3), pcfg, seed=3)
    acc = {site: per_site_protocol(cohort, site, cfg).accuracy for site in (Site.AV, Site.MV, Site.PV, Site.TV)}
    assert all(acc[Site.MV] > acc[s] for s in acc if s is not Site.MV)
