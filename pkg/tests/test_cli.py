import hashlib
from pathlib import Path

import numpy as np
import pytest

from pcgscreen.cli import RunConfig, main
from pcgscreen.errors import ConfigInvalid
from pcgscreen.evaluate import read_points, read_report, trapezoid_area
from pcgscreen.signal_io import Label, Recording, Site, read_manifest, write_wav

TINY = [
    "--set", "depth=2",
    "--set", "residual_period=2",
    "--set", "module.filters_per_branch=4",
    "--set", "module.bottleneck_channels=4",
    "--set", "module.kernel_sizes=3,7,15",
    "--set", "preprocess.duration_s=1.0",
    "--set", "train.batch_size=8",
    "--set", "train.learning_rate=0.01",
    "--set", "train.early_stop_patience=2",
]


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def run(*argv):
    return main(["-q", *map(str, argv)])


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    assert run("synth", "--out", out, "--patients", 40, "--positive", 0.5, "--duration", 1.0, "--seed", 3) == 0
    return out


@pytest.fixture(scope="module")
def pretrained(cohort, tmp_path_factory):
    out = tmp_path_factory.mktemp("pre") / "run"
    rc = run("pretrain", "--manifest", cohort / "manifest.csv", "--out", out, "--epochs", 3, "--seed", 1, *TINY)
    assert rc == 0
    return out


# ------------------------------------------------------------------- synth


def test_synth_counts_and_sites(tmp_path):
    assert run("synth", "--out", tmp_path, "--patients", 100, "--positive", 0.63, "--duration", 0.2) == 0
    m = read_manifest(tmp_path / "manifest.csv")
    counts = m.label_counts()
    assert counts[Label.POSITIVE] == 63 and counts[Label.NEGATIVE] == 37
    assert all(len(p.recordings) == 4 for p in m)


def test_synth_same_seed_same_tree(tmp_path):
    for name in ("a", "b"):
        assert run("synth", "--out", tmp_path / name, "--patients", 6, "--duration", 0.3, "--seed", 1) == 0
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


def test_synth_invalid_spec_exits_2(tmp_path):
    assert run("synth", "--out", tmp_path, "--patients", 1) == 2
    assert run("synth", "--out", tmp_path, "--heart-rate", -3) == 2


# ----------------------------------------------------------------- prepare


def physionet_patient(root: Path, pid: str, murmur: str):
    lines = [f"{pid} 2 4000"]
    for loc in ("AV", "MV"):
        lines.append(f"{loc} {pid}_{loc}.hea {pid}_{loc}.wav {pid}_{loc}.tsv")
        write_wav(root / f"{pid}_{loc}.wav", Recording(np.zeros(400), 4000))
    lines += ["#Age: Child", f"#Murmur: {murmur}"]
    (root / f"{pid}.txt").write_text("\n".join(lines) + "\n")


def test_prepare_skips_unknown(tmp_path, capsys):
    data = tmp_path / "data"
    data.mkdir()
    for pid, murmur in (("100", "Present"), ("200", "Unknown"), ("300", "Absent")):
        physionet_patient(data, pid, murmur)
    assert main(["prepare", str(data), "--out", str(tmp_path / "m.csv")]) == 0
    assert "skipped 1 unknown" in capsys.readouterr().err
    m = read_manifest(tmp_path / "m.csv")
    assert m.patient_ids == ["100", "300"]
    first = (tmp_path / "m.csv").read_bytes()
    assert run("prepare", data, "--out", tmp_path / "m.csv") == 0
    assert (tmp_path / "m.csv").read_bytes() == first


def test_prepare_empty_directory_exits_2(tmp_path):
    assert run("prepare", tmp_path, "--out", tmp_path / "m.csv") == 2


def test_prepare_native(cohort, tmp_path):
    assert run("prepare", cohort, "--format", "native", "--out", tmp_path / "m.csv") == 0
    assert read_manifest(tmp_path / "m.csv").patient_ids == read_manifest(cohort / "manifest.csv").patient_ids


# -------------------------------------------------------- pretrain/finetune


def test_pretrain_writes_run_directory(pretrained):
    for name in ("config.txt", "history.csv", "best.weights", "final.weights", "test/report.csv"):
        assert (pretrained / name).is_file(), name
    cfg = RunConfig.load(pretrained / "config.txt")
    assert cfg.network.depth == 2 and cfg.network.input_length == 800
    train = read_manifest(pretrained / "train_manifest.csv")
    test = read_manifest(pretrained / "test_manifest.csv")
    assert not set(train.patient_ids) & set(test.patient_ids)


def test_pretrain_is_deterministic(cohort, pretrained, tmp_path):
    out = tmp_path / "again"
    assert run("pretrain", "--manifest", cohort / "manifest.csv", "--out", out, "--epochs", 3, "--seed", 1, *TINY) == 0
    for name in ("history.csv", "best.weights", "final.weights", "config.txt"):
        assert (out / name).read_bytes() == (pretrained / name).read_bytes(), name


def test_finetune_from_pretrained(cohort, pretrained, tmp_path):
    out = tmp_path / "ft"
    rc = run("finetune", "--manifest", cohort / "manifest.csv", "--out", out,
             "--init-weights", pretrained / "best.weights", "--epochs", 2, "--seed", 2)
    assert rc == 0
    assert (out / "best.weights").is_file() and (out / "history.csv").is_file()


def test_finetune_with_mismatched_depth_exits_3(cohort, pretrained, tmp_path):
    rc = run("finetune", "--manifest", cohort / "manifest.csv", "--out", tmp_path / "ft",
             "--init-weights", pretrained / "best.weights", "--config", pretrained / "config.txt",
             "--set", "depth=3", "--epochs", 2)
    assert rc == 3


def test_bad_config_key_exits_2(cohort, tmp_path):
    rc = run("pretrain", "--manifest", cohort / "manifest.csv", "--out", tmp_path / "r", "--set", "depht=3")
    assert rc == 2
    assert run("pretrain", "--manifest", tmp_path / "missing.csv", "--out", tmp_path / "r") == 2


def test_run_config_text_round_trip():
    cfg = RunConfig.load(None, {"depth": "4", "train.seed": "9", "split.seed": "9", "preprocess.duration_s": "2.5"})
    assert RunConfig.from_kv(dict(line.split("=", 1) for line in cfg.to_text().splitlines())) == cfg
    assert cfg.network.input_length == 2000
    with pytest.raises(ConfigInvalid):
        RunConfig.from_kv({"input_length": "12", "preprocess.duration_s": "1.0"})


# ---------------------------------------------------------------- evaluate


def test_evaluate_writes_consistent_reports(cohort, pretrained, tmp_path):
    out = tmp_path / "eval"
    rc = run("evaluate", "--manifest", cohort / "manifest.csv", "--weights", pretrained / "best.weights",
             "--out", out, "--level", "patient")
    assert rc == 0
    report = read_report(out / "report.csv")
    roc = read_points(out / "roc.csv")
    assert roc[0] == (0.0, 0.0) and roc[-1] == (1.0, 1.0)
    assert abs(trapezoid_area(roc) - float(report["auroc"])) <= 1e-9
    tp, fp, tn, fn = (int(report[k]) for k in ("tp", "fp", "tn", "fn"))
    assert tp + fp + tn + fn == 40
    assert float(report["accuracy"]) == (tp + tn) / 40


def test_evaluate_site_filter(cohort, pretrained, tmp_path):
    out = tmp_path / "av"
    rc = run("evaluate", "--manifest", cohort / "manifest.csv", "--weights", pretrained / "best.weights",
             "--out", out, "--level", "recording", "--site", "AV")
    assert rc == 0
    report = read_report(out / "report.csv")
    av_count = sum(1 for _, r in read_manifest(cohort / "manifest.csv").recordings() if r.site is Site.AV)
    assert sum(int(report[k]) for k in ("tp", "fp", "tn", "fn")) == av_count == 40


def test_evaluate_empty_quality_exits_4(cohort, pretrained, tmp_path):
    rc = run("evaluate", "--manifest", cohort / "manifest.csv", "--weights", pretrained / "best.weights",
             "--out", tmp_path / "e", "--quality", "unsatisfactory")
    assert rc == 4


def test_evaluate_with_wrong_config_exits_3(cohort, pretrained, tmp_path):
    rc = run("evaluate", "--manifest", cohort / "manifest.csv", "--weights", pretrained / "best.weights",
             "--out", tmp_path / "e", "--config", pretrained / "config.txt", "--set", "depth=3")
    assert rc == 3


def test_ablate_sites_writes_summary(cohort, tmp_path):
    out = tmp_path / "abl"
    rc = run("ablate-sites", "--manifest", cohort / "manifest.csv", "--out", out, "--sites", "AV,MV",
             "--epochs", 2, "--set", "split.train_fraction=0.6", "--set", "split.val_fraction=0.2",
             "--set", "split.test_fraction=0.2", *TINY)
    assert rc == 0
    rows = (out / "summary.csv").read_text().splitlines()
    assert rows[0] == "site,accuracy,sensitivity,specificity,auroc"
    assert [r.split(",")[0] for r in rows[1:]] == ["AV", "MV", "all"]
    for key in ("AV", "MV", "all"):
        assert (out / key / "report.csv").is_file()


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["evaluate", "--site", "XX"])
    assert exc.value.code == 2
