"""Command-line entry point: ``pcgscreen <command> ...``.

Exit codes: 0 success, 2 configuration or usage error, 3 incompatible
weights, 4 empty selection after filtering.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import synth
from .dsp import PreprocessConfig
from .errors import (
    ConfigInvalid,
    CorruptFile,
    EmptyDataset,
    EmptySite,
    FingerprintMismatch,
    PCGError,
)
from .evaluate import (
    Level,
    ProtocolConfig,
    evaluate_cohort,
    quality_slice,
    site_ablation,
    site_slice,
    write_report,
)
from .model import (
    Head,
    Model,
    NetworkConfig,
    build_network,
    load_weights,
    model_from_weights,
    parse_kv,
    replace_head,
)
from .signal_io import (
    CARDIAC_SITES,
    DatasetManifest,
    Quality,
    Site,
    SplitSpec,
    load_physionet_directory,
    load_recordings,
    patient_split,
    read_manifest,
    write_manifest,
)
from .train import TrainConfig, build_signal_set, fit

log = logging.getLogger("pcgscreen")

THREADS_ENV = "PCGSCREEN_THREADS"
EXIT_OK, EXIT_USAGE, EXIT_WEIGHTS, EXIT_EMPTY = 0, 2, 3, 4


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- run config


def _coerce(cls, values: dict[str, str]):
    """Build a flat dataclass of int/float fields from string values."""
    kinds = {f.name: str(f.type) for f in fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in kinds:
            raise ConfigInvalid(f"unknown key {key!r} for {cls.__name__}")
        try:
            kwargs[key] = int(raw) if "int" in kinds[key] else float(raw)
        except ValueError as exc:
            raise ConfigInvalid(f"bad value for {key}: {raw!r}") from exc
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from exc


@dataclass(frozen=True)
class RunConfig:
    """Everything a training run needs, stored as ``config.txt`` in the run directory.

    Network keys are bare (``depth=10``, ``module.kernel_sizes=10,20,40``);
    the rest carry ``train.``, ``split.`` or ``preprocess.`` prefixes. The
    network input length always follows the preprocessing window.
    """

    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)

    def to_text(self) -> str:
        lines = [f"{k}={v}" for k, v in self.network.to_dict().items()]
        lines += [f"train.{k}={v}" for k, v in self.train.to_dict().items()]
        lines += [f"split.{f.name}={getattr(self.split, f.name)!r}" for f in fields(self.split)]
        lines += [f"preprocess.{f.name}={getattr(self.preprocess, f.name)!r}" for f in fields(self.preprocess)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "RunConfig":
        groups: dict[str, dict[str, str]] = {"train": {}, "split": {}, "preprocess": {}, "network": {}}
        for key, value in kv.items():
            prefix, _, rest = key.partition(".")
            if prefix in ("train", "split", "preprocess"):
                groups[prefix][rest] = value
            else:
                groups["network"][key] = value
        pre = _coerce(PreprocessConfig, groups["preprocess"])
        net_kv = groups["network"]
        if "input_length" in net_kv and int(net_kv["input_length"]) != pre.target_len:
            raise ConfigInvalid(
                f"input_length={net_kv['input_length']} disagrees with the {pre.target_len}-sample preprocessing window"
            )
        net_kv = {**net_kv, "input_length": str(pre.target_len)}
        return cls(
            network=NetworkConfig.from_dict(net_kv),
            train=TrainConfig.from_dict(groups["train"]),
            split=_coerce(SplitSpec, groups["split"]),
            preprocess=pre,
        )

    @classmethod
    def load(cls, path, overrides: dict[str, str] | None = None) -> "RunConfig":
        kv = parse_kv(Path(path).read_text()) if path else {}
        kv.update(overrides or {})
        return cls.from_kv(kv)


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, _, v = item.partition("=")
        out[k.strip()] = v.strip()
    if getattr(args, "seed", None) is not None:
        out.setdefault("train.seed", str(args.seed))
        out.setdefault("split.seed", str(args.seed))
    if getattr(args, "epochs", None) is not None:
        out.setdefault("train.max_epochs", str(args.epochs))
    return out


def _run_config(args, fallback_path=None) -> RunConfig:
    path = args.config or fallback_path
    if path is not None and not Path(path).is_file():
        raise UsageError(f"config file {path} not found")
    return RunConfig.load(path, _overrides(args))


# --------------------------------------------------------------------- helpers


def _load_manifest(path) -> DatasetManifest:
    if not Path(path).is_file():
        raise UsageError(f"manifest {path} not found")
    return read_manifest(path)


def _load_model(weights_path, cfg: NetworkConfig) -> Model:
    if not Path(weights_path).is_file():
        raise UsageError(f"weight file {weights_path} not found")
    return model_from_weights(load_weights(weights_path, cfg), cfg)


def _config_beside(weights_path) -> Path | None:
    candidate = Path(weights_path).parent / "config.txt"
    return candidate if candidate.is_file() else None


def _train_run(args, cfg: RunConfig, manifest: DatasetManifest, model: Model) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    train_m, val_m, test_m = patient_split(manifest, cfg.split)
    for name, part in (("train", train_m), ("val", val_m), ("test", test_m)):
        write_manifest(part, out / f"{name}_manifest.csv")
    log.info("split: %d train, %d val, %d test patients", len(train_m), len(val_m), len(test_m))
    sets = [build_signal_set(m, cfg.preprocess, args.threads) for m in (train_m, val_m)]
    fit(model, sets[0], sets[1], cfg.train, run_dir=out, threads=args.threads)
    if len(test_m):
        report = evaluate_cohort(model, test_m, Level.PATIENT, cfg.preprocess, args.threads)
        write_report(report, out / "test")
        log.info("test patients: accuracy %.4f auroc %.4f", report.accuracy, report.auroc)
    log.info("wrote %s", out)


def _init_model(args, cfg: RunConfig) -> Model:
    """Pretrained trunk from ``--init-weights`` with a fresh softmax head."""
    init_cfg_path = args.init_config or _config_beside(args.init_weights)
    source = RunConfig.load(init_cfg_path).network if init_cfg_path else cfg.network
    # the trunk must match exactly; only the classification head may differ
    trunk_cfg = replace(cfg.network, num_classes=source.num_classes, head=source.head)
    pretrained = _load_model(args.init_weights, trunk_cfg)
    return replace_head(pretrained, cfg.network.num_classes, seed=cfg.train.seed)


# -------------------------------------------------------------------- commands


def cmd_prepare(args) -> int:
    src = Path(args.dataset_dir)
    if not src.is_dir():
        raise UsageError(f"{src} is not a directory")
    if args.format == "physionet2022":
        manifest, skipped = load_physionet_directory(src)
        log.info("skipped %d unknown", skipped)
    else:
        manifest = _load_manifest(src / args.native_name)
        # fail early on unreadable audio
        load_recordings((r for _, r in manifest.recordings()), args.threads)
    if len(manifest) == 0:
        raise UsageError(f"no patients found in {src}")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_manifest(manifest, args.out)
    log.info("wrote %d patients, %d recordings to %s", len(manifest), manifest.num_recordings, args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = synth.SynthSpec(
        heart_rate_bpm=args.heart_rate,
        murmur=synth.Murmur(args.murmur),
        murmur_band_hz=tuple(args.band),
        snr_db=args.snr,
        duration_s=args.duration,
        fs_hz=args.fs,
        murmur_level=args.murmur_level,
    )
    cohort = synth.generate_cohort(
        args.patients,
        args.positive,
        args.sites,
        spec,
        args.seed,
        hr_jitter_bpm=args.hr_jitter,
        murmur_sites=args.murmur_sites,
        snr_jitter_db=args.snr_jitter,
        low_quality_fraction=args.low_quality_fraction,
        low_quality_snr_db=args.low_quality_snr,
        id_prefix=args.id_prefix,
    )
    synth.write_cohort(cohort, args.out)
    counts = cohort.label_counts()
    log.info("wrote %d patients (%s) to %s", len(cohort),
             ", ".join(f"{k.value} {v}" for k, v in counts.items()), args.out)
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _run_config(args)
    manifest = _load_manifest(args.manifest)
    _train_run(args, cfg, manifest, build_network(cfg.network, seed=cfg.train.seed))
    return EXIT_OK


def cmd_finetune(args) -> int:
    init_cfg_path = args.init_config or _config_beside(args.init_weights)
    cfg = _run_config(args, fallback_path=None if args.config else init_cfg_path)
    if cfg.network.head is not Head.SOFTMAX_K:
        cfg = replace(cfg, network=replace(cfg.network, head=Head.SOFTMAX_K, num_classes=2))
    manifest = _load_manifest(args.manifest)
    _train_run(args, cfg, manifest, _init_model(args, cfg))
    return EXIT_OK


def _select(manifest: DatasetManifest, site: str, quality: str) -> DatasetManifest:
    if site != "all":
        manifest = site_slice(manifest, Site(site))
    if quality != "all":
        manifest = quality_slice(manifest, Quality(quality))
    return manifest


def cmd_evaluate(args) -> int:
    cfg = _run_config(args, fallback_path=_config_beside(args.weights))
    manifest = _select(_load_manifest(args.manifest), args.site, args.quality)
    if manifest.num_recordings == 0:
        raise EmptyDataset(f"no recordings left after --site {args.site} --quality {args.quality}")
    model = _load_model(args.weights, cfg.network)
    report = evaluate_cohort(model, manifest, Level(args.level), cfg.preprocess, args.threads)
    write_report(report, args.out)
    log.info("%s level: accuracy %.4f sensitivity %.4f specificity %.4f auroc %.4f",
             report.level.value, report.accuracy, report.sensitivity, report.specificity, report.auroc)
    return EXIT_OK


def cmd_ablate_sites(args) -> int:
    cfg = _run_config(args)
    manifest = _load_manifest(args.manifest)
    init = None
    if args.init_weights:
        cfg = replace(cfg, network=replace(cfg.network, head=Head.SOFTMAX_K, num_classes=2))
        init = _init_model(args, cfg)
    protocol = ProtocolConfig(cfg.network, cfg.train, cfg.split, cfg.preprocess, cfg.train.seed, args.threads)
    sites = args.sites or [s for s in CARDIAC_SITES if any(r.site is s for _, r in manifest.recordings())]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    reports = site_ablation(manifest, protocol, sites, init, out_dir=out)
    with open(out / "summary.csv", "w") as fh:
        fh.write("site,accuracy,sensitivity,specificity,auroc\n")
        for key, r in reports.items():
            fh.write(f"{key},{r.accuracy!r},{r.sensitivity!r},{r.specificity!r},{r.auroc!r}\n")
            log.info("%s: accuracy %.4f auroc %.4f", key, r.accuracy, r.auroc)
    return EXIT_OK


# ---------------------------------------------------------------------- parser


def _sites(text: str) -> list[Site]:
    try:
        return [Site(s.strip().upper()) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _band(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("band must be LOW,HIGH") from exc
    return lo, hi


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, help="native manifest CSV")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--config", help="key=value run configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
    p.add_argument("--seed", type=int, help="shorthand for train.seed and split.seed")
    p.add_argument("--epochs", type=int, help="shorthand for train.max_epochs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcgscreen", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=_default_threads(),
                        help=f"worker threads for loading and scoring (default ${THREADS_ENV} or 1)")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="build a native manifest from a dataset directory")
    p.add_argument("dataset_dir")
    p.add_argument("--format", choices=["physionet2022", "native"], default="physionet2022")
    p.add_argument("--native-name", default="manifest.csv", help="manifest file name inside a native dataset")
    p.add_argument("--out", required=True, help="output manifest CSV")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="write a synthetic cohort (WAV + manifest)")
    p.add_argument("--out", required=True)
    p.add_argument("--patients", type=int, default=200)
    p.add_argument("--positive", type=float, default=0.63, help="fraction of positive patients")
    p.add_argument("--sites", type=_sites, default=list(CARDIAC_SITES))
    p.add_argument("--murmur-sites", type=_sites, help="sites that carry murmurs (default all)")
    p.add_argument("--murmur", choices=["systolic", "diastolic"], default="systolic")
    p.add_argument("--band", type=_band, default=(150.0, 400.0), help="murmur band LOW,HIGH in Hz")
    p.add_argument("--murmur-level", type=float, default=0.25)
    p.add_argument("--heart-rate", type=float, default=72.0)
    p.add_argument("--hr-jitter", type=float, default=12.0)
    p.add_argument("--snr", type=float, default=20.0)
    p.add_argument("--snr-jitter", type=float, default=0.0)
    p.add_argument("--low-quality-fraction", type=float, default=0.0)
    p.add_argument("--low-quality-snr", type=float, default=0.0)
    p.add_argument("--duration", type=float, default=5.0)
    p.add_argument("--fs", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--id-prefix", default="syn")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="train from scratch")
    _add_train_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="train from pretrained weights with a fresh softmax head")
    _add_train_flags(p)
    p.add_argument("--init-weights", required=True)
    p.add_argument("--init-config", help="config of the pretraining run (default: config.txt beside the weights)")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="score a manifest and write report/roc/pr CSVs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--config", help="run configuration (default: config.txt beside the weights)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    p.add_argument("--level", choices=[lv.value for lv in Level], default="patient")
    p.add_argument("--site", choices=[s.value for s in CARDIAC_SITES] + ["all"], default="all")
    p.add_argument("--quality", choices=[q.value for q in Quality] + ["all"], default="all")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate-sites", help="train and evaluate one model per site plus all sites")
    _add_train_flags(p)
    p.add_argument("--sites", type=_sites, help="sites to ablate (default: all present)")
    p.add_argument("--init-weights", help="optional pretrained weights for every run")
    p.add_argument("--init-config")
    p.set_defaults(func=cmd_ablate_sites)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (FingerprintMismatch, CorruptFile) as exc:
        log.error("incompatible weights: %s", exc)
        return EXIT_WEIGHTS
    except (EmptyDataset, EmptySite) as exc:
        log.error("empty selection: %s", exc)
        return EXIT_EMPTY
    except (UsageError, PCGError, ValueError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
