"""Experiment harness: config files, the ablation grid, and reports.

Config files are line-oriented `key = value` (# starts a comment).  Keys
are either QueryParams field names, corpus/training knobs, or file paths;
anything else is rejected.  A run goes generate-or-load, train, build,
query-all, score, and writes a text report plus a JSON sidecar with the
same numbers and one rank/score CSV per grid row.  Everything is seeded,
so a rerun reproduces the report byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .codebook import (
    DEFAULT_COLOR_WORDS,
    Codebook,
    Family,
    assign_nearest,
    train_kmeans,
)
from .errors import ConfigError
from .features import ImageRecord, SynthConfig, generate_synthetic_corpus, load_descriptors
from .index import (
    build_baseline_index,
    build_multi_index,
    default_profile,
    directory_overhead,
    memory_footprint,
)
from .metrics import (
    GroundTruth,
    MetricsReport,
    compute_metrics,
    ground_truth_from_records,
)
from .query import QueryParams, RankedList, query_baseline, query_multi_index
from .signatures import HeModel, train_he_model

_PARAM_FIELDS = {f.name for f in dataclasses.fields(QueryParams)}
_BOOL_VALUES = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def read_config(path) -> dict[str, str]:
    """Parse a line-oriented `key = value` file."""
    mapping: dict[str, str] = {}
    try:
        with open(path, "r") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected `key = value`, got {raw!r}")
                key, value = line.split("=", 1)
                mapping[key.strip()] = value.strip()
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    return mapping


def _coerce(key: str, value: str, kind):
    try:
        if kind is bool:
            try:
                return _BOOL_VALUES[value.lower()]
            except KeyError:
                raise ValueError(value)
        return kind(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def params_from_mapping(mapping: dict[str, str]) -> QueryParams:
    """Build QueryParams from the matching keys of a config mapping."""
    kwargs = {}
    hints = {
        "ma_sift": int,
        "ma_color": int,
        "kappa_color": int,
        "tau_sift": int,
        "sigma_color": float,
        "sigma_sift": float,
        "enable_sift_he": bool,
        "enable_color_he": bool,
        "enable_burst": bool,
    }
    for key, value in mapping.items():
        if key in hints:
            kwargs[key] = _coerce(key, value, hints[key])
    return QueryParams(**kwargs)


@dataclass
class ExperimentConfig:
    """Everything one run needs; `descriptors` overrides synthesis."""

    descriptors: str | None = None
    groups: int = 25
    images_per_group: int = 4
    features: int = 12
    noise: float = 0.05
    illum: float = 0.3
    sift_pool: int = 0
    seed: int = 0

    k_sift: int = 256
    k_color: int = DEFAULT_COLOR_WORDS
    kmeans_iters: int = 20
    train_seed: int = 1
    he_seed: int = 2

    mode: str = "cmi"
    ablation: bool = False
    params: QueryParams = field(default_factory=QueryParams)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        mapping = read_config(path)
        kwargs = {}
        hints = {
            "descriptors": str,
            "groups": int,
            "images_per_group": int,
            "features": int,
            "noise": float,
            "illum": float,
            "sift_pool": int,
            "seed": int,
            "k_sift": int,
            "k_color": int,
            "kmeans_iters": int,
            "train_seed": int,
            "he_seed": int,
            "mode": str,
            "ablation": bool,
        }
        for key, value in mapping.items():
            if key in hints:
                kwargs[key] = _coerce(key, value, hints[key])
            elif key not in _PARAM_FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
        cfg = cls(params=params_from_mapping(mapping), **kwargs)
        if cfg.mode not in ("cmi", "baseline"):
            raise ConfigError(f"mode must be cmi or baseline, got {cfg.mode!r}")
        return cfg


@dataclass
class ExperimentRow:
    label: str
    mode: str
    params: QueryParams
    metrics: MetricsReport


@dataclass
class ExperimentResult:
    rows: list[ExperimentRow]
    report_text: str
    paths: list[Path] = field(default_factory=list)

    def row(self, label: str) -> ExperimentRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def _corpus_for(cfg: ExperimentConfig) -> list[ImageRecord]:
    if cfg.descriptors is not None:
        try:
            return load_descriptors(cfg.descriptors)
        except FileNotFoundError as exc:
            raise ConfigError(f"descriptor file not found: {cfg.descriptors}") from exc
    synth = SynthConfig(
        groups=cfg.groups,
        images_per_group=cfg.images_per_group,
        features_per_image=cfg.features,
        noise=cfg.noise,
        illum=cfg.illum,
        sift_pool=cfg.sift_pool,
    )
    return generate_synthetic_corpus(synth, cfg.seed)


def train_models(
    corpus: list[ImageRecord], cfg: ExperimentConfig
) -> tuple[Codebook, Codebook, HeModel]:
    """Train both vocabularies on the corpus descriptors plus the SIFT
    signature model (thresholds from the single-assigned words)."""
    sift_samples = np.concatenate([rec.sift_matrix for rec in corpus])
    color_samples = np.concatenate([rec.color_matrix for rec in corpus])
    sift_book = train_kmeans(sift_samples, cfg.k_sift, cfg.kmeans_iters, cfg.train_seed, Family.SIFT)
    color_book = train_kmeans(
        color_samples, cfg.k_color, cfg.kmeans_iters, cfg.train_seed + 1, Family.COLOR
    )
    he_samples = []
    for rec in corpus:
        words = assign_nearest(rec.sift_matrix, sift_book)
        he_samples.extend((feat.sift, int(w)) for feat, w in zip(rec.features, words))
    he = train_he_model(he_samples, sift_book, cfg.he_seed)
    return sift_book, color_book, he


def _ablation_rows(base: QueryParams) -> list[tuple[str, str, QueryParams]]:
    off = replace(base, enable_sift_he=False, enable_burst=False, ma_sift=1)
    return [
        ("bow", "baseline", replace(off, enable_color_he=False)),
        ("cmi", "cmi", off),
        ("cmi+burst", "cmi", replace(off, enable_burst=True)),
        ("cmi+he", "cmi", replace(off, enable_sift_he=True)),
        ("cmi+burst+he", "cmi", replace(off, enable_burst=True, enable_sift_he=True)),
        (
            "cmi+burst+he+ma",
            "cmi",
            replace(off, enable_burst=True, enable_sift_he=True, ma_sift=base.ma_sift),
        ),
    ]


def query_all(
    corpus: list[ImageRecord],
    mode: str,
    index,
    sift_book: Codebook,
    color_book: Codebook | None,
    he: HeModel | None,
    params: QueryParams,
) -> list[RankedList]:
    rankings = []
    for rec in corpus:
        if mode == "cmi":
            rankings.append(query_multi_index(rec, index, (sift_book, color_book), he, params))
        else:
            rankings.append(query_baseline(rec, index, sift_book, he, params))
    return rankings


def run_experiment(cfg: ExperimentConfig | str | Path, out_dir=None) -> ExperimentResult:
    """Execute one config; write report files when `out_dir` is given."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = ExperimentConfig.from_file(cfg)
    corpus = _corpus_for(cfg)
    truth = ground_truth_from_records(corpus)
    sift_book, color_book, he = train_models(corpus, cfg)

    if cfg.ablation:
        grid = _ablation_rows(cfg.params)
    else:
        grid = [(cfg.mode, cfg.mode, cfg.params)]

    indexes: dict[tuple[str, bool], object] = {}
    rows: list[ExperimentRow] = []
    rankings_by_row: dict[str, list[RankedList]] = {}
    for label, mode, params in grid:
        key = (mode, params.enable_sift_he)
        if key not in indexes:
            he_arg = he if params.enable_sift_he else None
            if mode == "cmi":
                indexes[key] = build_multi_index(corpus, (sift_book, color_book), he_arg)
            else:
                indexes[key] = build_baseline_index(corpus, sift_book, he_arg)
        index = indexes[key]
        rankings = query_all(corpus, mode, index, sift_book, color_book, he, params)
        report = compute_metrics(rankings, truth)
        profile = default_profile(index)
        report.bytes_per_feature, report.total_bytes = memory_footprint(index, profile)
        report.directory_bytes = directory_overhead(index)
        rows.append(ExperimentRow(label=label, mode=mode, params=params, metrics=report))
        rankings_by_row[label] = rankings

    text = render_report(cfg, rows)
    result = ExperimentResult(rows=rows, report_text=text)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report_path = out / "report.txt"
        report_path.write_text(text)
        sidecar = out / "report.json"
        sidecar.write_text(report_to_json(cfg, rows))
        result.paths = [report_path, sidecar]
        for label, rankings in rankings_by_row.items():
            csv_path = out / f"ranks_{label.replace('+', '_')}.csv"
            write_rank_csv(rankings, csv_path)
            result.paths.append(csv_path)
    return result


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def render_report(cfg: ExperimentConfig, rows: list[ExperimentRow]) -> str:
    lines = ["[config]"]
    for f in dataclasses.fields(ExperimentConfig):
        if f.name == "params":
            continue
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    for f in dataclasses.fields(QueryParams):
        lines.append(f"{f.name} = {getattr(cfg.params, f.name)}")
    lines.append("")
    lines.append("[metrics]")
    header = [
        "row",
        "mode",
        "ns",
        "map",
        "top1",
        "top10",
        "postings/query",
        "entries/query",
        "bytes/feat",
        "total_bytes",
    ]
    table = [header]
    for r in rows:
        m = r.metrics
        table.append(
            [
                r.label,
                r.mode,
                _fmt(m.ns_score),
                _fmt(m.mean_ap),
                _fmt(m.top1),
                _fmt(m.top10),
                _fmt(m.postings_visited_mean),
                _fmt(m.entries_visited_mean),
                _fmt(m.bytes_per_feature),
                _fmt(m.total_bytes),
            ]
        )
    widths = [max(len(row[c]) for row in table) for c in range(len(header))]
    for row in table:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    lines.append("")
    return "\n".join(lines)


def report_to_json(cfg: ExperimentConfig, rows: list[ExperimentRow]) -> str:
    payload = {
        "config": {
            **{
                f.name: getattr(cfg, f.name)
                for f in dataclasses.fields(ExperimentConfig)
                if f.name != "params"
            },
            "params": dataclasses.asdict(cfg.params),
        },
        "rows": [
            {
                "label": r.label,
                "mode": r.mode,
                "params": dataclasses.asdict(r.params),
                "metrics": r.metrics.to_dict(),
            }
            for r in rows
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_rank_csv(rankings: list[RankedList], path) -> None:
    with open(path, "w") as fh:
        fh.write("query_id,rank,image_id,score\n")
        for ranked in rankings:
            for rank, (image_id, score) in enumerate(ranked.items, 1):
                fh.write(f"{ranked.query_id},{rank},{image_id},{score!r}\n")
