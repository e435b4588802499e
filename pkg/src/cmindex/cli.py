"""Command-line interface.

Exit codes: 0 on success, 2 for configuration problems, 3 for malformed
data files.
"""

from __future__ import annotations

import argparse
import sys

from .codebook import Family, load_codebook, save_codebook, train_kmeans
from .errors import (
    ConfigError,
    EmptyPatchError,
    FormatError,
    IngestionError,
    InvalidDescriptorError,
)
from .experiment import params_from_mapping, read_config
from .features import (
    SynthConfig,
    generate_synthetic_corpus,
    load_descriptors,
    save_descriptors,
    save_descriptors_text,
)
from .index import (
    BaselineIndex,
    MultiIndex,
    build_baseline_index,
    build_multi_index,
    default_profile,
    directory_overhead,
    load_index,
    memory_footprint,
    save_index,
)
from .metrics import compute_metrics, load_ground_truth
from .query import query_baseline, query_multi_index
from .signatures import load_he_model, save_he_model, train_he_model

_DATA_ERRORS = (FormatError, InvalidDescriptorError, EmptyPatchError, IngestionError)


def _open_or_config_error(loader, path):
    try:
        return loader(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"missing input file: {path}") from exc


def _cmd_gen_synth(args) -> int:
    config = SynthConfig(
        groups=args.groups,
        images_per_group=args.images_per_group,
        features_per_image=args.features,
        noise=args.noise,
        illum=args.illum,
        sift_pool=args.sift_pool,
    )
    records = generate_synthetic_corpus(config, args.seed)
    writer = save_descriptors_text if args.text else save_descriptors
    writer(records, args.out)
    print(f"wrote {len(records)} images x {args.features} features to {args.out}")
    return 0


def _cmd_train_codebook(args) -> int:
    import numpy as np

    records = _open_or_config_error(load_descriptors, args.inp)
    family = Family.SIFT if args.family == "sift" else Family.COLOR
    if family is Family.SIFT:
        samples = np.concatenate([r.sift_matrix for r in records])
    else:
        samples = np.concatenate([r.color_matrix for r in records])
    book = train_kmeans(samples, args.k, args.iters, args.seed, family)
    save_codebook(book, args.out)
    print(f"trained {args.family} codebook: k={book.size} on {samples.shape[0]} samples -> {args.out}")
    return 0


def _cmd_train_he(args) -> int:
    from .codebook import assign_nearest

    records = _open_or_config_error(load_descriptors, args.inp)
    book = _open_or_config_error(load_codebook, args.sift_book)
    samples = []
    for rec in records:
        words = assign_nearest(rec.sift_matrix, book)
        samples.extend((feat.sift, int(w)) for feat, w in zip(rec.features, words))
    model = train_he_model(samples, book, args.seed)
    save_he_model(model, args.out)
    extra = f", {len(model.untrained_words)} words without samples" if model.untrained_words else ""
    print(f"trained signature thresholds for {book.size} words{extra} -> {args.out}")
    return 0


def _cmd_build_index(args) -> int:
    records = _open_or_config_error(load_descriptors, args.inp)
    sift_book = _open_or_config_error(load_codebook, args.sift_book)
    he = _open_or_config_error(load_he_model, args.he) if args.he else None
    if args.mode == "cmi":
        if not args.color_book:
            raise ConfigError("--color-book is required for mode cmi")
        color_book = _open_or_config_error(load_codebook, args.color_book)
        index = build_multi_index(records, (sift_book, color_book), he)
    else:
        index = build_baseline_index(records, sift_book, he)
    save_index(index, args.out)
    print(
        f"built {args.mode} index: {index.total_features()} postings in "
        f"{len(index.entries)} entries over {index.n_images} images -> {args.out}"
    )
    return 0


def _load_query_setup(args):
    mapping = read_config(args.params)
    params = params_from_mapping(mapping)
    paths = {k: v for k, v in mapping.items() if k in ("descriptors", "sift_book", "color_book", "he_model")}
    unknown = set(mapping) - set(paths) - {
        "ma_sift", "ma_color", "kappa_color", "sigma_color", "tau_sift",
        "sigma_sift", "enable_sift_he", "enable_color_he", "enable_burst",
    }
    if unknown:
        raise ConfigError(f"unknown parameter keys: {sorted(unknown)}")
    if "descriptors" not in paths:
        raise ConfigError("params file must name a `descriptors` path")
    if "sift_book" not in paths:
        raise ConfigError("params file must name a `sift_book` path")
    records = _open_or_config_error(load_descriptors, paths["descriptors"])
    sift_book = _open_or_config_error(load_codebook, paths["sift_book"])
    color_book = (
        _open_or_config_error(load_codebook, paths["color_book"]) if "color_book" in paths else None
    )
    he = _open_or_config_error(load_he_model, paths["he_model"]) if "he_model" in paths else None
    index = _open_or_config_error(load_index, args.index)
    if isinstance(index, MultiIndex) and color_book is None:
        raise ConfigError("a 2-D index needs a `color_book` path in the params file")
    return records, index, sift_book, color_book, he, params


def _run_query(rec, index, sift_book, color_book, he, params):
    if isinstance(index, MultiIndex):
        return query_multi_index(rec, index, (sift_book, color_book), he, params)
    return query_baseline(rec, index, sift_book, he, params)


def _cmd_query(args) -> int:
    records, index, sift_book, color_book, he, params = _load_query_setup(args)
    by_id = {r.image_id: r for r in records}
    if args.query_id not in by_id:
        raise ConfigError(f"query id {args.query_id} not in {len(by_id)} loaded images")
    ranked = _run_query(by_id[args.query_id], index, sift_book, color_book, he, params)
    print(f"# query {args.query_id}: {len(ranked.items)} scored images")
    for rank, (image_id, score) in enumerate(ranked.items, 1):
        print(f"{rank}\t{image_id}\t{score:.9f}")
    if ranked.stats is not None:
        print(
            f"# visited {ranked.stats.postings_visited} postings in "
            f"{ranked.stats.entries_visited} entries"
        )
    return 0


def _cmd_evaluate(args) -> int:
    records, index, sift_book, color_book, he, params = _load_query_setup(args)
    truth = _open_or_config_error(load_ground_truth, args.truth)
    rankings = [_run_query(r, index, sift_book, color_book, he, params) for r in records]
    report = compute_metrics(rankings, truth)
    profile = default_profile(index)
    report.bytes_per_feature, report.total_bytes = memory_footprint(index, profile)
    report.directory_bytes = directory_overhead(index)

    lines = ["[evaluation]"]
    for key in ("n_queries", "ns_score", "mean_ap", "top1", "top10",
                "postings_visited_mean", "entries_visited_mean",
                "bytes_per_feature", "total_bytes", "directory_bytes"):
        value = getattr(report, key)
        if isinstance(value, float):
            value = f"{value:.6f}"
        lines.append(f"{key} = {value}")
    lines.append("")
    lines.append("[per-query]")
    lines.append("query_id  ns  ap  top1  top10")
    for q in report.per_query:
        ns = "n/a" if q.ns is None else f"{q.ns:.1f}"
        ap = "n/a" if q.ap is None else f"{q.ap:.6f}"
        lines.append(f"{q.query_id}  {ns}  {ap}  {q.top1:.1f}  {q.top10:.1f}")
    text = "\n".join(lines) + "\n"
    with open(args.report, "w") as fh:
        fh.write(text)
    import json

    with open(str(args.report) + ".json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(text, end="")
    print(f"# report written to {args.report} (+ .json sidecar)")
    return 0


def _cmd_bench(args) -> int:
    records, index, sift_book, color_book, he, params = _load_query_setup(args)
    total_postings = 0
    total_entries = 0
    for rec in records:
        ranked = _run_query(rec, index, sift_book, color_book, he, params)
        total_postings += ranked.stats.postings_visited
        total_entries += ranked.stats.entries_visited
    n = len(records)
    profile = default_profile(index)
    bpf, total = memory_footprint(index, profile)
    print(f"queries = {n}")
    print(f"postings_visited_total = {total_postings}")
    print(f"postings_visited_mean = {total_postings / n:.2f}")
    print(f"entries_visited_total = {total_entries}")
    print(f"entries_visited_mean = {total_entries / n:.2f}")
    print(f"profile = {profile.value}")
    print(f"bytes_per_feature = {bpf}")
    print(f"total_bytes = {total}")
    print(f"directory_bytes = {directory_overhead(index)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmindex", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic grouped corpus")
    p.add_argument("--groups", type=int, required=True)
    p.add_argument("--images-per-group", type=int, required=True)
    p.add_argument("--features", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--illum", type=float, default=0.3)
    p.add_argument("--sift-pool", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--text", action="store_true", help="write the text variant")
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("train-codebook", help="k-means vocabulary for one family")
    p.add_argument("--family", choices=("sift", "color"), required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_codebook)

    p = sub.add_parser("train-he", help="per-word signature thresholds")
    p.add_argument("--sift-book", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train_he)

    p = sub.add_parser("build-index", help="pack descriptors into an index")
    p.add_argument("--mode", choices=("baseline", "cmi"), required=True)
    p.add_argument("--sift-book", required=True)
    p.add_argument("--color-book")
    p.add_argument("--he")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_index)

    p = sub.add_parser("query", help="rank images for one query id")
    p.add_argument("--index", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--query-id", type=int, required=True)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("evaluate", help="query every image and score the run")
    p.add_argument("--index", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("bench", help="traversal counters and memory accounting")
    p.add_argument("--index", required=True)
    p.add_argument("--params", required=True)
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
