"""Batch command-line front end.

Subcommands: synth, inspect, cv, permute, histomap, correlate. All
randomness flows from one --seed through fixed derivations (cycle, fold and
permutation offsets), so identical flags and seed give byte-identical output
files regardless of --threads.

Exit codes: 0 success, 2 usage / invalid flags, 3 I/O failure, 4 dataset
validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dataset import (
    DataError,
    SyntheticSpec,
    compact_blob,
    generate_synthetic,
    grid_and_mask_for,
    load_dataset,
    save_dataset,
)
from .ensemble import BoostConfig
from .evaluation import (
    PipelineConfig,
    Scheme,
    correlate_behavior,
    cv_report_to_dict,
    permutation_report_to_dict,
    permutation_test,
    run_cv,
    write_json,
    write_table1_tsv,
    write_table2_tsv,
)
from .relieff import ReliefFConfig
from .stability import (
    remove_small_clusters,
    selection_histogram,
    smooth_map,
    superimpose,
    threshold_top,
    write_cluster_tsv,
    write_volume,
)

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DATA = 4

_CONFIG_KEYS = {
    "": {"seed", "threads", "out_dir", "relieff", "boost", "pipeline", "synth"},
    "relieff": {"k_neighbors", "sample_fraction", "top_n"},
    "boost": {"rounds", "epsilon_floor", "selection"},
    "pipeline": {"train_fraction", "cycles"},
    "synth": {
        "participants", "features", "planted", "effect", "noise_sigma",
        "offset_sigma", "sessions", "blocks_per_label", "scans_per_block", "neg_first",
    },
}


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ValueError(f"--config file not found: {p}")
    cfg = json.loads(p.read_text(encoding="utf-8"))
    if not isinstance(cfg, dict):
        raise ValueError("--config must hold a JSON object")
    for section, allowed in _CONFIG_KEYS.items():
        sub = cfg if section == "" else cfg.get(section, {})
        if not isinstance(sub, dict):
            raise ValueError(f"config section {section!r} must be an object")
        unknown = set(sub) - allowed
        if unknown:
            where = section or "top level"
            raise ValueError(f"unknown config keys in {where}: {sorted(unknown)}")
    return cfg


def _pick(flag_value, cfg: dict, section: str, key: str, default):
    if flag_value is not None:
        return flag_value
    return cfg.get(section, {}).get(key, default) if section else cfg.get(key, default)


def _require(value, flag: str):
    if value is None:
        raise ValueError(f"{flag} is required (set it as a flag or in --config)")
    return value


def _check(cond: bool, message: str):
    if not cond:
        raise ValueError(message)


def _effective_pipeline(args, cfg: dict, seed: int) -> PipelineConfig:
    relieff = ReliefFConfig(
        k_neighbors=_pick(getattr(args, "k", None), cfg, "relieff", "k_neighbors", 3),
        sample_fraction=_pick(getattr(args, "sample_fraction", None), cfg, "relieff",
                              "sample_fraction", 0.10),
        top_n=_pick(getattr(args, "top_n", None), cfg, "relieff", "top_n", 2500),
        seed=seed,
    )
    boost = BoostConfig(
        rounds=_pick(getattr(args, "rounds", None), cfg, "boost", "rounds", 260),
        epsilon_floor=_pick(None, cfg, "boost", "epsilon_floor", 1e-10),
        selection=_pick(getattr(args, "selection", None), cfg, "boost", "selection", "error"),
    )
    return PipelineConfig(
        relieff=relieff,
        boost=boost,
        train_fraction=_pick(getattr(args, "train_fraction", None), cfg, "pipeline",
                             "train_fraction", 0.7),
        cycles=_pick(getattr(args, "cycles", None), cfg, "pipeline", "cycles", None),
        seed=seed,
    )


def _emit(args, summary: dict, text: str):
    if getattr(args, "json", False):
        print(json.dumps(summary, sort_keys=True))
    else:
        print(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    seed = _pick(args.seed, cfg, "", "seed", 0)
    out = Path(_require(_pick(args.out, cfg, "", "out_dir", None), "--out"))

    participants = _require(_pick(args.participants, cfg, "synth", "participants", None),
                            "--participants")
    features = _require(_pick(args.features, cfg, "synth", "features", None), "--features")
    planted = _pick(args.planted, cfg, "synth", "planted", 0)
    effect = _pick(args.effect, cfg, "synth", "effect", 0.0)
    _check(participants >= 1, "--participants must be >= 1")
    _check(features >= 1, "--features must be >= 1")
    _check(planted >= 0, "--planted must be >= 0")
    _check(effect >= 0, "--effect must be >= 0")
    noise = _pick(args.noise_sigma, cfg, "synth", "noise_sigma", 1.0)
    offset = _pick(args.offset_sigma, cfg, "synth", "offset_sigma", 0.0)
    _check(noise >= 0, "--noise-sigma must be >= 0")
    _check(offset >= 0, "--offset-sigma must be >= 0")
    sessions = _pick(args.sessions, cfg, "synth", "sessions", 12)
    blocks_per_label = _pick(args.blocks_per_label, cfg, "synth", "blocks_per_label", 3)
    scans_per_block = _pick(args.scans_per_block, cfg, "synth", "scans_per_block", 16)

    mask = grid_and_mask_for(features)
    planted_idx = compact_blob(mask, planted) if planted else np.empty(0, dtype=np.int64)
    spec = SyntheticSpec(
        n_participants=participants,
        n_features=features,
        planted=tuple(int(i) for i in planted_idx),
        effect_size=effect,
        noise_sigma=noise,
        participant_offset_sigma=offset,
        sessions_per_participant=sessions,
        blocks_per_session_per_label=blocks_per_label,
        scans_per_block=scans_per_block,
        seed=seed,
    )
    bundle, ground_truth = generate_synthetic(spec)
    manifest = save_dataset(bundle, out)
    write_json(
        {"planted": [int(i) for i in ground_truth], "effect_size": effect, "seed": seed},
        out / "ground_truth.json",
    )
    summary = {
        "dataset": str(out),
        "manifest": str(manifest),
        "n_scans": len(bundle.scans),
        "n_features": bundle.n_features,
        "n_planted": int(ground_truth.size),
    }
    _emit(args, summary, f"wrote {len(bundle.scans)} scans x {bundle.n_features} features "
                         f"({ground_truth.size} planted) to {out}")
    return 0


def cmd_inspect(args) -> int:
    bundle = load_dataset(args.data)
    per_label = {name: 0 for name in bundle.label_names.values()}
    for s in bundle.scans:
        per_label[bundle.label_names[int(s.label)]] += 1
    pids = bundle.participant_ids()
    blocks = {pid: len({s.block_id for s in bundle.scans if s.participant_id == pid})
              for pid in pids}
    summary = {
        "grid_dims": list(bundle.grid.dims),
        "voxel_size_mm": list(bundle.grid.voxel_size_mm),
        "n_features": bundle.n_features,
        "n_scans": len(bundle.scans),
        "participants": pids,
        "blocks_per_participant": blocks,
        "scans_per_label": per_label,
    }
    text = (
        f"grid {bundle.grid.dims} voxels of {bundle.grid.voxel_size_mm} mm, "
        f"{bundle.n_features} in-mask features\n"
        f"{len(bundle.scans)} scans from {len(pids)} participant(s); "
        f"per label: {per_label}\n"
        f"blocks per participant: {blocks}"
    )
    _emit(args, summary, text)
    return 0


def cmd_cv(args) -> int:
    cfg = _load_config(args.config)
    seed = _pick(args.seed, cfg, "", "seed", 0)
    out = Path(_require(_pick(args.out, cfg, "", "out_dir", None), "--out"))
    threads = _pick(args.threads, cfg, "", "threads", 1)
    scheme = Scheme(args.scheme)
    if scheme == Scheme.WITHIN:
        _require(args.participant, "--participant")

    pipeline = _effective_pipeline(args, cfg, seed)
    bundle = load_dataset(args.data)
    report = run_cv(bundle, scheme, pipeline, participant_id=args.participant,
                    n_threads=threads)

    out.mkdir(parents=True, exist_ok=True)
    write_json(cv_report_to_dict(report), out / "cv_report.json")
    row_id = report.participant_id if scheme == Scheme.WITHIN else "ALL"
    write_table1_tsv([(row_id, report.mean_accuracy, None)], out / "table1.tsv")
    names = tuple(bundle.label_names[k] for k in sorted(bundle.label_names))
    title = (f"Within participant {report.participant_id}" if scheme == Scheme.WITHIN
             else "Cross participants")
    write_table2_tsv(report, out / "table2.tsv", title, label_names=names)

    summary = {
        "scheme": scheme.value,
        "mean_accuracy": report.mean_accuracy,
        "std_accuracy": report.std_accuracy,
        "cycles": int(report.accuracies.size),
        "out": str(out),
    }
    _emit(args, summary,
          f"{scheme.value} CV: accuracy {report.mean_accuracy:.3f} "
          f"± {report.std_accuracy:.3f} over {report.accuracies.size} cycles -> {out}")
    return 0


def cmd_permute(args) -> int:
    cfg = _load_config(args.config)
    seed = _pick(args.seed, cfg, "", "seed", 0)
    out = Path(_require(_pick(args.out, cfg, "", "out_dir", None), "--out"))
    threads = _pick(args.threads, cfg, "", "threads", 1)
    _check(args.n_perm is not None and args.n_perm >= 1, "--n-perm must be >= 1")
    scheme = Scheme(args.scheme)
    if scheme == Scheme.WITHIN:
        _require(args.participant, "--participant")

    pipeline = _effective_pipeline(args, cfg, seed)
    bundle = load_dataset(args.data)
    report = permutation_test(bundle, scheme, args.n_perm, pipeline,
                              participant_id=args.participant, n_threads=threads)

    out.mkdir(parents=True, exist_ok=True)
    write_json(permutation_report_to_dict(report), out / "permutation.json")
    row_id = args.participant if scheme == Scheme.WITHIN else "ALL"
    write_table1_tsv([(row_id, report.observed, report.p_value)], out / "table1.tsv")

    summary = {
        "scheme": scheme.value,
        "observed": report.observed,
        "p_value": report.p_value,
        "n_perm": report.n_perm,
        "out": str(out),
    }
    _emit(args, summary,
          f"{scheme.value} permutation test: observed {report.observed:.3f}, "
          f"p = {report.p_value:.4f} ({report.n_perm} permutations) -> {out}")
    return 0


def cmd_histomap(args) -> int:
    cfg = _load_config(args.config)
    seed = _pick(args.seed, cfg, "", "seed", 0)
    out = Path(_require(_pick(args.out, cfg, "", "out_dir", None), "--out"))
    threads = _pick(args.threads, cfg, "", "threads", 1)
    _check(args.fwhm is None or args.fwhm > 0, "--fwhm must be > 0")
    _check(args.folds >= 1, "--folds must be >= 1")
    _check(args.map_top >= 1, "--map-top must be >= 1")
    _check(args.min_cluster >= 1, "--min-cluster must be >= 1")

    pipeline = _effective_pipeline(args, cfg, seed)
    if args.select_n is not None:
        _check(args.select_n >= 1, "--select-n must be >= 1")
        pipeline = replace(pipeline, relieff=replace(pipeline.relieff, top_n=args.select_n))
    fwhm = args.fwhm if args.fwhm is not None else 6.0

    bundle = load_dataset(args.data)
    histograms = [
        selection_histogram(bundle, pid, n_folds=args.folds, cfg=pipeline,
                            n_threads=threads)
        for pid in bundle.participant_ids()
    ]
    raw_map = superimpose(histograms, bundle.mask)
    smoothed = smooth_map(raw_map, fwhm_mm=fwhm)
    clusters = remove_small_clusters(
        threshold_top(smoothed, top_n=args.map_top, connectivity=args.connectivity),
        min_size=args.min_cluster,
    )

    out.mkdir(parents=True, exist_ok=True)
    vol_path, sidecar_path = write_volume(smoothed, out / "map")
    tsv_path = write_cluster_tsv(clusters, smoothed, out / "clusters.tsv")

    sizes = sorted((int(c.size) for c in clusters.clusters), reverse=True)
    summary = {
        "n_clusters": len(clusters.clusters),
        "cluster_sizes": sizes,
        "selected_voxels": int(clusters.member.sum()),
        "volume": str(vol_path),
        "sidecar": str(sidecar_path),
        "clusters_tsv": str(tsv_path),
    }
    _emit(args, summary,
          f"{len(clusters.clusters)} cluster(s) of sizes {sizes} -> {out}")
    return 0


def _read_id_value_tsv(path) -> dict[int, float]:
    """participant -> value from the first two TSV columns; a non-numeric
    first row is treated as header."""
    p = Path(path)
    if not p.is_file():
        raise ValueError(f"input file not found: {p}")
    out: dict[int, float] = {}
    for line in p.read_text(encoding="utf-8").splitlines():
        parts = line.rstrip("\n").split("\t")
        if len(parts) < 2:
            continue
        try:
            pid, value = int(parts[0]), float(parts[1])
        except ValueError:
            continue  # header or non-numeric row
        out[pid] = value
    if not out:
        raise ValueError(f"no (participant, value) rows found in {p}")
    return out


def cmd_correlate(args) -> int:
    acc = _read_id_value_tsv(args.acc)
    beh = _read_id_value_tsv(args.behavior)
    if set(acc) != set(beh):
        raise ValueError(
            f"participant sets differ between --acc ({sorted(acc)}) "
            f"and --behavior ({sorted(beh)})"
        )
    pids = sorted(acc)
    omit = set()
    for pid in args.omit or []:
        if pid not in acc:
            raise ValueError(f"--omit participant {pid} not present in the inputs")
        omit.add(pids.index(pid))

    result = correlate_behavior([acc[p] for p in pids], [beh[p] for p in pids], omit=omit)
    retained = [p for i, p in enumerate(pids) if i not in omit]
    summary = {
        "r": result.r,
        "participants": retained,
        "pairs": [[a, b] for a, b in result.pairs],
    }
    if args.out:
        write_json(summary, Path(args.out))
    lines = [f"r = {result.r:.4f} over {len(result.pairs)} pairs"]
    lines += [f"  {pid}\t{a!r}\t{b!r}" for pid, (a, b) in zip(retained, result.pairs)]
    _emit(args, summary, "\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(sp, with_data=True):
    sp.add_argument("--config", help="JSON run configuration file")
    sp.add_argument("--seed", type=int, default=None, help="global seed (default 0)")
    sp.add_argument("--threads", type=int, default=None,
                    help="worker threads; 0 = all cores (default 1)")
    sp.add_argument("--out", default=None, help="output directory")
    sp.add_argument("--json", action="store_true", help="machine-readable stdout")
    if with_data:
        sp.add_argument("--data", required=True, help="dataset directory (manifest.json)")


def _add_pipeline_flags(sp):
    sp.add_argument("--k", type=int, default=None, help="ReliefF neighbors (default 3)")
    sp.add_argument("--sample-fraction", dest="sample_fraction", type=float, default=None,
                    help="ReliefF instance sampling fraction (default 0.10)")
    sp.add_argument("--top-n", dest="top_n", type=int, default=None,
                    help="candidate voxels kept after scoring (default 2500)")
    sp.add_argument("--rounds", type=int, default=None, help="boosting rounds (default 260)")
    sp.add_argument("--selection", choices=["error", "gain"], default=None,
                    help="per-round stump criterion (default error)")
    sp.add_argument("--train-fraction", dest="train_fraction", type=float, default=None,
                    help="train share per split (default 0.7)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxelboost",
        description="Valence decoding pipeline: ReliefF selection + boosted stumps "
                    "with leakage-safe CV, permutation tests, and stability maps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic planted-signal dataset")
    _add_common(sp, with_data=False)
    sp.add_argument("--participants", type=int, default=None)
    sp.add_argument("--features", type=int, default=None)
    sp.add_argument("--planted", type=int, default=None,
                    help="size of the planted voxel blob (default 0)")
    sp.add_argument("--effect", type=float, default=None,
                    help="standardized class separation at planted voxels (default 0)")
    sp.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=None)
    sp.add_argument("--offset-sigma", dest="offset_sigma", type=float, default=None,
                    help="per-participant scalar offset sd (default 0)")
    sp.add_argument("--sessions", type=int, default=None)
    sp.add_argument("--blocks-per-label", dest="blocks_per_label", type=int, default=None)
    sp.add_argument("--scans-per-block", dest="scans_per_block", type=int, default=None)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("inspect", help="print a dataset summary")
    _add_common(sp)
    sp.set_defaults(func=cmd_inspect)

    sp = sub.add_parser("cv", help="Monte Carlo cross-validation")
    _add_common(sp)
    sp.add_argument("--scheme", choices=["within", "cross"], required=True)
    sp.add_argument("--participant", type=int, default=None,
                    help="participant id (required for --scheme within)")
    sp.add_argument("--cycles", type=int, default=None,
                    help="CV cycles (default 100 within, 20 cross)")
    _add_pipeline_flags(sp)
    sp.set_defaults(func=cmd_cv)

    sp = sub.add_parser("permute", help="block-label permutation significance test")
    _add_common(sp)
    sp.add_argument("--scheme", choices=["within", "cross"], required=True)
    sp.add_argument("--participant", type=int, default=None)
    sp.add_argument("--cycles", type=int, default=None)
    sp.add_argument("--n-perm", dest="n_perm", type=int, default=None, required=True)
    _add_pipeline_flags(sp)
    sp.set_defaults(func=cmd_permute)

    sp = sub.add_parser("histomap", help="selection-frequency map across participants")
    _add_common(sp)
    sp.add_argument("--folds", type=int, default=100, help="selection folds per participant")
    sp.add_argument("--fwhm", type=float, default=None, help="smoothing FWHM in mm (default 6)")
    sp.add_argument("--select-n", dest="select_n", type=int, default=None,
                    help="voxels selected per fold (default: ReliefF top-n)")
    sp.add_argument("--map-top", dest="map_top", type=int, default=2500,
                    help="highest-valued voxels kept in the map")
    sp.add_argument("--min-cluster", dest="min_cluster", type=int, default=5,
                    help="smallest surviving cluster")
    sp.add_argument("--connectivity", type=int, choices=[6, 18, 26], default=6)
    _add_pipeline_flags(sp)
    sp.set_defaults(func=cmd_histomap)

    sp = sub.add_parser("correlate", help="correlate accuracies with behavior scores")
    sp.add_argument("--acc", required=True, help="TSV: participant, accuracy")
    sp.add_argument("--behavior", required=True, help="TSV: participant, score")
    sp.add_argument("--omit", type=int, action="append", default=None,
                    help="participant id to exclude (repeatable)")
    sp.add_argument("--out", default=None, help="optional JSON output path")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_correlate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataError as e:
        print(f"dataset error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
