"""Command line front end: ``taolink {synth,track,pa,merge,eval}``.

Every command is a pure function of its inputs and flags, writes its outputs
atomically and leaves a ``*.manifest.json`` beside them.  Exit codes: 0 ok,
1 input error, 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import List, Optional

from . import __version__
from .assoc import AssocConfig, track_dataset
from .errors import ConfigError, InputError, TaoLinkError
from .eval import evaluate, oracle_tracks
from .ingest import (
    atomic_write_bytes,
    dumps_json,
    load_dataset,
    load_ground_truth,
    read_results,
    read_whitelist,
    write_dataset,
    write_results,
)
from .parallel import per_video
from .postproc import PaConfig, concat_stores, filter_dataset, merge_ensembles, post_associate
from .sortbase import SortConfig, project_tracks, sort_track_dataset
from .synth import Gap, ScenarioSpec, fragment_tracks, generate


def manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".manifest.json")


def write_manifest(path, command: str, config: dict, inputs: dict, outputs: dict,
                   started: float, seeds=()) -> None:
    doc = {
        "command": command,
        "config": config,
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "version": __version__,
        "seeds": list(seeds),
        "duration_s": round(time.perf_counter() - started, 6),
    }
    atomic_write_bytes(path, dumps_json(doc))


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    # a manifest can be fed back in as the config of a rerun
    if "config" in doc and "command" in doc:
        doc = doc["config"]
    return doc


def _override(base: dict, **flags) -> dict:
    out = dict(base)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


# -- commands --------------------------------------------------------------

def cmd_synth(args) -> int:
    started = time.perf_counter()
    spec_doc = _read_config(args.spec)
    spec_doc = spec_doc.get("scenario", spec_doc)
    for item in args.set or ():
        key, _, raw = item.partition("=")
        if not _:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            spec_doc[key] = json.loads(raw)
        except json.JSONDecodeError:
            spec_doc[key] = raw
    if args.seed is not None:
        spec_doc["seed"] = args.seed
    if args.full_rate:
        spec_doc["full_rate"] = True
    spec = ScenarioSpec.from_dict(spec_doc)
    gaps = [_parse_gap(g) for g in args.gap or ()]

    dataset, store = generate(spec)
    dataset = fragment_tracks(dataset, gaps)
    out = Path(args.out_dir)
    dets, emb, gt = out / "dets.json", out / "dets.emb", out / "gt.json"
    write_dataset(dataset, store, dets, emb, gt)
    atomic_write_bytes(out / "scenario.json", dumps_json(spec.to_dict()))
    config = {"scenario": spec.to_dict(), "gaps": [list(_gap_tuple(g)) for g in gaps]}
    write_manifest(out / "manifest.json", "synth", config, {},
                   {"dets": dets, "emb": emb, "gt": gt}, started, [spec.seed])
    return 0


def _gap_tuple(g: Gap):
    return (g.video_id, g.start, g.stop)


def _parse_gap(text: str) -> Gap:
    try:
        vid, start, stop = (int(p) for p in text.split(":"))
    except ValueError:
        raise ConfigError(f"--gap expects VIDEO:START:STOP, got {text!r}") from None
    return Gap(vid, start, stop)


def _load_with_embeddings(args):
    dataset, store = load_dataset(args.dets, args.emb)
    if args.emb2 is not None:
        if store is None:
            raise ConfigError("--emb2 needs a first embedding source (--emb)")
        _, store2 = load_dataset(args.dets, args.emb2)
        store = concat_stores(store, store2)
    return dataset, store


def cmd_track(args) -> int:
    started = time.perf_counter()
    file_cfg = _read_config(args.config)
    tracker = args.tracker or file_cfg.get("tracker", "appearance")
    if tracker not in ("appearance", "sort"):
        raise ConfigError(f"unknown tracker {tracker!r}")
    nested = "appearance" in file_cfg or "sort" in file_cfg
    base = file_cfg.get(tracker, {}) if nested else {k: v for k, v in file_cfg.items()
                                                     if k not in ("tracker", "whitelist")}
    if tracker == "appearance":
        cfg = AssocConfig.from_dict(_override(base, max_cosine_distance=args.gate,
                                              gallery_budget=args.gallery, max_age=args.max_age))
        if args.emb is None and args.emb2 is not None:
            raise ConfigError("--emb2 needs --emb")
        dataset, store = _load_with_embeddings(args)
        if store is None:
            raise ConfigError("appearance tracker needs embeddings: pass --emb (sidecar) or a "
                              "detection file with inline embeddings")
    else:
        cfg = SortConfig.from_dict(_override(base, max_age=args.max_age))
        dataset, store = load_dataset(args.dets, embeddings=False)

    whitelist = args.whitelist or (file_cfg.get("whitelist") if not nested else None)
    if whitelist:
        dataset = filter_dataset(dataset, read_whitelist(whitelist))

    if tracker == "appearance":
        tracks = track_dataset(dataset, store, cfg, jobs=args.jobs)
    else:
        tracks = sort_track_dataset(dataset, cfg, jobs=args.jobs)

    if args.grid is not None:
        grid, _ = load_dataset(args.grid, embeddings=False)
        tracks = project_tracks(tracks, dataset, grid)

    write_results(tracks, args.out)
    config = {"tracker": tracker, tracker: cfg.to_dict(),
              "whitelist": None if whitelist is None else str(whitelist)}
    write_manifest(manifest_path(args.out), "track", config,
                   {"dets": args.dets, "emb": args.emb, "emb2": args.emb2, "grid": args.grid},
                   {"results": args.out}, started, [args.seed] if args.seed is not None else [])
    return 0


def _pa_one(payload, video_id):
    tracks, cfg = payload
    return post_associate([t for t in tracks if t.video_id == video_id], cfg)


def cmd_pa(args) -> int:
    started = time.perf_counter()
    file_cfg = _read_config(args.config)
    cfg = PaConfig.from_dict(_override(file_cfg, similarity_threshold=args.tau, max_gap=args.max_gap))
    dataset, store = _load_with_embeddings(args)
    tracks = read_results(args.results, dataset, store)
    videos = sorted({t.video_id for t in tracks})
    out = [t for chunk in per_video(_pa_one, (tracks, cfg), videos, args.jobs) for t in chunk]
    write_results(out, args.out)
    write_manifest(manifest_path(args.out), "pa", cfg.to_dict(),
                   {"results": args.results, "dets": args.dets, "emb": args.emb, "emb2": args.emb2},
                   {"results": args.out}, started)
    return 0


def _frames(path):
    with open(path) as fh:
        head = json.load(fh)
    if isinstance(head, dict) and "tracks" in head and "detections" not in head:
        return load_ground_truth(path)
    return load_dataset(path, embeddings=False)[0]


def cmd_merge(args) -> int:
    started = time.perf_counter()
    dedup = args.dedup_iou if args.dedup_iou is not None else _read_config(args.config).get("dedup_iou")
    if dedup is not None and not 0.0 < dedup <= 1.0:
        raise ConfigError(f"--dedup-iou must be in (0, 1], got {dedup}")
    ref = args.dets or args.gt
    if ref is None:
        raise ConfigError("merge needs --dets or --gt to resolve image ids")
    dataset = _frames(ref)
    a = read_results(args.results_a, dataset)
    b = read_results(args.results_b, dataset)
    write_results(merge_ensembles(a, b, dedup), args.out)
    write_manifest(manifest_path(args.out), "merge", {"dedup_iou": dedup},
                   {"results_a": args.results_a, "results_b": args.results_b, "frames": ref},
                   {"results": args.out}, started)
    return 0


def cmd_eval(args) -> int:
    started = time.perf_counter()
    gt_data = load_ground_truth(args.gt)
    if args.oracle:
        if args.dets is None:
            raise ConfigError("--oracle needs --dets")
        dataset, store = load_dataset(args.dets, ground_truth_path=args.gt, embeddings=False)
        pred = oracle_tracks(dataset)
    else:
        if args.results is None:
            raise ConfigError("eval needs a results file (or --oracle with --dets)")
        pred = read_results(args.results, gt_data)
    report = evaluate(pred, gt_data.ground_truth, args.iou_thresh, oracle=args.oracle)
    print(report.table())
    if args.out is not None:
        atomic_write_bytes(args.out, dumps_json(report.to_dict()))
        write_manifest(manifest_path(args.out), "eval",
                       {"iou_thresh": args.iou_thresh, "oracle": args.oracle},
                       {"results": args.results, "gt": args.gt, "dets": args.dets},
                       {"report": args.out}, started)
    return 0


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taolink", description="Appearance-only multi-object tracking.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic scenario")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--spec", help="ScenarioSpec JSON")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one spec field")
    s.add_argument("--full-rate", action="store_true", help="detections on every world frame")
    s.add_argument("--gap", action="append", metavar="VIDEO:START:STOP",
                   help="delete true detections on frames [START, STOP) to fragment tracks")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("track", help="link detections into tracks")
    t.add_argument("--dets", required=True)
    t.add_argument("--emb")
    t.add_argument("--emb2", help="second embedding sidecar, concatenated with --emb")
    t.add_argument("--out", required=True)
    t.add_argument("--tracker", choices=("appearance", "sort"))
    t.add_argument("--gate", type=float, help="max cosine distance for a match")
    t.add_argument("--gallery", type=int, help="gallery budget per track")
    t.add_argument("--max-age", type=int)
    t.add_argument("--whitelist", help="file of allowed category ids")
    t.add_argument("--grid", help="project output onto the frames of this detection file")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--jobs", type=int, default=1)
    t.set_defaults(func=cmd_track)

    a = sub.add_parser("pa", help="post-associate tracklets")
    a.add_argument("results")
    a.add_argument("--dets", required=True)
    a.add_argument("--emb")
    a.add_argument("--emb2")
    a.add_argument("--out", required=True)
    a.add_argument("--tau", type=float)
    a.add_argument("--max-gap", type=int)
    a.add_argument("--config")
    a.add_argument("--jobs", type=int, default=1)
    a.set_defaults(func=cmd_pa)

    m = sub.add_parser("merge", help="mix two result files")
    m.add_argument("results_a")
    m.add_argument("results_b")
    m.add_argument("--dets")
    m.add_argument("--gt")
    m.add_argument("--out", required=True)
    m.add_argument("--dedup-iou", type=float)
    m.add_argument("--config")
    m.set_defaults(func=cmd_merge)

    e = sub.add_parser("eval", help="track mAP against ground truth")
    e.add_argument("results", nargs="?")
    e.add_argument("--gt", required=True)
    e.add_argument("--dets", help="detections for --oracle")
    e.add_argument("--oracle", action="store_true")
    e.add_argument("--iou-thresh", type=float, default=0.5)
    e.add_argument("--out", help="write the report as JSON")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"taolink {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (InputError, OSError) as exc:
        print(f"taolink {args.command}: input error: {exc}", file=sys.stderr)
        return 1
    except TaoLinkError as exc:
        print(f"taolink {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
