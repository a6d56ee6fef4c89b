"""Reading and writing detection files, embedding sidecars, ground truth and
track results.

Detection file (JSON)::

    {"videos": [{"id", "name", "image_ids": [...], "fps"}],
     "images": [{"id", "video_id", "frame_index"}],
     "categories": [...],                      # optional
     "detections": [{"det_id", "image_id", "bbox": [x, y, w, h], "score",
                     "category_id", "embedding_offset"?, "embedding"?}],
     "embedding_meta": {"dim", "count", "sidecar", "dtype": "f32le"}}

Embedding sidecar: 16-byte header (``b"EMB1"``, u32 dim, u32 count, 4 zero
bytes) followed by ``count * dim`` little-endian float32 values.

Ground-truth file: ``videos`` and ``images`` as above plus ``tracks``, each
``{"gt_track_id", "video_id", "category_id", "boxes": [{"image_id", "bbox"}]}``.

Result file: JSON list of ``{image_id, video_id, category_id, bbox, score,
track_id}``, one record per track member.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    HeaderMismatchError,
    OverlapError,
    ParseError,
    RefError,
)
from .model import (
    BoundingBox,
    Detection,
    EmbeddingStore,
    GroundTruthTrack,
    Member,
    SequenceDataset,
    Track,
    Video,
)

MAGIC = b"EMB1"
HEADER = struct.Struct("<4sII4x")
DTYPE_TAG = "f32le"


# -- low level helpers ------------------------------------------------------

def _read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror or exc})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> bytes:
    return (json.dumps(obj, indent=1) + "\n").encode()


def _field(rec: dict, key: str, where: str):
    try:
        return rec[key]
    except (KeyError, TypeError):
        raise ParseError(f"{where}: missing field '{key}'") from None


def _int(rec: dict, key: str, where: str) -> int:
    val = _field(rec, key, where)
    if isinstance(val, bool) or not isinstance(val, int):
        raise ParseError(f"{where}: field '{key}' must be an integer, got {val!r}")
    return val


def _bbox(rec: dict, where: str) -> BoundingBox:
    raw = _field(rec, "bbox", where)
    if not isinstance(raw, list) or len(raw) != 4:
        raise ParseError(f"{where}: bbox must be a list of 4 numbers, got {raw!r}")
    try:
        return BoundingBox.from_xywh(raw)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: {exc}") from exc


def _list(doc: dict, key: str, where: str) -> list:
    val = doc.get(key, [])
    if not isinstance(val, list):
        raise ParseError(f"{where}: '{key}' must be a list")
    return val


# -- sidecar ---------------------------------------------------------------

def read_sidecar(path) -> EmbeddingStore:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror or exc})") from exc
    if len(blob) < HEADER.size:
        raise ParseError(f"{path}: byte 0: truncated header ({len(blob)} bytes)")
    magic, dim, count = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ParseError(f"{path}: byte 0: bad magic {magic!r}")
    if dim == 0:
        raise ParseError(f"{path}: byte 4: dim must be positive")
    expected = HEADER.size + count * dim * 4
    if len(blob) != expected:
        raise ParseError(f"{path}: byte {min(len(blob), expected)}: size {len(blob)} != "
                         f"16 + {count}*{dim}*4 = {expected}")
    rows = np.frombuffer(blob, dtype="<f4", offset=HEADER.size).reshape(count, dim)
    try:
        return EmbeddingStore(rows.copy())
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def sidecar_bytes(store: EmbeddingStore) -> bytes:
    return HEADER.pack(MAGIC, store.dim, len(store)) + store.raw.astype("<f4").tobytes()


def write_sidecar(store: EmbeddingStore, path) -> None:
    atomic_write_bytes(path, sidecar_bytes(store))


# -- datasets ----------------------------------------------------------------

def _parse_videos(doc: dict, where: str) -> List[Video]:
    videos = []
    for k, rec in enumerate(_list(doc, "videos", where)):
        loc = f"{where}: videos[{k}]"
        image_ids = _field(rec, "image_ids", loc)
        if not isinstance(image_ids, list) or not all(isinstance(i, int) for i in image_ids):
            raise ParseError(f"{loc}: image_ids must be a list of integers")
        videos.append(Video(_int(rec, "id", loc), str(rec.get("name", "")), tuple(image_ids),
                            float(rec.get("fps", 1.0))))
    images = _list(doc, "images", where)
    placement = {}
    for v in videos:
        for fi, image_id in enumerate(v.image_ids):
            placement[image_id] = (v.video_id, fi)
    seen = set()
    for k, rec in enumerate(images):
        loc = f"{where}: images[{k}]"
        image_id = _int(rec, "id", loc)
        where_in_video = (_int(rec, "video_id", loc), _int(rec, "frame_index", loc))
        if placement.get(image_id) != where_in_video:
            raise RefError(f"{loc}: image {image_id} at {where_in_video} does not match the "
                           f"video frame lists")
        seen.add(image_id)
    missing = set(placement) - seen
    if missing:
        raise RefError(f"{where}: video lists image {min(missing)} absent from 'images'")
    return videos


def _parse_ground_truth(doc: dict, images: Dict[int, Tuple[int, int]], where: str):
    tracks = []
    for k, rec in enumerate(_list(doc, "tracks", where)):
        loc = f"{where}: tracks[{k}]"
        video_id = _int(rec, "video_id", loc)
        boxes = {}
        for b, brec in enumerate(_field(rec, "boxes", loc)):
            bloc = f"{loc}.boxes[{b}]"
            image_id = _int(brec, "image_id", bloc)
            if image_id not in images:
                raise RefError(f"{bloc}: unknown image_id {image_id}")
            vid, fi = images[image_id]
            if vid != video_id:
                raise RefError(f"{bloc}: image {image_id} belongs to video {vid}, not {video_id}")
            if fi in boxes:
                raise OverlapError(f"{bloc}: two boxes on image {image_id}")
            boxes[fi] = _bbox(brec, bloc)
        if not boxes:
            raise ParseError(f"{loc}: ground-truth track has no boxes")
        tracks.append(GroundTruthTrack(_int(rec, "gt_track_id", loc), video_id,
                                       _int(rec, "category_id", loc), boxes))
    return tracks


def load_ground_truth(path) -> SequenceDataset:
    """Standalone ground-truth file -> dataset with no detections."""
    doc = _read_json(path)
    where = str(path)
    if not isinstance(doc, dict):
        raise ParseError(f"{where}: top level must be an object")
    videos = _parse_videos(doc, where)
    images = {i: (v.video_id, fi) for v in videos for fi, i in enumerate(v.image_ids)}
    gt = _parse_ground_truth(doc, images, where)
    try:
        return SequenceDataset(videos, (), gt, doc.get("categories"))
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from exc


def load_dataset(detection_path, sidecar_path=None, ground_truth_path=None,
                 embeddings: bool = True) -> Tuple[SequenceDataset, Optional[EmbeddingStore]]:
    """Load a detection file plus optional sidecar and ground truth.

    Loading is strict: every cross reference must resolve.  When the file
    carries ``embedding_meta`` with a sidecar name and ``sidecar_path`` is
    omitted, the sidecar is looked up next to the detection file.  The store
    is ``None`` when no detection carries an embedding.  ``embeddings=False``
    skips embedding data entirely (frames, boxes and scores only).
    """
    where = str(detection_path)
    doc = _read_json(detection_path)
    if not isinstance(doc, dict):
        raise ParseError(f"{where}: top level must be an object")
    videos = _parse_videos(doc, where)
    images = {i: (v.video_id, fi) for v in videos for fi, i in enumerate(v.image_ids)}

    raw_dets = _list(doc, "detections", where)
    if not embeddings:
        raw_dets = [{k: v for k, v in r.items() if k not in ("embedding", "embedding_offset")}
                    if isinstance(r, dict) else r for r in raw_dets]
    inline = any(isinstance(r, dict) and "embedding" in r for r in raw_dets)
    offsets = any(isinstance(r, dict) and "embedding_offset" in r for r in raw_dets)
    meta = doc.get("embedding_meta") if embeddings else None

    if sidecar_path is None and meta and offsets:
        name = meta.get("sidecar") if isinstance(meta, dict) else None
        if name:
            sidecar_path = Path(detection_path).parent / name
    if inline and (sidecar_path is not None or offsets):
        raise ParseError(f"{where}: detections carry inline embeddings and a sidecar; use one")

    store = None
    if sidecar_path is not None:
        store = read_sidecar(sidecar_path)
        if isinstance(meta, dict):
            if "dim" in meta and meta["dim"] != store.dim:
                raise HeaderMismatchError(
                    f"{sidecar_path}: sidecar dim {store.dim} != embedding_meta.dim {meta['dim']}")
            if "count" in meta and meta["count"] != len(store):
                raise HeaderMismatchError(
                    f"{sidecar_path}: sidecar count {len(store)} != embedding_meta.count {meta['count']}")
            if meta.get("dtype", DTYPE_TAG) != DTYPE_TAG:
                raise HeaderMismatchError(f"{where}: unsupported embedding dtype {meta.get('dtype')!r}")
    elif offsets:
        raise RefError(f"{where}: detections reference embedding offsets but no sidecar was given")

    inline_rows = []
    dets = []
    for k, rec in enumerate(raw_dets):
        loc = f"{where}: detections[{k}]"
        image_id = _int(rec, "image_id", loc)
        if image_id not in images:
            raise RefError(f"{loc}: unknown image_id {image_id}")
        video_id, frame_index = images[image_id]
        ref = None
        if "embedding_offset" in rec:
            ref = _int(rec, "embedding_offset", loc)
            if not 0 <= ref < len(store):
                raise RefError(f"{loc}: embedding_offset {ref} outside sidecar (count={len(store)})")
        elif "embedding" in rec:
            vec = rec["embedding"]
            if not isinstance(vec, list) or not vec:
                raise ParseError(f"{loc}: embedding must be a non-empty list")
            ref = len(inline_rows)
            inline_rows.append(vec)
        score = _field(rec, "score", loc)
        try:
            dets.append(Detection(_int(rec, "det_id", loc), video_id, frame_index, image_id,
                                  _bbox(rec, loc), _int(rec, "category_id", loc), float(score), ref))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{loc}: {exc}") from exc

    if inline_rows:
        dims = {len(r) for r in inline_rows}
        if len(dims) != 1:
            raise ParseError(f"{where}: inline embeddings have mixed dimensions {sorted(dims)}")
        if isinstance(meta, dict) and "dim" in meta and meta["dim"] not in dims:
            raise HeaderMismatchError(f"{where}: inline dim {dims.pop()} != embedding_meta.dim {meta['dim']}")
        try:
            store = EmbeddingStore(np.array(inline_rows, dtype=np.float32))
        except ValueError as exc:
            raise ParseError(f"{where}: {exc}") from exc

    gt = None
    if ground_truth_path is not None:
        gt_doc = _read_json(ground_truth_path)
        gwhere = str(ground_truth_path)
        if not isinstance(gt_doc, dict):
            raise ParseError(f"{gwhere}: top level must be an object")
        if "videos" in gt_doc and _parse_videos(gt_doc, gwhere) != videos:
            raise RefError(f"{gwhere}: videos differ from {where}")
        gt = _parse_ground_truth(gt_doc, images, gwhere)

    try:
        dataset = SequenceDataset(videos, dets, gt, doc.get("categories"))
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from exc
    return dataset, store


def _videos_doc(dataset: SequenceDataset) -> dict:
    videos = [{"id": v.video_id, "name": v.name, "image_ids": list(v.image_ids), "fps": v.fps}
              for v in dataset.videos.values()]
    images = [{"id": i, "video_id": v.video_id, "frame_index": fi}
              for v in dataset.videos.values() for fi, i in enumerate(v.image_ids)]
    return {"videos": videos, "images": images, "categories": list(dataset.categories)}


def detection_document(dataset: SequenceDataset, store: Optional[EmbeddingStore] = None,
                       sidecar_name: Optional[str] = None) -> dict:
    doc = _videos_doc(dataset)
    dets = []
    for d in dataset.detections:
        rec = {"det_id": d.det_id, "image_id": d.image_id, "bbox": d.box.as_list(),
               "score": d.score, "category_id": d.category_id}
        if d.embedding_ref is not None:
            if store is None:
                raise ValueError(f"detection {d.det_id} has an embedding but no store was given")
            rec["embedding_offset"] = d.embedding_ref
        dets.append(rec)
    doc["detections"] = dets
    if store is not None:
        doc["embedding_meta"] = {"dim": store.dim, "count": len(store),
                                 "sidecar": sidecar_name, "dtype": DTYPE_TAG}
    return doc


def ground_truth_document(dataset: SequenceDataset) -> dict:
    doc = _videos_doc(dataset)
    tracks = []
    for g in dataset.ground_truth or ():
        v = dataset.video(g.video_id)
        tracks.append({"gt_track_id": g.gt_track_id, "video_id": g.video_id,
                       "category_id": g.category_id,
                       "boxes": [{"image_id": v.image_ids[fi], "bbox": g.boxes[fi].as_list()}
                                 for fi in sorted(g.boxes)]})
    doc["tracks"] = tracks
    return doc


def write_dataset(dataset: SequenceDataset, store: Optional[EmbeddingStore], detection_path,
                  sidecar_path=None, ground_truth_path=None) -> None:
    """Write the detection file, its sidecar and (optionally) ground truth."""
    if store is not None and sidecar_path is None:
        sidecar_path = Path(detection_path).with_suffix(".emb")
    name = Path(sidecar_path).name if store is not None else None
    atomic_write_bytes(detection_path, dumps_json(detection_document(dataset, store, name)))
    if store is not None:
        write_sidecar(store, sidecar_path)
    if ground_truth_path is not None:
        atomic_write_bytes(ground_truth_path, dumps_json(ground_truth_document(dataset)))


# -- results ---------------------------------------------------------------

def result_records(tracks: Iterable[Track]) -> List[dict]:
    records = []
    for t in sorted(tracks, key=lambda t: (t.video_id, t.track_id)):
        for m in t.members:
            records.append({"image_id": m.image_id, "video_id": t.video_id,
                            "category_id": t.category_id, "bbox": m.box.as_list(),
                            "score": m.score, "track_id": t.track_id})
    keys = [(r["video_id"], r["track_id"], r["image_id"]) for r in records]
    if len(set(keys)) != len(keys):
        raise OverlapError("duplicate (video_id, track_id, image_id) in results; "
                           "track ids must be unique per video")
    return records


def results_bytes(tracks: Iterable[Track]) -> bytes:
    records = result_records(tracks)
    if not records:
        return b"[]\n"
    body = ",\n".join(json.dumps(r) for r in records)
    return ("[\n" + body + "\n]\n").encode()


def write_results(tracks: Iterable[Track], path) -> None:
    """One record per track member, ordered by (video_id, track_id, frame)."""
    atomic_write_bytes(path, results_bytes(tracks))


def read_results(path, dataset: SequenceDataset,
                 store: Optional[EmbeddingStore] = None) -> List[Track]:
    """Inverse of :func:`write_results`.

    Each record is tied back to the detection on the same image with the same
    box and category when one exists (smallest unclaimed ``det_id`` wins), so
    members regain their ``det_id`` and, given ``store``, their embedding.
    """
    where = str(path)
    doc = _read_json(path)
    if not isinstance(doc, list):
        raise ParseError(f"{where}: result file must be a JSON list")

    lookup: Dict[tuple, List[Detection]] = {}
    for d in sorted(dataset.detections, key=lambda d: d.det_id):
        lookup.setdefault((d.image_id, d.category_id, tuple(d.box.as_list())), []).append(d)

    tracks: Dict[Tuple[int, int], Track] = {}
    for k, rec in enumerate(doc):
        loc = f"{where}: record {k}"
        image_id = _int(rec, "image_id", loc)
        video_id = _int(rec, "video_id", loc)
        track_id = _int(rec, "track_id", loc)
        category_id = _int(rec, "category_id", loc)
        box = _bbox(rec, loc)
        score = _field(rec, "score", loc)
        if isinstance(score, bool) or not isinstance(score, (int, float)) or not 0 <= score <= 1:
            raise ParseError(f"{loc}: score must be a number in [0, 1], got {score!r}")
        if image_id not in dataset.images:
            raise RefError(f"{loc}: unknown image_id {image_id}")
        vid, fi = dataset.images[image_id]
        if vid != video_id:
            raise RefError(f"{loc}: image {image_id} belongs to video {vid}, not {video_id}")

        det = None
        candidates = lookup.get((image_id, category_id, tuple(box.as_list())))
        if candidates:
            det = candidates.pop(0)
        emb = None
        if det is not None and store is not None and det.embedding_ref is not None:
            emb = store[det.embedding_ref]

        track = tracks.get((video_id, track_id))
        if track is None:
            track = tracks[(video_id, track_id)] = Track(track_id, video_id, category_id)
        elif track.category_id != category_id:
            raise ParseError(f"{loc}: track {track_id} mixes categories "
                             f"{track.category_id} and {category_id}")
        try:
            track.add(Member(fi, image_id, box, float(score),
                             None if det is None else det.det_id, emb))
        except OverlapError as exc:
            raise OverlapError(f"{loc}: {exc}") from exc
    return [tracks[k] for k in sorted(tracks)]


def read_whitelist(path) -> set:
    """Newline separated category ids; blank lines and ``#`` comments ignored."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror or exc})") from exc
    ids = set()
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            ids.add(int(line))
        except ValueError:
            raise ParseError(f"{path}:{n}: not a category id: {line!r}") from None
    return ids
