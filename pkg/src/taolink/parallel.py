"""Per-video fan-out.

Workers receive the shared payload once through the pool initializer and
then only video ids travel over the pipe.  Results come back in input order,
so output is identical for any number of jobs.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Any, Callable, List, Sequence

_payload: Any = None


def _install(payload) -> None:
    global _payload
    _payload = payload


def _call(fn, video_id):
    return fn(_payload, video_id)


def per_video(fn: Callable[[Any, int], Any], payload, video_ids: Sequence[int],
              jobs: int = 1) -> List[Any]:
    """``[fn(payload, vid) for vid in video_ids]``, optionally across processes.

    ``fn`` must be a module-level function so it can be pickled.
    """
    video_ids = list(video_ids)
    if jobs <= 1 or len(video_ids) <= 1:
        return [fn(payload, vid) for vid in video_ids]
    with ProcessPoolExecutor(max_workers=min(jobs, len(video_ids)),
                             initializer=_install, initargs=(payload,)) as pool:
        return list(pool.map(partial(_call, fn), video_ids))


def renumber(per_video_tracks, start: int = 1) -> list:
    """Flatten per-video track lists and assign sequential ids in order."""
    out = []
    next_id = start
    for tracks in per_video_tracks:
        for t in tracks:
            t.track_id = next_id
            next_id += 1
            out.append(t)
    return out
