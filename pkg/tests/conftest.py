"""Shared helpers: a simple projection matrix and detection/observation builders."""

import numpy as np

from seqlabel.association import Observation, Track, lift_detection
from seqlabel.dataio import DetectionRecord
from seqlabel.geometry import Box2D, Dimensions3D, Pose, ProjectionMatrix

P_SIMPLE = ProjectionMatrix(
    np.array([[700.0, 0, 600, 0], [0, 700, 180, 0], [0, 0, 1, 0]])
)


def make_detection(
    frame_id=0,
    depth=20.0,
    yaw=0.1,
    u=600.0,
    v=180.0,
    score=0.9,
    sigma=None,
    category="Car",
    dims=(1.5, 1.7, 4.2),
    box=None,
    descriptor=None,
    gt_id=None,
) -> DetectionRecord:
    if box is None:
        # A plausible box around the projected center; tests that care about
        # exact boxes pass their own.
        half_w = 700.0 * dims[2] / (2.0 * max(abs(depth), 1e-6))
        half_h = 700.0 * dims[0] / (2.0 * max(abs(depth), 1e-6))
        box = Box2D(u - half_w, v - half_h, u + half_w, v + half_h)
    return DetectionRecord(
        frame_id=frame_id,
        category=category,
        box2d=box,
        depth=depth,
        yaw=yaw,
        dims=Dimensions3D(*dims),
        center2d=(u, v),
        score=score,
        sigma=sigma,
        descriptor=None if descriptor is None else np.asarray(descriptor, dtype=float),
        gt_id=gt_id,
    )


def make_observation(cam: Pose | None = None, **kwargs) -> Observation:
    return lift_detection(make_detection(**kwargs), P_SIMPLE, cam or Pose.identity())


def make_track(observations, track_id=0) -> Track:
    track = Track(track_id=track_id)
    for obs in observations:
        track.add(obs)
    return track
