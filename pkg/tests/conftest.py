import numpy as np
import pytest

import boxmocap as bm
from boxmocap.quat import from_axis_angle, normalize


def random_rotation(rng):
    return normalize(rng.normal(size=4))


def random_box(rng, scale=1.0):
    extents = np.sort(rng.uniform(0.05, 0.5, size=3) * scale)[::-1]
    return bm.BoxPose(rng.normal(size=3), random_rotation(rng), extents)


def hinge_session(frames=10, angle_step=0.02, noise=0.0, occlude=(), seed=0):
    """Two rigid parts above a flat ground plane, rotating about z and drifting in x.

    `occlude` lists (frame, segment) pairs whose points and track positions are
    removed for that frame.
    """
    rng = np.random.default_rng(seed)
    ground = rng.uniform(-1.0, 1.0, size=(40, 3))
    ground[:, 1] = 0.0
    clouds = {
        1: rng.uniform(-0.1, 0.1, size=(6, 3)) + np.array([0.0, 0.5, 0.0]),
        2: rng.uniform(-0.1, 0.1, size=(6, 3)) + np.array([0.0, 1.0, 0.0]),
    }

    def xf(f):
        q = from_axis_angle(np.array([0.0, 0.0, 1.0]), angle_step * f)
        return bm.RigidTransform(rotation=q, translation=np.array([0.01 * f, 0.0, 0.0]))

    frame_arrays = []
    for f in range(frames):
        rows = [[p[0], p[1], p[2], 1.0, 0] for p in ground]
        for seg, cloud in clouds.items():
            if (f, seg) in occlude:
                continue
            moved = xf(f).apply(cloud)
            if noise:
                moved = moved + rng.normal(scale=noise, size=moved.shape)
            rows.extend([[p[0], p[1], p[2], 0.9, seg] for p in moved])
        frame_arrays.append(np.asarray(rows, dtype=np.float64))

    tracks, tid = [], 0
    for seg, cloud in clouds.items():
        for p in cloud:
            pos = np.full((frames, 3), np.nan)
            vis = np.zeros(frames, dtype=bool)
            for f in range(frames):
                if (f, seg) in occlude:
                    continue
                pos[f] = xf(f).apply(p[None])[0]
                vis[f] = True
            tracks.append(bm.Track(tid, seg, pos, vis))
            tid += 1

    return bm.CaptureSession(20.0, frame_arrays, tracks, 0), xf


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def walk_motion():
    return bm.gen_procedural_motion("walk", bm.ProceduralConfig(seed=3), 0)
