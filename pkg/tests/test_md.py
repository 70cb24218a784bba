import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torusnet import md
from torusnet.config import SimConfig


def test_trajectory_round_trip(tmp_path):
    traj = md.gen_trajectory(17, 3, seed=4)
    path = tmp_path / "t.traj"
    traj.write(path)
    back = md.Trajectory.read(path)
    assert np.array_equal(back.static, traj.static)
    assert np.array_equal(back.positions, traj.positions)


def test_trajectory_rejects_truncation():
    buf = io.BytesIO()
    md.gen_trajectory(4, 2).write(buf)
    raw = buf.getvalue()
    with pytest.raises(ValueError):
        md.Trajectory.read(io.BytesIO(raw[:-1]))
    with pytest.raises(ValueError):
        md.Trajectory.read(io.BytesIO(b"XXXX" + raw[4:]))


@settings(max_examples=20, deadline=None)
@given(max_step=st.integers(0, 1 << 12), box_bits=st.integers(8, 20), seed=st.integers(0, 1000))
def test_displacement_bounded(max_step, box_bits, seed):
    traj = md.gen_trajectory(8, 5, max_step=max_step, box_bits=box_bits, seed=seed)
    box = 1 << box_bits
    pos = traj.positions.astype(np.int64)
    assert pos.min() >= -box // 2 and pos.max() < box // 2
    d = np.abs(np.diff(pos, axis=0))
    assert np.minimum(d, box - d).max(initial=0) <= max_step


def test_bad_parameters():
    with pytest.raises(ValueError):
        md.gen_trajectory(0, 1)
    with pytest.raises(ValueError):
        md.gen_trajectory(1, 1, max_step=4, init_velocity=5)


def test_placement_contiguous(small_cfg):
    from torusnet.topology import Geometry

    p = md.Placement(Geometry(small_cfg), 16)
    assert [gc[1] for gc in p.home] == [i // 2 for i in range(16)]
    assert 0 not in p.neighbors[0]


def test_sim_and_replay_agree(small_cfg):
    traj = md.gen_trajectory(64, 4, seed=1)
    sim = md.run_md_traffic(small_cfg, traj)
    rows = md.replay_compress(small_cfg, traj)
    got = [(s["raw"]["POSITION"], s["wire"]["POSITION"]) for s in sim.stats.md_steps]
    assert got == [(r["raw"], r["wire"]) for r in rows]
    assert sim.stats.conservation_ok()


def test_inz_only_reduction(small_cfg):
    cfg = small_cfg.model_copy(update={"pcache": False})
    traj = md.gen_trajectory(256, 3, seed=2)
    rows = md.replay_compress(cfg, traj)
    raw = sum(r["raw"] for r in rows)
    wire = sum(r["wire"] for r in rows)
    assert 1 - wire / raw >= 0.25


def test_frame_dump_written(small_cfg, tmp_path):
    from torusnet.inz import read_frame_dump

    md.replay_compress(small_cfg, md.gen_trajectory(16, 2), frames_out=tmp_path)
    dumps = sorted(tmp_path.glob("*.inzf"))
    assert dumps
    with open(dumps[0], "rb") as fh:
        frame_bytes, frames = read_frame_dump(fh)
    assert frame_bytes == small_cfg.frame_bytes
    assert all(len(f) == frame_bytes for f in frames)
