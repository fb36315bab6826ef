import struct

import numpy as np
import pytest
import yaml

from battrack.config import ConfigError, DESK_PRESET, Fusion, build_configs, config_to_dict, load_config
from battrack.dataio import (
    FormatError, TrackSequence, evaluable, kitti_label_to_box7, load_dataset, parse_annotations, read_annotations,
    read_velodyne_scan, save_dataset, split_train_test, write_annotations, write_velodyne_scan,
)
from battrack.geometry import Box7, box_points
from battrack.nn import MLP, CheckpointError, assign_parameters, load_checkpoint, save_checkpoint


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path, rng):
    arrays = {"a.w0": rng.normal(size=(3, 4)), "a.b0": rng.normal(size=4), "scalar": np.array(2.5)}
    save_checkpoint(tmp_path / "m.ckpt", arrays)
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert list(back) == list(arrays)
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])


def test_checkpoint_layout(tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", {"x": np.array([[1.0, 2.0]])})
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:8] == b"BATCKPT1"
    assert struct.unpack("<I", raw[8:12]) == (1,) and raw[12:13] == b"x"
    assert struct.unpack("<III", raw[13:25]) == (2, 1, 2)
    assert np.frombuffer(raw[25:], "<f8").tolist() == [1.0, 2.0]


def test_checkpoint_errors(tmp_path, rng):
    (tmp_path / "bad").write_bytes(b"NOTMAGIC")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad")
    save_checkpoint(tmp_path / "m.ckpt", {"x": np.ones(4)})
    (tmp_path / "trunc").write_bytes((tmp_path / "m.ckpt").read_bytes()[:-3])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "trunc")
    params = MLP(2, (3,), rng).named_parameters("m")
    with pytest.raises(CheckpointError):
        assign_parameters(params, {"m.w0": np.ones((2, 3))})
    with pytest.raises(CheckpointError):
        assign_parameters(params, {"m.w0": np.ones((3, 3)), "m.b0": np.ones(3)})


def test_mlp_zero_last_and_names(rng):
    mlp = MLP(4, (5, 2), rng, zero_last=True)
    names = mlp.named_parameters("p")
    assert set(names) == {"p.w0", "p.b0", "p.w1", "p.b1"}
    assert not np.any(names["p.w1"].data) and not np.any(names["p.b1"].data)


# ---------------------------------------------------------------- config

def test_config_defaults_and_preset(tmp_path):
    tcfg, rcfg = build_configs()
    assert (tcfg.k, tcfg.n_template_points, tcfg.n_search_points, tcfg.search_margin) == (4, 512, 1024, 2.0)
    assert (rcfg.lam, rcfg.lr, rcfg.epochs, rcfg.batch_size) == (1.0, 0.001, 60, 96)
    desk, _ = build_configs({"preset": "desk", "k": 2})
    assert desk.k == 2 and desk.n_search_points == DESK_PRESET["n_search_points"]
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"preset": "desk", "fusion": "vanilla", "seed": 5}))
    tcfg, rcfg = load_config(path, {"epochs": 3})
    assert tcfg.fusion is Fusion.VANILLA and tcfg.seed == 5 and rcfg.seed == 5 and rcfg.epochs == 3


def test_config_round_trip_through_dict():
    tcfg, rcfg = build_configs({"preset": "desk", "template_strategy": "previous"})
    again = build_configs(config_to_dict(tcfg, rcfg))
    assert again == (tcfg, rcfg)


@pytest.mark.parametrize("values", [{"nope": 1}, {"k": 0}, {"fusion": "magic"}, {"lam": -1},
                                    {"preset": "huge"}, {"boxcloud_variant": "polar"}])
def test_config_errors(values):
    with pytest.raises(ConfigError):
        build_configs(values)


def test_config_file_errors(tmp_path):
    (tmp_path / "nested.yaml").write_text("k: 4\nsub: {a: 1}\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nested.yaml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


# ---------------------------------------------------------------- scans and annotations

def test_scan_read(tmp_path):
    rec = np.array([[1, 2, 3, 0.5], [4, 5, 6, 0.1]], dtype="<f4")
    (tmp_path / "a.bin").write_bytes(rec.tobytes())
    np.testing.assert_array_equal(read_velodyne_scan(tmp_path / "a.bin"), [[1, 2, 3], [4, 5, 6]])
    (tmp_path / "e.bin").write_bytes(b"")
    assert read_velodyne_scan(tmp_path / "e.bin").shape == (0, 3)
    (tmp_path / "bad.bin").write_bytes(b"x" * 20)
    with pytest.raises(FormatError):
        read_velodyne_scan(tmp_path / "bad.bin")


def test_scan_round_trip(tmp_path, rng):
    pts = rng.normal(size=(50, 3)).astype(np.float32).astype(np.float64)
    write_velodyne_scan(tmp_path / "s.bin", pts)
    np.testing.assert_array_equal(read_velodyne_scan(tmp_path / "s.bin"), pts)


FIXTURE = """# seq_id frame_idx x y z w l h theta
car1 2 1.5 0 0.9 1.6 3.9 1.5 0.2
car1 0 1.0 0 0.9 1.6 3.9 1.5 0.0
car1 1 1.25 0 0.9 1.6 3.9 1.5 0.1

ped 0 5 5 0.8 0.6 0.8 1.7 -1.0
"""


def test_parse_annotation_fixture(tmp_path):
    (tmp_path / "a.txt").write_text(FIXTURE)
    seqs = read_annotations(tmp_path / "a.txt")
    assert [s.id for s in seqs] == ["car1", "ped"]
    assert seqs[0].meta["frame_ids"] == [0, 1, 2]
    assert seqs[0].boxes == [Box7(1.0, 0, 0.9, 1.6, 3.9, 1.5, 0.0), Box7(1.25, 0, 0.9, 1.6, 3.9, 1.5, 0.1),
                             Box7(1.5, 0, 0.9, 1.6, 3.9, 1.5, 0.2)]
    assert len(seqs[1]) == 1


@pytest.mark.parametrize("line", ["a 0 1 2 3", "a x 0 0 0 1 1 1 0", "a 0 0 0 0 1 1 nan 0", "a 0 0 0 0 0 1 1 0"])
def test_parse_annotation_errors(line):
    with pytest.raises(FormatError):
        parse_annotations(line)


def test_annotations_round_trip(tmp_path, rng):
    seq = TrackSequence([(np.zeros((0, 3)), Box7(*rng.normal(size=3), 1, 2, 3, rng.normal())) for _ in range(4)],
                        id="s")
    write_annotations(tmp_path / "a.txt", [seq])
    assert read_annotations(tmp_path / "a.txt")[0].boxes == seq.boxes


def test_dataset_round_trip_and_missing_scan(tmp_path, rng):
    box = Box7(0, 0, 0, 2, 2, 2, 0)
    frames = [(rng.uniform(-1, 1, (30, 3)).astype(np.float32).astype(float), box) for _ in range(3)]
    save_dataset(tmp_path, [TrackSequence(frames, id="a")])
    back = load_dataset(tmp_path)[0]
    for (p, b), (q, c) in zip(frames, back.frames):
        np.testing.assert_array_equal(p, q)
        assert b == c
    (tmp_path / "velodyne" / "a" / "000001.bin").unlink()
    with pytest.raises(FormatError):
        load_dataset(tmp_path)
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "nowhere")


def test_evaluable_drops_empty_first_box():
    box = Box7(0, 0, 0, 1, 1, 1, 0)
    full = TrackSequence([(np.zeros((1, 3)), box)], id="a")
    empty = TrackSequence([(np.full((1, 3), 9.0), box)], id="b")
    assert [s.id for s in evaluable([full, empty])] == ["a"]


def test_split():
    seqs = [TrackSequence([(np.zeros((0, 3)), Box7(0, 0, 0, 1, 1, 1, 0))], id=f"s{i}") for i in range(10)]
    tr, te = split_train_test(seqs, 0.5, seed=3)
    assert len(tr) == 5 and len(te) == 5
    assert {s.id for s in tr} | {s.id for s in te} == {s.id for s in seqs}
    assert not {s.id for s in tr} & {s.id for s in te}
    assert [s.id for s in split_train_test(seqs, 0.5, seed=3)[0]] == [s.id for s in tr]
    with pytest.raises(ValueError):
        split_train_test(seqs, 1.0)


def test_kitti_conversion_puts_length_along_heading():
    # Identity extrinsic except the usual camera->lidar axis swap.
    cam_to_velo = np.array([[0, 0, 1, 0], [-1, 0, 0, 0], [0, -1, 0, 0], [0, 0, 0, 1.0]])
    box = kitti_label_to_box7(h=1.5, w=1.6, l=4.0, x=0.0, y=1.5, z=10.0, ry=0.0, cam_to_velo=cam_to_velo)
    assert box.center == pytest.approx([10.0, 0.0, -0.75])  # 0.75 m below the camera
    # ry = 0: length along camera x, which is lidar -y.
    corners = box_points(box)[:8]
    extent = corners.max(0) - corners.min(0)
    assert extent == pytest.approx([1.6, 4.0, 1.5])
