import numpy as np
import pytest

from pcan import checkpoint as ck


def sample(dtype=np.float32):
    rng = np.random.default_rng(0)
    return ck.Checkpoint(
        params={"a.W": rng.normal(size=(3, 4)).astype(dtype), "a.b": np.zeros(4, dtype)},
        opt_state={"m/a.W": np.ones((3, 4)), "step": np.array(7, dtype=np.int64)},
        config_text="[train]\nepochs = 3\n",
        rng_state={"epoch": 2, "seed": 11},
        epoch=2,
    )


def test_round_trip_is_exact(tmp_path):
    c = sample()
    ck.save_checkpoint(tmp_path / "c.bin", c)
    back = ck.load_checkpoint(tmp_path / "c.bin")
    assert back.config_text == c.config_text and back.rng_state == c.rng_state and back.epoch == 2
    for k in c.params:
        assert back.params[k].dtype == c.params[k].dtype and np.array_equal(back.params[k], c.params[k])
    assert np.array_equal(back.opt_state["m/a.W"], c.opt_state["m/a.W"])


def test_saving_twice_gives_identical_bytes(tmp_path):
    ck.save_checkpoint(tmp_path / "a.bin", sample())
    ck.save_checkpoint(tmp_path / "b.bin", sample())
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_precision_mismatch_refused(tmp_path):
    ck.save_checkpoint(tmp_path / "c.bin", sample(np.float32))
    with pytest.raises(ck.CheckpointFormatError):
        ck.load_checkpoint(tmp_path / "c.bin", precision="float64")
    assert ck.load_checkpoint(tmp_path / "c.bin", precision="float32").precision == "float32"


@pytest.mark.parametrize("cut", [3, 20, -1])
def test_truncated_or_corrupt_files(tmp_path, cut):
    ck.save_checkpoint(tmp_path / "c.bin", sample())
    raw = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "d.bin").write_bytes(raw[:cut])
    with pytest.raises(ck.CheckpointFormatError):
        ck.load_checkpoint(tmp_path / "d.bin")


def test_trailing_bytes_and_bad_magic(tmp_path):
    ck.save_checkpoint(tmp_path / "c.bin", sample())
    raw = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw + b"\0")
    with pytest.raises(ck.CheckpointFormatError):
        ck.load_checkpoint(tmp_path / "t.bin")
    (tmp_path / "m.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ck.CheckpointFormatError):
        ck.load_checkpoint(tmp_path / "m.bin")
