import numpy as np
import pytest

from mpnp_ddi.checkpoint import (MAGIC, CheckpointError, decode, load_checkpoint, restore_model,
                                 restore_optimizer, restore_rng, save_checkpoint)
from mpnp_ddi.config import TrainConfig
from mpnp_ddi.objective import Example, fit, predict

from conftest import random_graphs


@pytest.fixture(scope="module")
def trained():
    graphs = random_graphs(21, 24, max_atoms=7)
    rng = np.random.default_rng(0)
    data = [Example(graphs[2 * k], graphs[2 * k + 1], int(rng.integers(2)), int(rng.integers(2)))
            for k in range(12)]
    cfg = TrainConfig(hidden_dim=8, epochs=2, batch_size=4, accumulation_steps=2)
    return fit(data, cfg, num_relations=2), data


@pytest.fixture
def saved(trained, tmp_path):
    result, _ = trained
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, result.model, result.optimizer, result.rng)
    return path


def test_header(saved):
    assert saved.read_bytes().startswith(MAGIC)


def test_save_load_save_byte_identical(saved, tmp_path):
    ckpt = load_checkpoint(saved)
    again = tmp_path / "again.ckpt"
    save_checkpoint(again, restore_model(ckpt), restore_optimizer(ckpt), restore_rng(ckpt))
    assert again.read_bytes() == saved.read_bytes()


def test_tensors_bit_exact(trained, saved):
    result, _ = trained
    model = restore_model(load_checkpoint(saved))
    ref = dict(result.model.named_parameters())
    for name, p in model.named_parameters():
        assert np.array_equal(p.data, ref[name].data), name
    ref_buf = dict(result.model.named_buffers())
    for name, b in model.named_buffers():
        assert np.array_equal(b, ref_buf[name]), name


def test_self_describing(saved):
    ckpt = decode(saved.read_bytes())
    assert ckpt.config.hidden_dim == 8 and ckpt.num_relations == 2
    assert all(isinstance(v, np.ndarray) for v in ckpt.tensors.values())


def test_predictions_preserved(trained, saved):
    result, data = trained
    model = restore_model(load_checkpoint(saved))
    a, b = predict(result.model, data), predict(model, data)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_optimizer_and_rng_restored(trained, saved):
    result, _ = trained
    ckpt = load_checkpoint(saved)
    opt = restore_optimizer(ckpt)
    assert opt.step == result.optimizer.step
    for k, m in result.optimizer.first_moment.items():
        assert np.array_equal(opt.first_moment[k], m)
    rng = restore_rng(ckpt)
    assert rng.bit_generator.state == result.rng.bit_generator.state


def test_wrong_hidden_dim_names_tensor(saved):
    with pytest.raises(CheckpointError, match="shape mismatch for tensor"):
        load_checkpoint(saved, config=TrainConfig(hidden_dim=16, epochs=2, batch_size=4,
                                                  accumulation_steps=2))


def test_bad_magic(saved):
    data = bytearray(saved.read_bytes())
    data[0:1] = b"X"
    with pytest.raises(CheckpointError, match="magic"):
        decode(bytes(data))


def test_bad_version(saved):
    data = bytearray(saved.read_bytes())
    data[len(MAGIC)] ^= 0x7F
    with pytest.raises(CheckpointError, match="version"):
        decode(bytes(data))


def test_truncated(saved):
    data = saved.read_bytes()
    for cut in (len(data) - 3, len(data) // 2, len(MAGIC) + 6):
        with pytest.raises(CheckpointError):
            decode(data[:cut])
    with pytest.raises(CheckpointError, match="trailing"):
        decode(data + b"\0")
