"""
Checkpoint files and run configuration files.
"""

import numpy as np
import pytest

from core.config import (
    ATTENTION_LR,
    TWOD_LR,
    apply_overrides,
    build_config,
    config_hash,
    parse_config,
    write_config,
)
from core.errors import CheckpointCorruptError, ConfigError, DataError
from core.tensor import Tensor
from services.trainer import average_checkpoints
from utils.storage import Checkpoint, load_checkpoint, save_checkpoint


@pytest.fixture
def checkpoint(rng):
    return Checkpoint(
        params={
            "out.W": Tensor(rng.standard_normal((3, 2))),
            "out.b": Tensor(rng.standard_normal(3)),
            "att.v": Tensor(rng.standard_normal(1)),
        },
        step=1200,
        dev_ppl=1.0412,
        config_hash="abc123",
    )


# checkpoints


def test_save_load_save_is_byte_identical(tmp_path, checkpoint):
    first = save_checkpoint(checkpoint, tmp_path / "a.ckpt")
    loaded = load_checkpoint(first)
    second = save_checkpoint(loaded, tmp_path / "b.ckpt")
    assert first.read_bytes() == second.read_bytes()
    assert loaded.step == 1200
    assert loaded.dev_ppl == 1.0412
    assert loaded.config_hash == "abc123"
    assert list(loaded.params) == ["out.W", "out.b", "att.v"]
    for name, value in checkpoint.params.items():
        assert loaded.params[name].identical(value)


def test_manifest_is_readable_text(tmp_path, checkpoint):
    raw = save_checkpoint(checkpoint, tmp_path / "a.ckpt").read_bytes()
    header = raw[: raw.index(b"\nend\n")].decode("utf-8").splitlines()
    assert header[0] == "NMT2D-CHECKPOINT 1"
    assert header[1:6] == ["dtype float64", "step 1200", "dev_ppl 1.0412", "config_hash abc123", "params 3"]
    assert header[6] == "param out.W 3,2 0 48"
    assert header[7] == "param out.b 3 48 24"


def test_missing_values_are_written_as_none(tmp_path):
    path = save_checkpoint(Checkpoint(params={"w": Tensor([1.0])}), tmp_path / "a.ckpt")
    loaded = load_checkpoint(path)
    assert loaded.dev_ppl is None
    assert loaded.config_hash == ""
    assert b"dev_ppl none\n" in path.read_bytes()


def test_truncated_payload_is_rejected(tmp_path, checkpoint):
    path = save_checkpoint(checkpoint, tmp_path / "a.ckpt")
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_trailing_bytes_are_rejected(tmp_path, checkpoint):
    path = save_checkpoint(checkpoint, tmp_path / "a.ckpt")
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_unknown_format_version_is_rejected(tmp_path, checkpoint):
    path = save_checkpoint(checkpoint, tmp_path / "a.ckpt")
    path.write_bytes(path.read_bytes().replace(b"NMT2D-CHECKPOINT 1", b"NMT2D-CHECKPOINT 2", 1))
    with pytest.raises(CheckpointCorruptError, match="version"):
        load_checkpoint(path)


@pytest.mark.parametrize(
    "old, new",
    [
        (b"step 1200", b"step twelve"),
        (b"params 3", b"params 4"),
        (b"param out.b 3 48 24", b"param out.b 3 40 24"),
        (b"NMT2D-CHECKPOINT", b"SOMETHING-ELSE"),
        (b"\nend\n", b"\nfin\n"),
    ],
)
def test_corrupt_manifest_is_rejected(tmp_path, checkpoint, old, new):
    path = save_checkpoint(checkpoint, tmp_path / "a.ckpt")
    path.write_bytes(path.read_bytes().replace(old, new, 1))
    with pytest.raises(CheckpointCorruptError):
        load_checkpoint(path)


def test_missing_checkpoint_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_float32_checkpoint_widens_exactly(tmp_path):
    values = np.array([0.1, -2.5, 3.25], dtype=np.float32)
    ckpt = Checkpoint(params={"w": Tensor(values, dtype="float32")}, dtype=np.dtype(np.float32))
    path = save_checkpoint(ckpt, tmp_path / "a.ckpt")
    assert load_checkpoint(path).params["w"].dtype == np.float32
    wide = load_checkpoint(path, dtype="float64")
    assert wide.dtype == np.float64
    assert wide.params["w"].tolist() == values.astype(np.float64).tolist()


def test_narrowing_on_load_is_refused(tmp_path, checkpoint):
    path = save_checkpoint(checkpoint, tmp_path / "a.ckpt")
    with pytest.raises(DataError):
        load_checkpoint(path, dtype="float32")


def test_averaging_after_load_equals_averaging_before_save(tmp_path, rng):
    ckpts = [
        Checkpoint(params={"w": Tensor(rng.standard_normal((2, 3)))}, step=k, config_hash="h")
        for k in range(3)
    ]
    before = average_checkpoints(ckpts)
    loaded = [load_checkpoint(save_checkpoint(c, tmp_path / f"{k}.ckpt")) for k, c in enumerate(ckpts)]
    after = average_checkpoints(loaded)
    assert after.params["w"].identical(before.params["w"])


# run configuration


def write(tmp_path, text: str):
    path = tmp_path / "run.conf"
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults(tmp_path):
    config = parse_config(write(tmp_path, "task=copy\n"))
    assert config.variant == "2d-seq2seq"
    assert config.beam_size == 12
    assert config.clip_threshold == 1.0
    assert config.dropout == 0.3
    assert config.batch_size == 50
    assert config.keep_best == 4
    assert config.lr == TWOD_LR == 0.0005


def test_learning_rate_default_follows_variant(tmp_path):
    assert parse_config(write(tmp_path, "task=copy\nvariant=attention\n")).lr == ATTENTION_LR
    assert parse_config(write(tmp_path, "task=copy\nvariant=2d-seq2seq-weighted\n")).lr == TWOD_LR
    assert parse_config(write(tmp_path, "task=copy\nvariant=coverage\nlr=0.1\n")).lr == 0.1


def test_comments_and_blank_lines_are_ignored(tmp_path):
    config = parse_config(write(tmp_path, "# desk run\n\ntask=reverse\nhidden_size=8\n"))
    assert config.task == "reverse"
    assert config.hidden_size == 8


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("task=copy\nhidden_size=-3\n", "hidden_size"),
        ("task=copy\nbeam_width=3\n", "beam_width"),
        ("task=copy\nvariant=transformer\n", "variant"),
        ("task=copy\ndropout=1.0\n", "dropout"),
        ("hidden_size=8\n", "task"),
        ("task=copy\nhidden_size\n", "hidden_size"),
    ],
)
def test_invalid_configs_name_the_problem(tmp_path, text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(write(tmp_path, text))


def test_missing_config_file_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        parse_config(tmp_path / "absent.conf")


def test_written_config_parses_back_to_the_same_hash(tmp_path):
    config = build_config(
        {"variant": "fertility", "task": "digit-to-word", "fertility_cap": 3.0, "log_wall_time": True}
    )
    reread = parse_config(write_config(config, tmp_path / "run.conf"))
    assert reread == config
    assert config_hash(reread) == config_hash(config)


def test_corpus_paths_survive_a_round_trip(tmp_path):
    config = build_config(
        {name: tmp_path / f"{name}.txt" for name in ("train_src", "train_tgt", "dev_src", "dev_tgt")}
    )
    reread = parse_config(write_config(config, tmp_path / "run.conf"))
    assert reread.train_src == tmp_path / "train_src.txt"
    assert config_hash(reread) == config_hash(config)


def test_hash_changes_with_any_value():
    base = build_config({"task": "copy"})
    assert config_hash(base) != config_hash(build_config({"task": "copy", "seed": 2}))


def test_overrides_win_and_are_logged(caplog):
    config = build_config({"task": "copy", "seed": 1})
    with caplog.at_level("WARNING"):
        updated = apply_overrides(config, {"seed": 7, "workers": None, "epochs": 20})
    assert updated.seed == 7
    assert updated.lr == config.lr
    assert "seed" in caplog.text
    assert "epochs" not in caplog.text


def test_invalid_override_is_a_config_error():
    with pytest.raises(ConfigError):
        apply_overrides(build_config({"task": "copy"}), {"workers": 0})


def test_variant_override_rederives_a_defaulted_learning_rate():
    config = build_config({"task": "copy", "variant": "2d-seq2seq"})
    assert config.lr == 0.0005
    updated = apply_overrides(config, {"variant": "attention"})
    assert updated.variant == "attention"
    assert updated.lr == 0.001
    assert apply_overrides(updated, {"variant": "2d-seq2seq-weighted"}).lr == 0.0005


def test_variant_override_keeps_an_explicit_learning_rate():
    config = build_config({"task": "copy", "variant": "2d-seq2seq", "lr": "0.0005"})
    assert apply_overrides(config, {"variant": "attention"}).lr == 0.0005
    assert apply_overrides(config, {"variant": "attention", "lr": 0.01}).lr == 0.01


def test_seed_override_keeps_the_defaulted_learning_rate():
    config = build_config({"task": "copy", "variant": "coverage"})
    reseeded = apply_overrides(config, {"seed": 3})
    assert reseeded.lr == 0.001
    assert apply_overrides(reseeded, {"variant": "2d-seq2seq"}).lr == 0.0005
