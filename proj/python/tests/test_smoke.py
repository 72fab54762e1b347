import numpy as np
import pytest

import dancedit

TINY = {"K": 1, "H": 16, "heads": 2, "ff_mult": 2, "T": 100, "epochs": 1, "batch": 4}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert dancedit.build_dataset(str(root), records=12, frames=30, seed=4, music_width=8) == 12
    return root


@pytest.fixture(scope="module")
def models(dataset):
    gen, gen_losses = dancedit.train_generator(str(dataset), TINY)
    editor, edit_losses = dancedit.train_editor(str(dataset), gen, {**TINY, "lr": 1e-3})
    assert len(gen_losses) > 0 and len(edit_losses) > 0
    assert all(np.isfinite(gen_losses)) and all(np.isfinite(edit_losses))
    return gen, editor


def test_motion_features_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    feats = np.zeros((5, dancedit.FEATURE_WIDTH), dtype=np.float32)
    feats[:, :3] = rng.normal(size=(5, 3))
    feats[:, 3:147] = np.tile([1, 0, 0, 0, 1, 0], 24)
    m = dancedit.Motion.from_features(feats)
    assert len(m) == 5
    np.testing.assert_array_equal(m.features(), feats)
    path = tmp_path / "m.drmx"
    m.save(str(path))
    assert dancedit.Motion.load(str(path)) == m
    assert m.positions().shape == (5, dancedit.JOINT_COUNT, 3)


def test_bad_file_raises(tmp_path):
    path = tmp_path / "junk.drmx"
    path.write_bytes(b"nope")
    with pytest.raises(ValueError):
        dancedit.Motion.load(str(path))


def test_music_and_beats():
    mu = dancedit.Music.synth(bpm=120, frames=60, width=8)
    assert len(mu) == 60 and mu.width == 8
    assert mu.beat_frames == list(range(0, 60, 15))
    assert mu.features().shape == (60, 8)
    assert dancedit.bas(mu.beat_frames, mu.beat_frames) == 1.0
    assert dancedit.beat_alignment_cost(mu.beat_frames, mu.beat_frames) == 0.0


def test_distribution_metrics():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(200, 4))
    assert abs(dancedit.fid(a, a)) < 1e-6
    assert dancedit.diversity(np.ones((5, 4))) == 0.0
    # Two points at distance 1, exhaustive for small sets.
    assert dancedit.diversity(np.array([[0.0, 0.0], [1.0, 0.0]])) == pytest.approx(1.0)


def test_dataset_summary(dataset):
    records = dancedit.dataset_summary(str(dataset))
    assert len(records) == 12
    assert all(r["frames"] == 30 and len(r["prompts"]) >= 1 for r in records)


def test_sample_and_edit_are_deterministic(models, tmp_path):
    gen, editor = models
    mu = dancedit.Music.synth(bpm=120, frames=30, width=gen.music_width)
    a = gen.sample(mu, steps=5, seed=3)
    b = gen.sample(mu, steps=5, seed=3)
    assert a == b and len(a) == 30
    assert np.isfinite(dancedit.pfc(a))
    e1 = editor.edit(mu, a, "raise the left arm", steps=5, seed=3)
    e2 = editor.edit(mu, a, "raise the left arm", steps=5, seed=3)
    assert e1 == e2
    editor.use_cem = False
    assert not editor.use_cem
    editor.use_cem = True

    gen.save(str(tmp_path / "g.dewt"))
    editor.save(str(tmp_path / "e.dewt"))
    gen2 = dancedit.Generator.load(str(tmp_path / "g.dewt"))
    editor2 = dancedit.Editor.load(str(tmp_path / "e.dewt"), gen2)
    assert gen2.sample(mu, steps=5, seed=3) == a
    assert editor2.edit(mu, a, "raise the left arm", steps=5, seed=3) == e1


def test_unknown_config_key_rejected(dataset):
    with pytest.raises(Exception):
        dancedit.train_generator(str(dataset), {"no_such_key": 1})
