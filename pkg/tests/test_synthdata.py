import numpy as np
import pytest

from fadnet.evalkit import tlcc
from fadnet.synthdata import (
    DyadParams,
    corpus_maps,
    export_wavs,
    file_digest,
    generate_corpus,
    generate_dyad,
    generate_latent,
    read_dataset,
    read_manifest,
    split_indices,
    write_dataset,
)


@pytest.fixture(scope="module")
def small():
    return generate_corpus(6, T=24, delay=4, seed=3)


def test_dyad_shapes_and_determinism():
    p = DyadParams(seed=5, T=32)
    a, b = generate_dyad(p), generate_dyad(p)
    frames, audio, spk, lst = a
    assert frames.shape == (32, 1, 96, 96) and audio.shape == (17067,)
    assert spk.shape == lst.shape == (32, 56)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
    assert frames.min() >= 0 and frames.max() <= 1
    assert not np.array_equal(generate_dyad(DyadParams(seed=6, T=32))[3], lst)


@pytest.mark.parametrize("bad", [dict(T=4, delay=4), dict(delay=0), dict(smoothing=1.0)])
def test_invalid_params(bad):
    with pytest.raises(ValueError):
        generate_dyad(DyadParams(**bad))


def test_noise_free_listener_is_function_of_lagged_latent():
    p = DyadParams(seed=2, T=40, noise_sigma=0.0)
    _, _, _, lst = generate_dyad(p)
    _, z_lag = generate_latent(p)
    expected = z_lag @ corpus_maps(p.corpus_seed).coupling.T
    assert np.allclose(lst, expected, atol=1e-5)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_tlcc_recovers_delay(seed):
    _, _, spk, lst = generate_dyad(DyadParams(seed=seed, T=512, delay=4))
    _, lag = tlcc(lst, spk, 30)
    assert abs(lag - 4) <= 1


def test_linear_readout_from_lagged_latent():
    p = DyadParams(seed=9, T=2000, noise_sigma=0.05)
    _, _, _, lst = generate_dyad(p)
    _, z_lag = generate_latent(p)
    X = np.c_[z_lag, np.ones(len(z_lag))]
    coef, *_ = np.linalg.lstsq(X, lst, rcond=None)
    resid = lst - X @ coef
    r2 = 1 - resid.var(0).sum() / lst.var(0).sum()
    assert r2 > 0.9


def test_split_disjoint_and_stable():
    tr, va, te = split_indices(100, 0)
    assert (len(tr), len(va), len(te)) == (70, 20, 10)
    assert len(set(tr) | set(va) | set(te)) == 100
    again = split_indices(100, 0)
    assert all(np.array_equal(x, y) for x, y in zip((tr, va, te), again))


def test_dataset_roundtrip(tmp_path, small):
    path = write_dataset(small, tmp_path / "d")
    back = read_dataset(path)
    for name in ("speaker_frames", "speaker_audio", "speaker_motion", "listener_motion"):
        assert np.array_equal(getattr(back, name), getattr(small, name))
    write_dataset(back, tmp_path / "e")
    for name in ("manifest.json", "listener_motion.f32", "speaker_frames.f32"):
        assert file_digest(tmp_path / "d" / name) == file_digest(tmp_path / "e" / name)


def test_blob_size_from_declared_shape(tmp_path):
    c = generate_corpus(100, T=64, seed=0)
    path = write_dataset(c, tmp_path)
    m = read_manifest(path)
    assert (tmp_path / "listener_motion.f32").stat().st_size == 100 * 64 * 56 * 4
    assert m["blobs"]["listener_motion"]["shape"] == [100, 64, 56]
    assert m["n_sequences"] == 100 and m["frames"] == 64


def test_truncated_blob_and_bad_version(tmp_path, small):
    path = write_dataset(small, tmp_path)
    blob = tmp_path / "speaker_motion.f32"
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(ValueError, match="speaker_motion"):
        read_dataset(path)
    write_dataset(small, tmp_path)
    path.write_text(path.read_text().replace('"version": 1', '"version": 99'))
    with pytest.raises(ValueError, match="version"):
        read_manifest(path)


def test_wav_export(tmp_path, small):
    from fadnet.perception import read_audio
    paths = export_wavs(small, tmp_path)
    assert len(paths) == len(small)
    back = read_audio(paths[0])
    assert back.shape == small.speaker_audio[0].shape
    assert np.max(np.abs(back - small.speaker_audio[0])) < 1e-4
