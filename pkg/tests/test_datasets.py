import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mgsolve import tensor as T
from mgsolve.datasets import (DistributionSpec, ImageCorpus, gen_data_multi_level, ingest_images,
                              minmax01, multi_level_schedule, parse_distribution, read_pgm,
                              sample_coefficients, sample_random_tensor, write_pgm)


@pytest.fixture
def corpus_dir(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(3):
        write_pgm(tmp_path / f"img{i}.pgm", rng.integers(0, 256, (28, 28)))
    (tmp_path / "broken.pgm").write_bytes(b"P5\n28 28\n255\n" + b"\x00" * 10)
    (tmp_path / "notes.txt").write_text("ignored")
    return tmp_path


class TestParsing:
    def test_single_kinds(self):
        assert parse_distribution("white_noise").kind == "white_noise"
        spec = parse_distribution("mldata:levels=3,init_size=4")
        assert spec.kind == "mldata" and spec.params == {"levels": 3, "init_size": 4}
        assert parse_distribution("images:/data").params == {"directory": "/data"}

    def test_mixture(self):
        spec = parse_distribution("white_noise*0.25+mldata*0.75")
        assert spec.kind == "mixture"
        assert [w for _, w in spec.components] == [0.25, 0.75]

    @pytest.mark.parametrize("text", ["gauss", "mldata:foo=1", "images", "white_noise*0.5+mldata*0.4",
                                      "white_noise+mldata", "mldata:init_size=1"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            parse_distribution(text)

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            DistributionSpec("mixture", components=((DistributionSpec("white_noise"), 0.7),))


def test_white_noise_range_and_mean():
    x = sample_random_tensor("white_noise", 255, seed=0)
    assert x.shape == (255, 255)
    assert x.min() >= 0 and x.max() <= 1
    assert 0.48 <= x.mean() <= 0.52


@pytest.mark.parametrize("dist", ["white_noise", "mldata", "mldata:levels=2"])
def test_seed_determinism(dist):
    a = sample_random_tensor(dist, 31, seed=5)
    np.testing.assert_array_equal(a, sample_random_tensor(dist, 31, seed=5))
    assert not np.array_equal(a, sample_random_tensor(dist, 31, seed=6))


def test_single_component_mixture_equals_component():
    np.testing.assert_array_equal(sample_random_tensor("white_noise*1.0", 15, seed=3),
                                  sample_random_tensor("white_noise", 15, seed=3))


def test_mixture_uses_both_components(tmp_path):
    ramp = np.add.outer(np.arange(16), np.arange(16)) * 8
    write_pgm(tmp_path / "ramp.pgm", ramp)
    dist = f"white_noise*0.5+images:{tmp_path}*0.5"
    samples = [sample_random_tensor(dist, 15, seed=s) for s in range(20)]
    # the image is a smooth ramp, white noise is not
    roughness = [np.abs(np.diff(s, axis=0)).mean() for s in samples]
    assert min(roughness) < 0.15 < max(roughness)


class TestMultiLevel:
    def test_schedule(self):
        assert multi_level_schedule(3, 5) == [(10, 0.5), (20, 0.25), (40, 0.125)]

    def test_trace(self):
        trace = []
        out = gen_data_multi_level(63, 3, 5, seed=0, trace=trace)
        assert trace == [(10, 0.5), (20, 0.25), (40, 0.125)]
        assert out.shape == (63, 63)

    def test_no_levels_is_plain_resize(self):
        base = np.random.default_rng(2).standard_normal((5, 5))
        out = gen_data_multi_level(17, 0, 5, seed=2)
        np.testing.assert_allclose(out, T.bilinear_resize(base[None], 17, 17)[0])

    def test_goal_equal_to_final_size_is_loop_output(self):
        rng = np.random.default_rng(9)
        data = rng.standard_normal((5, 5))
        for size, ratio in multi_level_schedule(2, 5):
            data = T.bilinear_resize(data[None], size, size)[0] + ratio * rng.standard_normal((size, size))
        np.testing.assert_array_equal(gen_data_multi_level(20, 2, 5, seed=9), data)

    def test_normalized_sample_in_unit_range(self):
        x = sample_random_tensor("mldata", 63, seed=1)
        assert x.min() == 0.0 and x.max() == 1.0

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            gen_data_multi_level(10, 1, init_size=1)
        with pytest.raises(ValueError):
            gen_data_multi_level(10, -1)


def test_minmax_constant_maps_to_half():
    np.testing.assert_array_equal(minmax01(np.full((4, 4), 7.0)), 0.5)
    np.testing.assert_array_equal(minmax01(np.array([[1.0, 3.0]])), [[0.0, 1.0]])


class TestImages:
    def test_pgm_round_trip(self, tmp_path):
        img = np.arange(12).reshape(3, 4) * 20
        write_pgm(tmp_path / "a.pgm", img)
        np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)

    def test_pgm_comments_and_16bit(self, tmp_path):
        payload = np.array([[0, 1000], [65535, 7]], dtype=">u2").tobytes()
        (tmp_path / "b.pgm").write_bytes(b"P5\n# note\n2 2\n65535\n" + payload)
        np.testing.assert_array_equal(read_pgm(tmp_path / "b.pgm"), [[0, 1000], [65535, 7]])

    def test_corpus_skips_corrupt(self, corpus_dir):
        with pytest.warns(UserWarning, match="broken.pgm"):
            corpus = ImageCorpus(corpus_dir)
        assert len(corpus) == 3 and corpus.skipped == 1

    def test_sampling(self, corpus_dir):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            corpus = ingest_images(corpus_dir)
        a = [corpus.sample(63, seed=s) for s in range(3)]
        b = [corpus.sample(63, seed=s) for s in range(3)]
        for x, y in zip(a, b):
            assert x.shape == (63, 63) and x.min() >= 0 and x.max() <= 1
            np.testing.assert_array_equal(x, y)

    def test_constant_image(self, tmp_path):
        write_pgm(tmp_path / "gray.pgm", np.full((8, 8), 100))
        np.testing.assert_array_equal(ImageCorpus(tmp_path).sample(15, seed=0), 0.5)

    def test_empty_directory(self, tmp_path):
        with pytest.raises(ValueError):
            ImageCorpus(tmp_path)
        with pytest.raises(FileNotFoundError):
            ImageCorpus(tmp_path / "missing")

    def test_png_first_channel(self, tmp_path):
        Image = pytest.importorskip("PIL.Image")
        rgb = np.zeros((6, 6, 3), np.uint8)
        rgb[..., 0] = np.arange(6) * 40
        rgb[..., 1] = 255
        Image.fromarray(rgb).save(tmp_path / "c.png")
        out = ImageCorpus(tmp_path).sample(6, seed=0)
        np.testing.assert_allclose(out, np.tile(np.arange(6) / 5, (6, 1)), atol=1e-12)


@given(size=st.sampled_from([3, 7, 15]), batch=st.integers(1, 3), seed=st.integers(0, 100))
def test_sample_coefficients_range(size, batch, seed):
    coef = sample_coefficients("mldata", size, batch, seed, 1000.0)
    assert coef.shape == (batch, 1, size, size)
    assert coef.min() >= 1e-3 and coef.max() <= 1.0
