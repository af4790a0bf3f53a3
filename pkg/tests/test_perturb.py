import numpy as np
import pytest

from learnless.perturb import (PerturbKind, PerturbSpec, add_gaussian_noise, apply_perturbation, bicubic_matrix,
                               blur_sigma, crop_resize, crop_window, gaussian_blur, gaussian_kernel, jpeg_roundtrip,
                               perturbation_chain, resize_bicubic)
from learnless.rng import make_rng, stream_seed
from oracles import blur2d_naive


def textured(seed, shape=(3, 48, 48)):
    gen = np.random.default_rng(seed)
    base = gen.uniform(40, 215, size=shape)
    return np.clip(base + 30 * np.sin(np.arange(shape[-1]) / 2.0), 0, 255)


# ----------------------------------------------------------------- noise

def test_zero_variance_is_identity():
    img = textured(0)
    assert np.array_equal(add_gaussian_noise(img, 0.0, 5), img)


def test_noise_std_is_sqrt_variance():
    img = np.full((1000, 1000), 127.5)
    diff = add_gaussian_noise(img, 16.0, 7) - img
    assert abs(diff.std() - 4.0) < 0.02
    assert abs(diff.mean()) < 0.02


def test_noise_as_sigma_flag():
    img = np.full((500, 500), 127.5)
    diff = add_gaussian_noise(img, 4.0, 1, as_sigma=True) - img
    assert abs(diff.std() - 4.0) < 0.05


def test_noise_clamps_at_range_ends():
    img = np.full((200, 200), 250.0)
    out = add_gaussian_noise(img, 400.0, 3)
    assert out.max() == 255.0 and out.min() >= 0.0


def test_negative_variance_rejected():
    with pytest.raises(ValueError):
        add_gaussian_noise(np.zeros((4, 4)), -1.0, 0)


# ----------------------------------------------------------------- blur

@pytest.mark.parametrize("k", [3, 5, 7, 9, 11])
def test_kernel_normalized_and_symmetric(k):
    taps = gaussian_kernel(k)
    assert abs(taps.sum() - 1.0) < 1e-12
    assert np.allclose(taps, taps[::-1])
    assert abs(blur_sigma(k) - (0.3 * ((k - 1) / 2 - 1) + 0.8)) < 1e-15


@pytest.mark.parametrize("k", [3, 5, 7, 9])
def test_blur_preserves_constants(k):
    img = np.full((3, 17, 23), 93.25)
    assert np.max(np.abs(gaussian_blur(img, k) - 93.25)) < 1e-9


def test_blur_matches_direct_2d_convolution_on_impulse():
    img = np.zeros((5, 5))
    img[2, 2] = 255.0
    assert np.allclose(gaussian_blur(img, 3), blur2d_naive(img, gaussian_kernel(3)), atol=1e-12)


def test_blur_matches_direct_convolution_at_borders():
    img = np.random.default_rng(3).uniform(0, 255, (9, 11))
    for k in (3, 5, 7, 9):
        assert np.allclose(gaussian_blur(img, k), blur2d_naive(img, gaussian_kernel(k)), atol=1e-9)


def test_blur_variance_decreases_with_kernel():
    img = np.random.default_rng(4).uniform(0, 255, (3, 64, 64))
    variances = [gaussian_blur(img, k).var() for k in (3, 5, 7, 9)]
    assert all(a > b for a, b in zip(variances, variances[1:]))


@pytest.mark.parametrize("k", [2, 4, 1, 0])
def test_even_or_tiny_kernel_rejected(k):
    with pytest.raises(ValueError):
        gaussian_blur(np.zeros((8, 8)), k)


# ----------------------------------------------------------------- jpeg

def test_jpeg_smooth_gradient_high_quality():
    grad = np.tile(np.linspace(0, 255, 64), (3, 64, 1))
    assert np.mean(np.abs(jpeg_roundtrip(grad, 95) - grad)) < 3


@pytest.mark.parametrize("q", [1, 10, 50, 95])
def test_jpeg_mid_gray_survives(q):
    gray = np.full((3, 32, 32), 128.0)
    assert np.mean(np.abs(jpeg_roundtrip(gray, q) - gray)) < 1


def test_jpeg_low_quality_worse_on_texture():
    img = textured(5)
    assert np.mean(np.abs(jpeg_roundtrip(img, 10) - img)) > np.mean(np.abs(jpeg_roundtrip(img, 75) - img))


def test_jpeg_shape_and_range():
    img = textured(6, (3, 30, 41))
    out = jpeg_roundtrip(img, 40)
    assert out.shape == img.shape and out.min() >= 0 and out.max() <= 255
    gray = jpeg_roundtrip(img[0], 40)
    assert gray.shape == img[0].shape


@pytest.mark.parametrize("q", [0, 101, 50.5])
def test_jpeg_quality_checked(q):
    with pytest.raises(ValueError):
        jpeg_roundtrip(np.zeros((3, 8, 8)), q)


# ----------------------------------------------------------------- crop-resize

def test_crop_window_shape_oracle():
    assert crop_window(100, 100, 0.2) == (80, 80)
    assert crop_window(100, 60, 0.05) == (95, 57)


def test_crop_resize_output_shape():
    out = crop_resize(textured(7, (3, 100, 100)), 0.2, 0)
    assert out.shape == (3, 100, 100)


@pytest.mark.parametrize("p", [0.01, 0.1, 0.49])
def test_crop_resize_preserves_constants(p):
    img = np.full((3, 40, 40), 201.0)
    assert np.max(np.abs(crop_resize(img, p, 3) - 201.0)) < 1e-9


def test_small_crop_is_near_identity_on_constant():
    img = np.full((2, 50, 50), 17.0)
    assert np.max(np.abs(crop_resize(img, 1 / 50, 0) - img)) < 1e-6


def test_bicubic_same_size_is_identity():
    img = textured(8, (3, 20, 20))
    assert np.allclose(resize_bicubic(img, 20, 20), img, atol=1e-9)
    m = bicubic_matrix(12, 30)
    assert np.allclose(m.sum(axis=1), 1.0)


@pytest.mark.parametrize("p", [0.0, 0.5, -0.1])
def test_crop_fraction_checked(p):
    with pytest.raises(ValueError):
        crop_resize(np.zeros((3, 10, 10)), p, 0)


# ----------------------------------------------------------------- specs and chains

def test_spec_defaults_and_validation():
    assert PerturbSpec("noise").param_range == (5.0, 20.0)
    assert PerturbSpec("blur").param_range == (3, 5, 7, 9)
    assert PerturbSpec("jpeg").param_range == (10, 75)
    assert PerturbSpec("crop").param_range == (0.05, 0.20)
    for kind, bad in [("noise", (0.0, 4.0)), ("blur", (3, 4)), ("jpeg", (0, 50)), ("crop", (0.1, 0.5)),
                      ("jpeg", (60, 50))]:
        with pytest.raises(ValueError):
            PerturbSpec(kind, bad)
    with pytest.raises(ValueError):
        PerturbSpec("sharpen")


def test_sampled_parameters_stay_in_range():
    gen = make_rng(0)
    assert all(5.0 <= PerturbSpec("noise").sample(gen) <= 20.0 for _ in range(200))
    assert {PerturbSpec("blur").sample(gen) for _ in range(200)} == {3, 5, 7, 9}
    assert all(10 <= PerturbSpec("jpeg").sample(gen) <= 75 for _ in range(200))


def test_empty_chain_is_identity():
    img = textured(9)
    assert np.array_equal(perturbation_chain(img, [], 4), img)


def test_single_noise_chain_equals_direct_call():
    img = textured(10)
    out = perturbation_chain(img, [PerturbSpec("noise")], 21)
    gen = make_rng(stream_seed(21, 0))
    variance = PerturbSpec("noise").sample(gen)
    assert np.array_equal(out, add_gaussian_noise(img, variance, gen))


def test_full_chain_deterministic_and_shape_preserving():
    img = textured(11)
    specs = [PerturbSpec(k) for k in PerturbKind]
    a = perturbation_chain(img, specs, 99)
    b = perturbation_chain(img, specs, 99)
    assert a.tobytes() == b.tobytes()
    assert a.shape == img.shape and a.min() >= 0 and a.max() <= 255
    assert not np.array_equal(a, perturbation_chain(img, specs, 100))


@pytest.mark.parametrize("kind", list(PerturbKind))
def test_each_transform_deterministic(kind):
    img = textured(12)
    spec = PerturbSpec(kind)
    assert apply_perturbation(img, spec, 5).tobytes() == apply_perturbation(img, spec, 5).tobytes()
