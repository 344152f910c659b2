"""Stub implementations: determinism, shapes, and pixel contracts."""

import numpy as np
import pytest

from modelserver import stub


def test_generate_shape_and_dtype():
    image = stub.generate("a photo of a dog", 7, 96, 64)
    assert image.shape == (64, 96, 4)
    assert image.dtype == np.uint8
    assert np.all(image[..., 3] == 255)


def test_generate_deterministic_and_sensitive():
    a = stub.generate("a photo of a dog", 7, 64, 64)
    b = stub.generate("a photo of a dog", 7, 64, 64)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, stub.generate("a photo of a dog", 8, 64, 64))
    assert not np.array_equal(a, stub.generate("a photo of a cat", 7, 64, 64))


def test_generate_not_uniform():
    image = stub.generate("a probe", 0, 48, 48)
    assert image[..., :3].min() < image[..., :3].max()


@pytest.mark.parametrize("size", [(64, 64), (100, 52), (17, 33)])
def test_generate_odd_sizes(size):
    width, height = size
    assert stub.generate("a probe", 3, width, height).shape == (height, width, 4)


def test_segment_rectangle_tight_bbox():
    image = stub.generate("a photo of a dog", 7, 96, 64)
    mask, bbox, confidence = stub.segment(image, "dog")
    assert mask.shape == (64, 96)
    assert mask.any()
    ys, xs = np.nonzero(mask)
    assert bbox == (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
    assert 0.0 <= confidence <= 1.0
    # rectangle: the mask fills its own bounding box completely
    x0, y0, x1, y1 = bbox
    assert mask[y0:y1, x0:x1].all()


def test_segment_deterministic_per_inputs():
    image = stub.generate("a photo of a dog", 7, 64, 64)
    first = stub.segment(image, "dog")
    second = stub.segment(image, "dog")
    assert np.array_equal(first[0], second[0])
    assert first[1:] == second[1:]
    other = stub.segment(image, "cat")
    assert first[1] != other[1] or not np.array_equal(first[0], other[0])


def test_segment_featureless_returns_none():
    flat = np.full((32, 32, 4), 90, dtype=np.uint8)
    assert stub.segment(flat, "dog") is None


def test_inpaint_preserves_unmasked_pixels():
    image = stub.generate("scene", 5, 80, 60)
    rng = np.random.default_rng(0)
    mask = rng.random((60, 80)) < 0.4
    out = stub.inpaint(image, mask, "background", 9)
    assert np.array_equal(out[~mask], image[~mask])
    assert not np.array_equal(out[mask], image[mask])


def test_inpaint_deterministic_and_coordinate_stable():
    image = stub.generate("scene", 5, 64, 64)
    rng = np.random.default_rng(1)
    mask_a = rng.random((64, 64)) < 0.3
    mask_b = rng.random((64, 64)) < 0.3
    out_a = stub.inpaint(image, mask_a, "background", 9)
    assert np.array_equal(out_a, stub.inpaint(image, mask_a, "background", 9))
    # same seed fills shared masked coordinates identically under any mask
    out_b = stub.inpaint(image, mask_b, "background", 9)
    shared = mask_a & mask_b
    assert np.array_equal(out_a[shared], out_b[shared])


def test_inpaint_empty_mask_is_identity():
    image = stub.generate("scene", 5, 40, 40)
    out = stub.inpaint(image, np.zeros((40, 40), dtype=bool), "background", 9)
    assert np.array_equal(out, image)


def test_embed_unit_norm_and_determinism():
    vectors = stub.embed_texts(["red", "green", "red"])
    assert vectors.shape == (3, stub.EMBED_DIM)
    assert vectors.dtype == np.float32
    assert np.allclose(np.linalg.norm(vectors, axis=1), 1.0, atol=1e-6)
    assert np.array_equal(vectors[0], vectors[2])
    assert not np.array_equal(vectors[0], vectors[1])


def test_embed_images_keyed_by_pixels():
    a = stub.generate("x", 1, 32, 32)
    b = stub.generate("x", 2, 32, 32)
    vectors = stub.embed_images([a, b, a.copy()])
    assert vectors.shape == (3, stub.EMBED_DIM)
    assert np.array_equal(vectors[0], vectors[2])
    assert not np.array_equal(vectors[0], vectors[1])
    # image and text spaces differ even for equal byte content
    assert not np.array_equal(stub.embed_texts(["x"])[0], vectors[0])
