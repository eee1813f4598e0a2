import logging

import numpy as np
import pytest
import torch
from PIL import Image

from oracles import naive_resize
from srcaps.data import (
    DatasetSpec, ImagePair, augment, bicubic_resize, degrade, epoch_batches, load_image,
    load_pairs, mod_crop, resize_weights, sample_patch, save_image,
)
from srcaps.errors import UsageError


def write_png(path, arr):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="RGB").save(path)


def test_load_white_pixel(tmp_path):
    write_png(tmp_path / "w.png", np.full((1, 1, 3), 255))
    img = load_image(tmp_path / "w.png")
    assert img.shape == (1, 3, 1, 1) and img.flatten().tolist() == [255, 255, 255]


def test_load_pattern_and_roundtrip(tmp_path):
    pattern = np.array([[[255, 0, 0], [0, 255, 0]], [[0, 0, 255], [10, 20, 30]]])
    write_png(tmp_path / "p.png", pattern)
    img = load_image(tmp_path / "p.png")
    assert img[0, :, 1, 1].tolist() == [10, 20, 30]
    assert img[0, :, 0, 0].tolist() == [255, 0, 0]
    save_image(img, tmp_path / "q.png")
    assert torch.equal(load_image(tmp_path / "q.png"), img)


def test_load_errors_name_path(tmp_path):
    with pytest.raises(OSError, match="missing.png"):
        load_image(tmp_path / "missing.png")
    (tmp_path / "junk.png").write_bytes(b"not a png")
    with pytest.raises(OSError, match="junk.png"):
        load_image(tmp_path / "junk.png")


def test_gray_png_is_expanded(tmp_path):
    Image.fromarray(np.full((2, 2), 40, dtype=np.uint8), mode="L").save(tmp_path / "g.png")
    assert load_image(tmp_path / "g.png").flatten().unique().tolist() == [40]


@pytest.mark.parametrize("factor", [0.25, 0.5, 2, 3, 4])
def test_resize_constant_image(factor):
    img = torch.full((1, 3, 12, 12), 77.0, dtype=torch.float64)
    out = bicubic_resize(img, factor)
    assert out.shape[-1] == int(12 * factor)
    torch.testing.assert_close(out, torch.full_like(out, 77.0))


def test_resize_identity():
    img = torch.rand(1, 3, 5, 7) * 255
    out = bicubic_resize(img, 1)
    assert torch.equal(out, img) and out is not img


def test_resize_matches_kernel_sum_oracle():
    ramp = np.add.outer(np.arange(8), np.arange(8)) * 15.0
    img = torch.tensor(ramp).view(1, 1, 8, 8)
    for factor in (0.5, 4):
        got = bicubic_resize(img, factor)[0, 0].numpy()
        np.testing.assert_allclose(got, np.clip(naive_resize(ramp, factor), 0, 255), atol=1e-9)


def test_resize_weights_rows_sum_to_one():
    for n, f in ((10, 0.25), (7, 3), (33, 0.5)):
        np.testing.assert_allclose(resize_weights(n, f).sum(axis=1), 1.0, atol=1e-12)


def test_resize_degenerate():
    with pytest.raises(UsageError):
        bicubic_resize(torch.zeros(1, 3, 3, 3), 0.25)
    with pytest.raises(UsageError):
        bicubic_resize(torch.zeros(1, 3, 3, 3), 0)


def test_degrade_and_mod_crop():
    hr = torch.rand(3, 18, 21) * 255
    cropped = mod_crop(hr, 4)
    assert cropped.shape == (3, 16, 20)
    lr = degrade(cropped, 4)
    assert lr.shape == (3, 4, 5) and torch.equal(lr, lr.round())


def make_dataset(root, sizes, with_lr=False, scale=4):
    rng = np.random.default_rng(0)
    for i, (h, w) in enumerate(sizes):
        arr = rng.integers(0, 256, (h, w, 3))
        write_png(root / "train" / "HR" / f"{i:03d}.png", arr)
        if with_lr:
            lr = degrade(torch.tensor(arr).permute(2, 0, 1).double(), scale)
            write_png(root / "train" / f"LRx{scale}" / f"{i:03d}.png",
                      lr.permute(1, 2, 0).numpy())


def test_load_pairs_synthesizes_lr(tmp_path):
    make_dataset(tmp_path, [(18, 22), (16, 16)])
    pairs = load_pairs(DatasetSpec(tmp_path, "train", 4))
    assert [p.image_id for p in pairs] == ["000", "001"]
    assert pairs[0].hr.shape == (3, 16, 20) and pairs[0].lr.shape == (3, 4, 5)


def test_load_pairs_uses_stored_lr_and_checks_names(tmp_path):
    make_dataset(tmp_path, [(16, 16), (20, 24)], with_lr=True)
    pairs = load_pairs(DatasetSpec(tmp_path, "train", 4))
    assert pairs[1].lr.shape == (3, 5, 6)
    (tmp_path / "train" / "LRx4" / "001.png").rename(tmp_path / "train" / "LRx4" / "999.png")
    with pytest.raises(UsageError, match="999"):
        load_pairs(DatasetSpec(tmp_path, "train", 4))


def test_load_pairs_missing_dir(tmp_path):
    with pytest.raises(FileNotFoundError, match="HR"):
        load_pairs(DatasetSpec(tmp_path, "train", 4))


def test_flat_layout_is_accepted(tmp_path):
    write_png(tmp_path / "HR" / "a.png", np.zeros((8, 8, 3)))
    spec = DatasetSpec(tmp_path, "valid", 4)
    assert spec.hr_path == tmp_path / "HR"
    assert load_pairs(spec)[0].lr.shape == (3, 2, 2)


def toy_pair(h=16, w=24, r=4):
    hr = torch.arange(3 * h * w, dtype=torch.float32).view(3, h, w)
    return ImagePair("toy", hr, degrade(hr.clamp(0, 255), r))


def test_sample_patch_full_image_and_alignment():
    pair = toy_pair(16, 16)
    patch = sample_patch(pair, 16, 4, np.random.default_rng(0))
    assert torch.equal(patch.hr, pair.hr) and torch.equal(patch.lr, pair.lr)
    pair = toy_pair(40, 48)
    rng = np.random.default_rng(1)
    for _ in range(50):
        p = sample_patch(pair, 8, 4, rng)
        assert p.top % 4 == 0 and p.left % 4 == 0
        assert torch.equal(p.lr, pair.lr[:, p.top // 4:p.top // 4 + 2, p.left // 4:p.left // 4 + 2])


def test_sample_patch_reproducible():
    pair = toy_pair(40, 48)
    a = [(p.top, p.left) for p in (sample_patch(pair, 8, 4, r) for r in [np.random.default_rng(5)] * 10)]
    b = [(p.top, p.left) for p in (sample_patch(pair, 8, 4, r) for r in [np.random.default_rng(5)] * 10)]
    assert a == b


def test_augment_applies_same_transform():
    pair = toy_pair(16, 16)
    patch = sample_patch(pair, 16, 4, np.random.default_rng(0))
    assert augment(patch, np.random.default_rng(0)) is patch
    for seed in range(8):
        out = augment(patch, np.random.default_rng(seed), enabled=True)
        torch.testing.assert_close(degrade(out.hr.clamp(0, 255), 4), out.lr)


def test_epoch_batches_skip_small_images(caplog):
    pairs = [toy_pair(16, 16), toy_pair(8, 8)]
    with caplog.at_level(logging.WARNING):
        batches = list(epoch_batches(pairs, 16, 4, 4, np.random.default_rng(0)))
    assert "skipping" in caplog.text
    assert len(batches) == 1
    lr, hr = batches[0]
    assert lr.shape == (1, 3, 4, 4) and hr.shape == (1, 3, 16, 16)
    with pytest.raises(UsageError):
        list(epoch_batches([toy_pair(8, 8)], 16, 4, 4, np.random.default_rng(0)))
