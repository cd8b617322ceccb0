import numpy as np
import pytest
import scipy.stats

from instahide.core import Image, make_gaussian_dataset
from instahide.errors import ValidationError
from instahide.publicprep import (
    PatchSet,
    build_patchset,
    keypoint_count,
    keypoint_counts,
    load_patchset,
    random_crop,
    save_patchset,
)
from instahide.rng import RngStream


def test_random_crop_geometry_and_content():
    g = RngStream(1).generator()
    src = Image(g.normal(size=3 * 12 * 10).astype(np.float32), (3, 12, 10))
    crops = random_crop(src, (5, 4), 20, RngStream(2))
    assert len(crops) == 20
    chw = src.as_chw()
    for patch, (oy, ox) in crops:
        assert patch.dims == (3, 5, 4)
        assert 0 <= oy <= 7 and 0 <= ox <= 6
        assert np.array_equal(patch.as_chw(), chw[:, oy : oy + 5, ox : ox + 4])


def test_random_crop_rejects_oversize():
    src = Image(np.zeros(3 * 4 * 4, np.float32), (3, 4, 4))
    with pytest.raises(ValidationError):
        random_crop(src, (5, 4), 1, RngStream(0))
    assert random_crop(src, (2, 2), 0, RngStream(0)) == []


def test_crop_offsets_are_uniform():
    # 8 valid offsets per axis; chi-square the joint histogram
    src = Image(
        RngStream(3).generator().normal(size=3 * 11 * 11).astype(np.float32), (3, 11, 11)
    )
    crops = random_crop(src, (4, 4), 6400, RngStream(4))
    counts = np.zeros((8, 8))
    for _, (oy, ox) in crops:
        counts[oy, ox] += 1
    _, p = scipy.stats.chisquare(counts.ravel())
    assert p > 0.01


def test_keypoints_flat_image_has_none():
    assert keypoint_count(Image(np.zeros(3 * 16 * 16, np.float32), (3, 16, 16))) == 0
    assert keypoint_count(Image(np.full(3 * 16 * 16, 7.0, np.float32), (3, 16, 16))) == 0


def test_keypoints_period2_checkerboard_cancels():
    # alternating single pixels: the centered derivative taps cancel exactly
    cb = np.indices((16, 16)).sum(0) % 2
    im = Image(np.stack([cb] * 3).astype(np.float32).ravel(), (3, 16, 16))
    assert keypoint_count(im) == 0


def test_keypoints_single_bright_pixel():
    z = np.zeros((3, 9, 9), np.float32)
    z[:, 4, 4] = 5.0
    assert keypoint_count(Image(z.ravel(), (3, 9, 9))) >= 1


def test_keypoints_noise_goldens():
    # frozen reference counts; detector changes must be deliberate
    g = RngStream(100).generator()
    noise32 = Image(g.normal(size=3 * 32 * 32).astype(np.float32), (3, 32, 32))
    noise16 = Image(g.normal(size=3 * 16 * 16).astype(np.float32), (3, 16, 16))
    assert keypoint_count(noise32) == 54
    assert keypoint_count(noise16) == 16


def test_keypoints_tiny_images_are_zero():
    assert keypoint_count(Image(np.ones(2 * 2 * 3, np.float32), (3, 2, 2))) == 0


def test_keypoint_counts_batch_matches_singleton():
    ds = make_gaussian_dataset(5, (3, 12, 12), RngStream(7), normalize=False)
    batch = ds.matrix().reshape(5, 3, 12, 12).astype(np.float64)
    counts = keypoint_counts(batch)
    singles = [keypoint_count(im) for im in ds.images]
    assert counts.tolist() == singles


def test_build_patchset_keeps_textured_patches():
    src = make_gaussian_dataset(30, (3, 40, 40), RngStream(101), normalize=False)
    ps = build_patchset(src, (32, 32), 1, RngStream(102), min_keypoints=40)
    assert len(ps) == 30 and ps.retention == 1.0
    assert all(kp > 40 for kp in ps.keypoints)
    assert ps.dims == (3, 32, 32)
    for src_idx, oy, ox in ps.provenance:
        assert 0 <= src_idx < 30 and 0 <= oy <= 8 and 0 <= ox <= 8


def test_build_patchset_filters_flat_sources():
    flat = Image(np.zeros(3 * 40 * 40, np.float32), (3, 40, 40))
    noisy = make_gaussian_dataset(4, (3, 40, 40), RngStream(103), normalize=False)
    from instahide.core import Dataset

    mixed = Dataset((flat,) + noisy.images)
    with pytest.warns(UserWarning):
        # every flat crop dies; warning only fires when everything is dropped
        ps_all_flat = build_patchset(
            Dataset((flat,)), (32, 32), 3, RngStream(104), min_keypoints=40
        )
    assert len(ps_all_flat) == 0
    ps = build_patchset(mixed, (32, 32), 1, RngStream(105), min_keypoints=40)
    assert len(ps) == 4 and ps.retention == pytest.approx(0.8)
    assert 0 not in set(int(s) for s, _, _ in ps.provenance)


def test_build_patchset_threshold_zero_disables_filter():
    flat = Image(np.zeros(3 * 8 * 8, np.float32), (3, 8, 8))
    from instahide.core import Dataset

    ps = build_patchset(Dataset((flat,)), (8, 8), 2, RngStream(1), min_keypoints=0)
    assert len(ps) == 2


def test_build_patchset_is_deterministic():
    src = make_gaussian_dataset(10, (3, 20, 20), RngStream(9), normalize=False)
    a = build_patchset(src, (16, 16), 2, RngStream(10), min_keypoints=0)
    b = build_patchset(src, (16, 16), 2, RngStream(10), min_keypoints=0)
    assert np.array_equal(a.matrix(), b.matrix())
    assert a.provenance == b.provenance


def test_patchset_alignment_validation():
    im = Image(np.zeros(4, np.float32), (1, 2, 2))
    with pytest.raises(ValidationError):
        PatchSet((im,), (), (5,), 1.0)
    with pytest.raises(ValidationError):
        PatchSet((), (), (), 1.0).dims  # empty set has no dims


def test_save_load_roundtrip_with_provenance(tmp_path):
    src = make_gaussian_dataset(6, (3, 16, 16), RngStream(11), normalize=False)
    ps = build_patchset(src, (8, 8), 2, RngStream(12), min_keypoints=0)
    data_path, prov_path = save_patchset(ps, tmp_path / "p.ihds")
    back = load_patchset(data_path)
    assert np.array_equal(back.matrix(), ps.matrix())
    assert back.provenance == ps.provenance
    assert back.keypoints == ps.keypoints
    assert prov_path.read_text().splitlines()[0] == (
        "source_index,offset_y,offset_x,keypoints"
    )


def test_load_rejects_mismatched_sidecar(tmp_path):
    src = make_gaussian_dataset(4, (3, 16, 16), RngStream(13), normalize=False)
    ps = build_patchset(src, (8, 8), 1, RngStream(14), min_keypoints=0)
    data_path, prov_path = save_patchset(ps, tmp_path / "p.ihds")
    lines = prov_path.read_text().splitlines()
    prov_path.write_text("\n".join(lines[:-1]) + "\n")  # drop one row
    with pytest.raises(ValidationError):
        load_patchset(data_path)
