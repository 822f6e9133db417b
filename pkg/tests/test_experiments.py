import numpy as np
import pytest

from stabilab.data import write_idx
from stabilab.errors import InputError
from stabilab.experiments import (
    BLOCK_RELIABILITY,
    Check,
    EPS_A,
    N_WEAK,
    SIDE,
    WEAK_SHIFT,
    _pixel_groups,
    load_centered,
    run_gauss_suite,
    synth_images,
)
from stabilab.numerics import RngState


def test_pixel_groups_partition_the_image():
    block, weak, noise = _pixel_groups()
    assert len(block) == 16
    assert len(weak) == N_WEAK
    assert len(noise) == SIDE * SIDE - 16 - N_WEAK
    all_idx = np.concatenate([block, weak, noise])
    assert len(np.unique(all_idx)) == SIDE * SIDE


def test_weak_shift_is_flippable_at_the_attack_budget():
    # the whole scenario rests on this ordering
    assert WEAK_SHIFT < EPS_A
    assert 1.5 * EPS_A >= WEAK_SHIFT + EPS_A  # recovery headroom at 1.5x


def test_synth_images_shapes_and_determinism():
    images, labels = synth_images(50, RngState(1, 0))
    assert images.shape == (100, SIDE, SIDE) and images.dtype == np.uint8
    assert labels.shape == (100,) and labels.dtype == np.uint8
    np.testing.assert_array_equal(labels, np.repeat([0, 1], 50))

    again, _ = synth_images(50, RngState(1, 0))
    np.testing.assert_array_equal(images, again)
    other, _ = synth_images(50, RngState(2, 0))
    assert not np.array_equal(images, other)
    with pytest.raises(InputError):
        synth_images(0, RngState(1, 0))


def test_block_reliability_rate():
    images, labels = synth_images(4000, RngState(3, 0))
    block, _, _ = _pixel_groups()
    flat = images.reshape(len(labels), -1).astype(np.float64) / 255.0
    y = np.where(labels == 0, -1.0, 1.0)
    # signed block mean is strongly positive when the patch is present
    signed = y * (flat[:, block].mean(axis=1) - 0.5)
    present = float(np.mean(signed > 0.25))
    assert abs(present - BLOCK_RELIABILITY) < 0.02


def test_load_centered(tmp_path):
    images, labels = synth_images(30, RngState(4, 0))
    ip, lp = tmp_path / "im.idx3", tmp_path / "lb.idx1"
    write_idx(images, labels, ip, lp)
    ds = load_centered(ip, lp)
    assert ds.n == 60 and ds.m == SIDE * SIDE
    assert not ds.bounded
    assert ds.features.min() >= -0.5 and ds.features.max() <= 0.5
    assert set(np.unique(ds.labels)) == {-1, 1}
    assert ds.provenance.endswith("|centered")


def test_check_line_format():
    ok = Check("floor", True, "0.9 >= 0.6")
    assert ok.line() == "[PASS] floor: 0.9 >= 0.6"
    bad = Check("gap", False, "0.01 < 0.05")
    assert bad.line() == "[FAIL] gap: 0.01 < 0.05"


def test_gauss_suite_names_and_outcomes():
    checks = run_gauss_suite(RngState(5, 0), mc_n=20_000)
    assert [c.name for c in checks] == [
        "natural_accuracy_bound",
        "robust_accuracy_floor",
        "monte_carlo_agreement",
        "adv_shift_drops_weak",
        "hyp_shift_keeps_weak",
        "enlarged_budget_recovers",
        "doubled_budget_upper_bound",
    ]
    for c in checks:
        assert c.passed, c.line()
