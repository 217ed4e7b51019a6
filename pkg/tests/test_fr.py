import json
import sys
from pathlib import Path

import numpy as np
import pytest

from eraque.fr import PSNR_CAP, luma, ms_ssim, ms_ssim_min_side, psnr, ssim

FIXTURES = Path(__file__).parent / "fixtures"
sys.path.insert(0, str(FIXTURES))
from fr_inputs import fixture_pairs  # noqa: E402

REFERENCE = json.loads((FIXTURES / "fr_reference.json").read_text())


def test_psnr_cases():
    a = np.random.default_rng(0).random((3, 16, 16)) * 0.9
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a, a + 1 / 255) == pytest.approx(48.1308, abs=0.01)
    assert psnr(np.zeros((3, 4, 4)), np.ones((3, 4, 4))) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


def test_ssim_identity_is_exactly_one():
    a = np.random.default_rng(1).random((3, 40, 50))
    assert ssim(a, a) == 1.0
    big = np.random.default_rng(2).random((3, 192, 192))
    assert ms_ssim(big, big) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_frames_match_luminance_term():
    a, b = np.full((3, 32, 32), 0.2), np.full((3, 32, 32), 0.7)
    mu1, mu2 = luma(a)[0, 0], luma(b)[0, 0]
    c1 = (0.01 * 255) ** 2
    expected = (2 * mu1 * mu2 + c1) / (mu1 ** 2 + mu2 ** 2 + c1)
    assert ssim(a, b) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("name", sorted(REFERENCE))
def test_against_reference_fixtures(name):
    a, b = fixture_pairs()[name]
    assert ssim(a, b) == pytest.approx(REFERENCE[name]["ssim"], abs=1e-4)
    assert ms_ssim(a, b) == pytest.approx(REFERENCE[name]["ms_ssim"], abs=1e-4)


def test_inverted_pattern_far_below_one():
    a, b = fixture_pairs()["checker_vs_inverted"]
    assert ssim(a, b) < 0.5


def test_small_frames_rejected():
    side = ms_ssim_min_side() - 1
    a = np.zeros((3, side, side))
    with pytest.raises(ValueError):
        ms_ssim(a, a)
    with pytest.raises(ValueError):
        ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


def test_symmetric_and_deterministic():
    rng = np.random.default_rng(4)
    a, b = rng.random((3, 30, 30)), rng.random((3, 30, 30))
    assert ssim(a, b) == ssim(a, b)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert psnr(a, b) == psnr(b, a)
