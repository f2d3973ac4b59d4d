import numpy as np
import pytest
import torch

from forestreg.anchors import eligible_pixel_mask, sample_anchors
from forestreg.errors import ContractError, InsufficientAnchorsError

from conftest import make_patch


def _fields(batch, d=8, seed=0):
    g = torch.Generator().manual_seed(seed)
    b = len(batch)
    h, w = batch[0].height, batch[0].width
    return torch.randn(b, d, h, w, generator=g)


def test_pool_smaller_than_request_reports_shortfall():
    # 100 eligible pixels: one labeled patch with 100 forest pixels
    patch = make_patch(size=16, forest_cover=100 / 256, seed=1)
    anchors = sample_anchors([patch], _fields([patch]), n_anchors=1000, seed=0)
    assert anchors.n == 100
    assert anchors.n_requested == 1000
    assert anchors.shortfall


def test_exactly_two_eligible_pixels():
    patch = make_patch(size=8, forest_cover=2 / 64, seed=2)
    a1 = sample_anchors([patch], _fields([patch]), n_anchors=5, seed=3)
    a2 = sample_anchors([patch], _fields([patch]), n_anchors=5, seed=3)
    assert a1.n == 2 and not np.array_equal(a1.positions[0], a1.positions[1])
    assert np.array_equal(a1.positions, a2.positions)


def test_fewer_than_two_eligible_raises():
    patch = make_patch(size=8, forest_cover=1 / 64, seed=3)
    with pytest.raises(InsufficientAnchorsError):
        sample_anchors([patch], _fields([patch]), n_anchors=4, seed=0)


def test_unlabeled_and_nonforest_pixels_excluded():
    labeled = make_patch(name="l", size=8, forest_cover=0.5, seed=4)
    unlabeled = make_patch(name="u", size=8, forest_cover=1.0, labeled=False, seed=5)
    batch = [labeled, unlabeled]
    anchors = sample_anchors(batch, _fields(batch), n_anchors=1000, seed=0)
    assert np.all(anchors.positions[:, 0] == 0)
    for _, r, c in anchors.positions:
        assert labeled.forest_mask[r, c]
        assert np.isfinite(labeled.reference[r, c])


def test_nodata_reference_pixels_excluded():
    patch = make_patch(size=8, forest_cover=1.0, seed=6)
    patch.reference[0, :] = np.nan
    anchors = sample_anchors([patch], _fields([patch]), n_anchors=1000, seed=0)
    assert anchors.n == 56
    assert np.all(anchors.positions[:, 1] != 0)


def test_no_duplicate_positions():
    patch = make_patch(size=8, seed=7)
    anchors = sample_anchors([patch], _fields([patch]), n_anchors=64, seed=1)
    uniq = {tuple(row) for row in anchors.positions}
    assert len(uniq) == anchors.n == 64


def test_heights_equal_reference_exactly():
    batch = [make_patch(name=f"p{i}", size=8, seed=10 + i) for i in range(3)]
    anchors = sample_anchors(batch, _fields(batch), n_anchors=40, seed=2)
    for (b, r, c), h in zip(anchors.positions, anchors.heights):
        assert h == batch[b].reference[r, c]


def test_embeddings_unit_norm_and_grad():
    batch = [make_patch(size=8, seed=20)]
    fields = _fields(batch).requires_grad_(True)
    anchors = sample_anchors(batch, fields, n_anchors=10, seed=4)
    norms = torch.linalg.vector_norm(anchors.embeddings, dim=1)
    assert torch.allclose(norms, torch.ones_like(norms), atol=1e-5)
    assert anchors.embeddings.requires_grad
    anchors.embeddings.sum().backward()
    assert fields.grad is not None and float(fields.grad.abs().sum()) > 0


def test_shape_contract_errors():
    batch = [make_patch(size=8, seed=30)]
    with pytest.raises(ContractError):
        sample_anchors(batch, torch.randn(2, 8, 8, 8), n_anchors=4, seed=0)
    with pytest.raises(ContractError):
        sample_anchors(batch, torch.randn(1, 8, 4, 4), n_anchors=4, seed=0)


def test_inclusion_frequency_uniform():
    # pool of 50 eligible pixels, draw 10, over 10^4 seeded draws; every pixel's
    # inclusion frequency must sit within 3 sigma of the binomial expectation
    patch = make_patch(size=16, forest_cover=50 / 256, seed=40)
    fields = _fields([patch])
    mask = eligible_pixel_mask([patch])
    assert mask.sum() == 50
    counts = np.zeros((16, 16))
    n_draws = 10_000
    for seed in range(n_draws):
        anchors = sample_anchors([patch], fields, n_anchors=10, seed=seed)
        for _, r, c in anchors.positions:
            counts[r, c] += 1
    freq = counts[mask[0]] / n_draws
    p = 10 / 50
    sigma = np.sqrt(p * (1 - p) / n_draws)
    assert np.all(np.abs(freq - p) < 3 * sigma)
