"""Patching, quantization, tokenizer training and the token cache."""
import time

import numpy as np
import pytest

from voltok.codebook import Codebook, quantize, quantize_many
from voltok.patching import (NonFiniteInputError, PatchSpec, inverse_permutation, patch_array, patch_volume,
                             permute_axes, random_axis_permutation)
from voltok.tokens import TokenCache, tokenize_and_cache
from voltok.training import collect_patches, train_tokenizer


def test_patches_cover_the_padded_grid_once():
    spec = PatchSpec((4, 4, 2), 4)
    voxels = np.arange(10 * 9 * 5, dtype=np.float32).reshape(10, 9, 5)
    coords, patches = patch_array(voxels, spec)
    assert spec.grid_shape(voxels.shape) == (3, 3, 3)
    assert len(coords) == 27 and patches.shape == (27, 4, 4, 2)
    assert len({tuple(c) for c in coords}) == 27
    assert np.isclose(patches.sum(), voxels.sum())
    first = dict(patch_volume(voxels, spec))[(0, 0, 0)]
    np.testing.assert_array_equal(first, voxels[:4, :4, :2])


def test_non_finite_volume_is_refused():
    voxels = np.zeros((4, 4, 2), dtype=np.float32)
    voxels[1, 1, 1] = np.nan
    with pytest.raises(NonFiniteInputError):
        patch_array(voxels, PatchSpec((4, 4, 2), 4))


def test_permutation_inverse_restores_the_patch(rng):
    patch = rng.random((4, 3, 2))
    for perm in [(0, 2, 1), (1, 2, 0), (2, 0, 1)]:
        restored = permute_axes(permute_axes(patch, perm), inverse_permutation(perm))
        np.testing.assert_array_equal(restored, patch)


def test_random_permutation_keeps_one_shape(rng):
    batch = [rng.random((4, 4, 2)) for _ in range(3)] + [rng.random((2, 2, 2))]
    permuted, perm = random_axis_permutation(batch, rng)
    assert len({p.shape for p in permuted}) == 1
    assert sorted(perm) == [0, 1, 2]


def test_quantize_matches_brute_force(rng):
    cb = Codebook(rng.normal(size=(16, 4)))
    z = rng.normal(size=(50, 4))
    indices, z_q = quantize_many(z, cb)
    for i, row in enumerate(z):
        distances = [float(((row - e) ** 2).sum()) for e in cb.entries.astype(np.float64)]
        assert indices[i] == int(np.argmin(distances))
        np.testing.assert_array_equal(z_q[i], cb.entries[indices[i]])


def test_quantize_is_exhaustive_search_across_codebook_sizes(rng):
    z = rng.normal(size=(1000, 8))
    elapsed = 0.0
    for size in (2, 8, 64, 256, 1024):
        cb = Codebook(rng.normal(size=(size, 8)))
        entries = cb.entries.astype(np.float64)
        start = time.perf_counter()
        indices, _ = quantize_many(z, cb)
        elapsed += time.perf_counter() - start
        expected = [int(np.argmin(((entries - row) ** 2).sum(axis=1))) for row in z]
        assert indices.tolist() == expected, size
    assert elapsed < 5.0


def test_quantize_ties_go_to_the_lowest_index():
    cb = Codebook(np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]]))
    assert quantize(np.array([0.0, 0.0]), cb)[0] == 0
    assert quantize(np.array([1.0, 0.0]), cb)[0] == 0


def test_quantize_rejects_bad_latents():
    cb = Codebook(np.eye(3))
    with pytest.raises(ValueError):
        quantize(np.zeros(2), cb)
    with pytest.raises(NonFiniteInputError):
        quantize(np.array([np.inf, 0.0, 0.0]), cb)


@pytest.fixture(scope='module')
def trained(config, cohort):
    spec = PatchSpec(tuple(config.tokenizer.patch_dims), config.tokenizer.latent_dim)
    patches = collect_patches(cohort[:8], spec, config.tokenizer.threshold, config.tokenizer.max_train_patches,
                              np.random.default_rng(0))
    return spec, train_tokenizer(patches, config.tokenizer, seed=0)


def test_tokenizer_training_reduces_reconstruction_error(trained):
    _, result = trained
    history = result.history
    assert history.final_val_l1 < history.initial_val_l1
    assert len(history.usage_perplexity) == 2
    assert np.isfinite(history.permutation_ratio)


def test_tokenizer_training_is_deterministic(config, cohort, trained):
    spec, result = trained
    patches = collect_patches(cohort[:8], spec, config.tokenizer.threshold, config.tokenizer.max_train_patches,
                              np.random.default_rng(0))
    again = train_tokenizer(patches, config.tokenizer, seed=0)
    assert again.checksum == result.checksum


def test_save_and_load_keep_the_checksum(tmp_path, config, trained):
    _, result = trained
    checksum = result.model.save(tmp_path / 'tokenizer.pt', config.tokenizer)
    loaded = type(result.model).load(tmp_path / 'tokenizer.pt')
    assert loaded.checksum() == checksum


def test_token_cache_serves_identical_grids(tmp_path, config, cohort, trained):
    spec, result = trained
    cache = TokenCache(tmp_path / 'tokens')
    first = tokenize_and_cache(cohort[0], result.model, result.codebook, spec, config.tokenizer.threshold, cache)
    assert cache.misses == len(cohort[0].sequences) and cache.hits == 0
    second = tokenize_and_cache(cohort[0], result.model, result.codebook, spec, config.tokenizer.threshold, cache)
    assert cache.hits == len(cohort[0].sequences)
    for name, grid in first.items():
        np.testing.assert_array_equal(grid.codes, second[name].codes)
        np.testing.assert_array_equal(grid.kept, second[name].kept)
        np.testing.assert_allclose(grid.latents, second[name].latents)


def test_background_filter_drops_empty_patches(tmp_path, config, cohort, trained):
    spec, result = trained
    grids = tokenize_and_cache(cohort[0], result.model, result.codebook, spec, config.tokenizer.threshold,
                               TokenCache(tmp_path / "tokens"))
    for grid in grids.values():
        assert grid.n_kept < grid.n_tokens
        assert np.all(grid.mean_intensity[grid.kept] >= config.tokenizer.threshold)
        assert grid.filtered(10.0).n_kept == 0
