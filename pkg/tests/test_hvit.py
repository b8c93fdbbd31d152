"""Batching, the hierarchical encoder and checkpoint integrity."""
import numpy as np
import pytest
import torch

from config.experiment import EncoderConfig, TokenizerConfig
from connectors.artifact_store import ChecksumMismatchError
from hvit.batching import EmptySequenceError, SequenceInput, StudyInput, collate
from hvit.blocks import TransformerBlock
from hvit.checkpoint import load_checkpoint, save_checkpoint
from hvit.encoder import FlatEncoder, HierarchicalEncoder, build_encoder
from hvit.params import REFERENCE_PARAMETERS, block_parameter_count, count_parameters, parameter_report
from voltok.tokens import TokenGrid


def _sequence(rng, name, n_tokens, latent_dim, plane='axial'):
    coords = np.stack([rng.integers(0, 4, n_tokens), rng.integers(0, 4, n_tokens), rng.integers(0, 2, n_tokens)], 1)
    return SequenceInput(seq_name=name, kind='T1', plane=plane,
                         latents=rng.normal(size=(n_tokens, latent_dim)).astype(np.float32), coords=coords)


def _study(rng, study_id, sizes, latent_dim):
    names = ['AX_T1', 'AX_T2_FLAIR', 'COR_T2', 'SAG_T1_POST']
    planes = ['axial', 'axial', 'coronal', 'sagittal']
    return StudyInput(study_id, 'MRI BRAIN WO CONTRAST',
                      [_sequence(rng, names[i], n, latent_dim, planes[i]) for i, n in enumerate(sizes)])


@pytest.fixture
def encoder(config):
    torch.manual_seed(0)
    return HierarchicalEncoder(config.encoder, config.tokenizer.latent_dim, config.text).eval()


def test_collate_pads_tokens_and_sequences(config, rng):
    d = config.tokenizer.latent_dim
    batch = collate([_study(rng, 'a', [5, 3], d), _study(rng, 'b', [2, 7, 4], d)])
    assert batch.latents.shape == (5, 7, d)
    assert batch.token_pad.sum().item() == 5 * 7 - (5 + 3 + 2 + 7 + 4)
    assert batch.seq_slots.tolist() == [[0, 1, -1], [2, 3, 4]]
    assert batch.seq_pad.tolist() == [[False, False, True], [False, False, False]]
    assert batch.seq_to_study.tolist() == [0, 0, 1, 1, 1]
    assert batch.n_studies == 2


def test_empty_sequences_are_refused():
    grid = TokenGrid(seq_name='AX_T1', kind='T1', plane='axial', source_orientation=(0, 1, 2),
                     patch_dims=(4, 4, 2), threshold=0.5, coords=np.zeros((2, 3), dtype=int),
                     latents=np.zeros((2, 4), dtype=np.float32), codes=np.zeros(2, dtype=int),
                     kept=np.zeros(2, dtype=bool), mean_intensity=np.zeros(2))
    with pytest.raises(EmptySequenceError):
        SequenceInput.from_grid(grid)
    with pytest.raises(EmptySequenceError):
        StudyInput('s', 'MRI BRAIN', [])
    with pytest.raises(ValueError):
        collate([])


def test_output_shapes(config, encoder, rng):
    d = config.tokenizer.latent_dim
    batch = collate([_study(rng, 'a', [5, 3], d), _study(rng, 'b', [2, 7, 4], d)])
    with torch.no_grad():
        out = encoder(batch)
    assert out.vector.shape == (2, config.encoder.study.output_dim)
    assert out.per_sequence.shape == (5, config.encoder.sequence.output_dim)
    assert set(out.per_sequence_map(batch, 1)) == {'AX_T1', 'AX_T2_FLAIR', 'COR_T2'}


def test_registers_start_as_small_gaussians(config, encoder):
    flat = build_encoder(config.with_ablation('flat-transformer').encoder, config.tokenizer.latent_dim, config.text)
    for registers in (encoder.sequence_encoder.registers, encoder.study_encoder.registers, flat.registers):
        values = registers.detach()
        assert 0.005 < float(values.std()) < 0.05
        assert len(torch.unique(values[0], dim=0)) == values.shape[1]


def test_padding_does_not_change_a_study(config, encoder, rng):
    d = config.tokenizer.latent_dim
    small = _study(rng, 'a', [3, 2], d)
    big = _study(rng, 'b', [9, 6, 8, 5], d)
    with torch.no_grad():
        alone = encoder(collate([small])).vector[0]
        padded = encoder(collate([big, small])).vector[1]
    torch.testing.assert_close(alone, padded, atol=1e-5, rtol=1e-4)


def test_token_and_sequence_order_do_not_matter(config, encoder, rng):
    d = config.tokenizer.latent_dim
    study = _study(rng, 'a', [6, 4, 5], d)
    perm = rng.permutation(6)
    first = study.sequences[0]
    shuffled = StudyInput('a', study.study_name,
                          [SequenceInput(first.seq_name, first.kind, first.plane, first.latents[perm],
                                         first.coords[perm])] + study.sequences[1:][::-1])
    with torch.no_grad():
        a = encoder(collate([study])).vector
        b = encoder(collate([shuffled])).vector
    torch.testing.assert_close(a, b, atol=1e-5, rtol=1e-4)


def test_sequence_names_change_the_embedding(config, encoder, rng):
    d = config.tokenizer.latent_dim
    study = _study(rng, 'a', [4, 4], d)
    renamed = StudyInput('a', study.study_name, [
        SequenceInput('Sag_T1_MPRAGE_POST', s.kind, s.plane, s.latents, s.coords) for s in study.sequences])
    with torch.no_grad():
        a = encoder(collate([study])).vector
        b = encoder(collate([renamed])).vector
    assert not torch.equal(a, b)


def test_flat_encoder_matches_the_interface(config, rng):
    cfg = config.with_ablation('flat-transformer')
    model = build_encoder(cfg.encoder, cfg.tokenizer.latent_dim, cfg.text)
    assert isinstance(model, FlatEncoder)
    d = cfg.tokenizer.latent_dim
    batch = collate([_study(rng, 'a', [5, 3], d), _study(rng, 'b', [2, 7, 4], d)])
    with torch.no_grad():
        out = model.eval()(batch)
    assert out.vector.shape == (2, model.output_dim)
    assert out.per_sequence.shape == (5, model.sequence_dim)


def test_parameter_count_matches_the_modules(config, encoder):
    expected = sum(p.numel() for m in (encoder.sequence_encoder, encoder.study_encoder) for p in m.parameters())
    assert count_parameters(config.encoder, config.tokenizer.latent_dim, config.text) == expected

    block = TransformerBlock(dim=32, heads=4, dim_head=8, mlp_dim=64)
    assert block_parameter_count(32, 4, 8, 64) == sum(p.numel() for p in block.parameters())


def test_full_scale_count_is_reported_against_the_reference(config):
    full = count_parameters(EncoderConfig.full_scale(), TokenizerConfig.full_scale().latent_dim, config.text)
    assert full > 100 * count_parameters(config.encoder, config.tokenizer.latent_dim, config.text)
    report = parameter_report(EncoderConfig.full_scale(), TokenizerConfig.full_scale().latent_dim, config.text)
    assert f"{full:,}" in report and f"{REFERENCE_PARAMETERS / 1e6:.3f}M" in report


def test_checkpoint_round_trip_and_tamper_detection(tmp_path, config, encoder):
    path = tmp_path / 'encoder.pt'
    checksum = save_checkpoint(path, encoder.state_dict(), config.canonical_json(), {'step': 3})
    state, config_json, extra = load_checkpoint(path)
    assert config_json == config.canonical_json()
    assert extra == {'step': 3}
    assert set(state) == set(encoder.state_dict())

    payload = torch.load(path, weights_only=False)
    name = next(iter(payload['state_dict']))
    payload['state_dict'][name] = payload['state_dict'][name] + 1.0
    torch.save(payload, path)
    with pytest.raises(ChecksumMismatchError):
        load_checkpoint(path)
    assert len(checksum) == 64
