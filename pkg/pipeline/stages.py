"""Experiment stages over one run directory.

Every stage reads its upstream artifacts through the run store, writes its
own outputs under ``runs/<run-id>/`` and records them in the stage ledger.
A stage with the same configuration fingerprint and untouched outputs is a
no-op when resuming.
"""
import hashlib
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.stats import pearsonr

from config.experiment import ABLATIONS, ConfigurationError, EncoderConfig, ExperimentConfig, TokenizerConfig
from config.settings import settings
from connectors.artifact_store import RunStore, file_checksum
from connectors.dataset_store import DatasetStore
from evalmetrics.classification import cooccurrence_matrix, mauc, reliability_diagram
from evalmetrics.harness import modality_drop_eval, scaling_harness
from evalmetrics.neighbors import npr
from evalmetrics.plots import (plot_cooccurrence, plot_radar, plot_reliability, plot_roc_curves,
                               plot_training_curve)
from evalmetrics.records import read_records, records_to_arrays, write_records
from evalmetrics.retrieval import grouped_retrieval
from explain.export import export_attribution, export_overlays
from explain.study import explain_study, hit_rates
from fairness.disparity import SubgroupSpec
from fairness.plots import plot_region_heat
from fairness.report import exposure_odds_ratios, fairness_report, region_summary
from heads.context import ContextEmbedding, build_context_embeddings, fuse_context
from heads.training import (TrainedHead, acuity_confusion, mean_absolute_error, per_class_auroc,
                            train_acuity_head, train_age_head, train_diagnosis_head, train_referral_head)
from hvit.checkpoint import load_checkpoint, save_checkpoint, state_checksum
from hvit.params import count_parameters, parameter_report
from llm.clients import build_context_client, build_label_client, build_summary_client
from objectives.model import ClipModel, EmbeddingSet, embed_examples, embed_inputs
from objectives.trainer import ClipTrainingResult, train_clip, validation_retrieval
from reporting.formatter import SummaryFormatter
from synthcohort.generator import generate_cohort
from synthcohort.mapping import ACUITY_LEVELS, MappingTable
from textenc.labeling import label_cohort
from textenc.name_encoder import name_silhouette, pretrain_name_encoder
from textenc.report_lm import ReportEncoder, ReportLM, perplexity, pretrain_report_lm
from textenc.vocab import WordVocab
from voltok.model import VQTokenizer
from voltok.patching import PatchSpec
from voltok.tokens import TokenCache, tokenize_and_cache
from voltok.training import collect_patches, train_tokenizer
from .inputs import CohortView, assign_splits, build_example

logger = logging.getLogger(__name__)

# artifacts, relative to the run directory
DATASET = 'dataset/manifest.jsonl'
TOKENIZER = 'checkpoints/tokenizer.pt'
TOKEN_INDEX = 'caches/token_index.json'
REPORT_LM = 'checkpoints/report_lm.pt'
NAME_ENCODER = 'checkpoints/name_encoder.pt'
CLIP = 'checkpoints/clip.pt'
CONTEXT = 'caches/context.npz'
HEAD_TASKS = ('diagnosis', 'diagnosis_context', 'referral', 'acuity', 'age')
HEAD_PATHS = {task: f'checkpoints/heads/{task}.pt' for task in HEAD_TASKS}
PREDICTIONS = 'metrics/predictions.jsonl'
BUNDLE = 'metrics/bundle.json'

PRODUCERS = {
    DATASET: 'generate',
    TOKENIZER: 'train-tokenizer',
    TOKEN_INDEX: 'tokenize',
    REPORT_LM: 'pretrain-text',
    NAME_ENCODER: 'pretrain-text',
    CLIP: 'train-clip',
    CONTEXT: 'probe',
    PREDICTIONS: 'evaluate',
    BUNDLE: 'evaluate',
    **{path: 'probe' for path in HEAD_PATHS.values()},
}

PIPELINE = ('generate', 'train-tokenizer', 'tokenize', 'pretrain-text', 'train-clip', 'probe', 'evaluate',
            'explain', 'fairness')


@dataclass
class StageResult:
    stage: str
    skipped: bool = False
    outputs: Dict[str, str] = field(default_factory=dict)
    summary: Dict = field(default_factory=dict)


class StageContext:
    """One configuration bound to its run directory, with lazily loaded upstream artifacts."""

    def __init__(self, cfg: ExperimentConfig, runs_dir: Path, show_progress: bool = False):
        self.cfg = cfg
        self.store = RunStore(runs_dir, cfg.run_id)
        self.store.archive_config(cfg.canonical_json())
        self.show_progress = show_progress
        self.embedding_cache_hit: Optional[bool] = None
        self._view: Optional[CohortView] = None

    @property
    def seed(self) -> int:
        return self.cfg.seed

    @property
    def class_names(self) -> List[str]:
        return self.cfg.cohort.label_names

    @property
    def patch_spec(self) -> PatchSpec:
        return PatchSpec(tuple(self.cfg.tokenizer.patch_dims), self.cfg.tokenizer.latent_dim)

    @property
    def mapping(self) -> MappingTable:
        return MappingTable.from_labels(self.cfg.cohort.labels)

    def dataset(self) -> DatasetStore:
        self.store.require(DATASET, PRODUCERS[DATASET])
        return DatasetStore(self.store.path('dataset'))

    def tokenizer(self) -> VQTokenizer:
        return VQTokenizer.load(self.store.require(TOKENIZER, PRODUCERS[TOKENIZER]))

    def token_cache(self) -> TokenCache:
        return TokenCache(self.store.path('caches/tokens'))

    def view(self) -> CohortView:
        """Cohort plus training examples; token grids come from the cache written by ``tokenize``."""
        if self._view is None:
            self.store.require(TOKEN_INDEX, PRODUCERS[TOKEN_INDEX])
            dataset = self.dataset()
            studies = dataset.read_cohort()
            tokenizer = self.tokenizer()
            codebook, checksum = tokenizer.codebook(), tokenizer.checksum()
            cache = self.token_cache()
            summary_client = build_summary_client(self.cfg.llm, self.store.path('metrics/llm_transcript.jsonl'))
            examples = []
            for study in studies:
                grids = tokenize_and_cache(study, tokenizer, codebook, self.patch_spec, self.cfg.tokenizer.threshold,
                                           cache, checksum)
                example = build_example(study, grids, summary_client)
                if example is not None:
                    examples.append(example)
            self._view = CohortView(studies=studies, examples=examples, report_labels=dataset.report_labels())
        return self._view

    def report_encoder(self) -> ReportEncoder:
        payload = torch.load(self.store.require(REPORT_LM, PRODUCERS[REPORT_LM]), map_location='cpu',
                             weights_only=False)
        vocab = WordVocab.from_dict(payload['vocab'])
        model = ReportLM(len(vocab), self.cfg.text)
        model.load_state_dict(payload['state_dict'])
        return ReportEncoder(model=model, vocab=vocab, val_perplexity=list(payload['val_perplexity']))

    def name_encoder_state(self) -> Dict:
        payload = torch.load(self.store.require(NAME_ENCODER, PRODUCERS[NAME_ENCODER]), map_location='cpu',
                             weights_only=False)
        return payload['state_dict']

    def build_clip(self, cfg: Optional[ExperimentConfig] = None) -> ClipModel:
        """Fresh CLIP model with the pretrained report LM and sequence-name encoder."""
        cfg = cfg or self.cfg
        torch.manual_seed(cfg.seed)
        model = ClipModel(cfg, cfg.tokenizer.latent_dim, self.report_encoder())
        model.load_name_encoder(self.name_encoder_state())
        return model

    def clip(self) -> Tuple[ClipModel, str]:
        state, _, _ = load_checkpoint(self.store.require(CLIP, PRODUCERS[CLIP]))
        model = ClipModel(self.cfg, self.cfg.tokenizer.latent_dim, self.report_encoder())
        model.load_state_dict(state)
        model.eval()
        return model, state_checksum(state)

    def embeddings(self, model: ClipModel, clip_checksum: str) -> EmbeddingSet:
        """Embeddings of every example, cached by (CLIP checksum, token index checksum)."""
        key = hashlib.sha256(f'{clip_checksum}:{self.store.checksum(TOKEN_INDEX)}:'
                             f'{self.cfg.objective.use_summaries}'.encode()).hexdigest()[:16]
        path = self.store.path(f'caches/embeddings_{key}.npz')
        if path.exists():
            with np.load(path) as data:
                emb = EmbeddingSet(study_ids=[str(s) for s in data['study_ids']], study=data['study'],
                                   v_m=data['v_m'], v_r=data['v_r'])
            self.embedding_cache_hit = True
            logger.info(f'embedding cache hit {path.name}', extra={'fields': {'embedding_cache': 'hit'}})
            return emb
        emb = embed_examples(model, self.view().examples, self.cfg.objective.use_summaries)
        np.savez(path, study_ids=np.asarray(emb.study_ids), study=emb.study, v_m=emb.v_m, v_r=emb.v_r)
        self.embedding_cache_hit = False
        logger.info(f'embedding cache miss; wrote {path.name}', extra={'fields': {'embedding_cache': 'miss'}})
        return emb

    def context(self) -> Dict[str, np.ndarray]:
        with np.load(self.store.require(CONTEXT, PRODUCERS[CONTEXT])) as data:
            return {str(s): row for s, row in zip(data['study_ids'], data['vectors'])}

    def head(self, task: str) -> TrainedHead:
        return TrainedHead.load(self.store.require(HEAD_PATHS[task], PRODUCERS[HEAD_PATHS[task]]))

    def outputs(self, rels: Sequence[str]) -> Dict[str, str]:
        return {rel: self.store.checksum(rel) for rel in rels}


# ---------------------------------------------------------------------------
# Stage bodies: each returns (output paths, summary)
# ---------------------------------------------------------------------------

def _generate(ctx: StageContext) -> Tuple[List[str], Dict]:
    cfg = ctx.cfg
    studies = generate_cohort(cfg.cohort, cfg.seed)
    splits = assign_splits(studies, cfg.objective.val_fraction, cfg.objective.test_fraction, cfg.seed)
    client = build_label_client(cfg.llm, ctx.store.path('metrics/llm_transcript.jsonl'))
    report_labels = label_cohort(studies, cfg.cohort.labels, client, cfg.llm.max_concurrency)
    DatasetStore(ctx.store.path('dataset')).write_cohort(studies, report_labels)

    truth = np.stack([s.labels.array for s in studies])
    derived = np.stack([report_labels[s.study_id].array for s in studies])
    labeled = derived != -1
    summary = {
        'n_studies': len(studies),
        'n_abnormal': int(sum(s.abnormal for s in studies)),
        'splits': splits,
        'prevalence': {name: float(truth[:, i].mean()) for i, name in enumerate(ctx.class_names)},
        'label_agreement': float((derived[labeled] == truth[labeled]).mean()) if labeled.any() else float('nan'),
        'unlabeled_entries': int((~labeled).sum()),
    }
    ctx.store.write_json('metrics/generate.json', summary)
    return [DATASET, 'metrics/generate.json'], summary


def _train_tokenizer(ctx: StageContext) -> Tuple[List[str], Dict]:
    cfg = ctx.cfg
    train = [s for s in ctx.dataset().read_cohort() if s.split == 'train']
    patches = collect_patches(train, ctx.patch_spec, cfg.tokenizer.threshold, cfg.tokenizer.max_train_patches,
                              np.random.default_rng(cfg.seed))
    trained = train_tokenizer(patches, cfg.tokenizer, cfg.seed, show_progress=ctx.show_progress)
    checksum = trained.model.save(ctx.store.path(TOKENIZER), cfg.tokenizer)
    history = trained.history
    summary = {
        'checksum': checksum,
        'n_patches': int(len(patches)),
        'initial_val_l1': history.initial_val_l1,
        'final_val_l1': history.final_val_l1,
        'permutation_ratio': history.permutation_ratio,
        'usage_perplexity': trained.codebook.usage_perplexity(),
        'compression': ctx.patch_spec.compression,
        'history': history.as_dict(),
    }
    ctx.store.write_json('metrics/tokenizer.json', summary)
    return [TOKENIZER, 'metrics/tokenizer.json'], summary


def _tokenize(ctx: StageContext) -> Tuple[List[str], Dict]:
    cfg = ctx.cfg
    tokenizer = ctx.tokenizer()
    codebook, checksum = tokenizer.codebook(), tokenizer.checksum()
    cache = ctx.token_cache()
    index = {}
    for study in ctx.dataset().read_cohort():
        grids = tokenize_and_cache(study, tokenizer, codebook, ctx.patch_spec, cfg.tokenizer.threshold, cache,
                                   checksum)
        index[study.study_id] = {name: {'n_tokens': g.n_tokens, 'n_kept': g.n_kept} for name, g in grids.items()}
    empty = sum(1 for seqs in index.values() for s in seqs.values() if s['n_kept'] == 0)
    ctx.store.write_json(TOKEN_INDEX, {'tokenizer_checksum': checksum, 'threshold': cfg.tokenizer.threshold,
                                       'studies': index})
    summary = {'tokenizer_checksum': checksum, 'n_studies': len(index), 'cache_hits': cache.hits,
               'cache_misses': cache.misses, 'empty_sequences': empty}
    logger.info(f'tokenized {len(index)} studies ({cache.hits} cache hits, {cache.misses} misses)',
                extra={'fields': summary})
    return [TOKEN_INDEX], summary


def _pretrain_text(ctx: StageContext) -> Tuple[List[str], Dict]:
    cfg = ctx.cfg
    view = ctx.view()
    use_summaries = cfg.objective.use_summaries
    train_texts = [e.text(use_summaries) for e in view.split('train')]
    val_texts = [e.text(use_summaries) for e in view.split('val')]
    encoder = pretrain_report_lm(train_texts, val_texts, cfg.text, cfg.seed, show_progress=ctx.show_progress)
    torch.save({'state_dict': encoder.model.state_dict(), 'vocab': encoder.vocab.to_dict(),
                'val_perplexity': encoder.val_perplexity}, ctx.store.path(REPORT_LM))

    train_pairs = [(g.seq_name, g) for e in view.split('train') for g in e.grids]
    val_pairs = [(g.seq_name, g) for e in view.split('val') for g in e.grids]
    names = pretrain_name_encoder(train_pairs, cfg.text, cfg.seed, show_progress=ctx.show_progress)
    torch.save({'state_dict': names.encoder.state_dict()}, ctx.store.path(NAME_ENCODER))

    groups = [f'{g.plane}/{g.kind}' for _, g in val_pairs]
    try:
        silhouette = name_silhouette(names.encoder, [n for n, _ in val_pairs], groups)
    except ValueError as e:
        logger.warning(f'name silhouette undefined: {e}')
        silhouette = float('nan')
    summary = {
        'report_perplexity_before': encoder.val_perplexity[0],
        'report_perplexity_after': encoder.val_perplexity[-1],
        'report_perplexity_val': perplexity(encoder, val_texts),
        'vocab_size': len(encoder.vocab),
        'name_retrieval_top1': names.retrieval_top1(val_pairs[:cfg.objective.batch_size]),
        'name_silhouette': silhouette,
        'name_train_loss': names.train_loss,
    }
    ctx.store.write_json('metrics/text.json', summary)
    return [REPORT_LM, NAME_ENCODER, 'metrics/text.json'], summary


def _fit_clip(ctx: StageContext, cfg: ExperimentConfig, train, val, tag: str,
              checkpoint_dir: Optional[Path] = None) -> Tuple[ClipModel, ClipTrainingResult]:
    log_path = ctx.store.path(f'metrics/{tag}_log.jsonl')
    log_path.unlink(missing_ok=True)
    model = ctx.build_clip(cfg)
    result = train_clip(model, train, val, cfg.seed, checkpoint_dir=checkpoint_dir, metric_log=log_path,
                        show_progress=ctx.show_progress)
    return model, result


def _train_clip(ctx: StageContext) -> Tuple[List[str], Dict]:
    cfg = ctx.cfg
    view = ctx.view()
    model, result = _fit_clip(ctx, cfg, view.split('train'), view.split('val'), 'clip',
                              checkpoint_dir=ctx.store.path('checkpoints/clip_steps'))
    checksum = save_checkpoint(ctx.store.path(CLIP), model.state_dict(), cfg.canonical_json(),
                               {'steps_to_target': result.steps_to_target, 'final': result.final})
    summary = {
        'checksum': checksum,
        'records': result.records,
        'final': result.final,
        'best_top1': result.best_top1,
        'steps_to_target': result.steps_to_target,
        'retrieval_target': cfg.objective.retrieval_target,
        'top5_dominates': all(r['top5'] >= r['top1'] for r in result.records),
        'encoder_parameters': count_parameters(cfg.encoder, cfg.tokenizer.latent_dim, cfg.text),
        'full_scale_parameters': parameter_report(EncoderConfig.full_scale(), TokenizerConfig.full_scale().latent_dim,
                                                  cfg.text),
    }
    outputs = [CLIP, 'metrics/clip.json', 'metrics/clip_log.jsonl']
    if cfg.eval.write_plots and result.records:
        outputs.append(ctx.store.relative(plot_training_curve(result.records, ctx.store.path('plots/clip.png'))))
    ctx.store.write_json('metrics/clip.json', summary)
    return outputs, summary


def _train_heads(ctx: StageContext, emb: EmbeddingSet, context: Dict[str, np.ndarray],
                 encoder_checksum: str) -> Dict[str, TrainedHead]:
    cfg, view = ctx.cfg, ctx.view()
    train_ids, val_ids = view.ids('train'), view.ids('val')
    x_train, x_val = emb.subset(train_ids).study, emb.subset(val_ids).study
    y_train, y_val = view.training_labels(train_ids), view.training_labels(val_ids)
    ctx_train = ContextEmbedding(np.stack([context[i] for i in train_ids]), cfg.heads.context_provider)
    ctx_val = ContextEmbedding(np.stack([context[i] for i in val_ids]), cfg.heads.context_provider)
    acuity_train, referral_train = view.acuity_and_referrals(y_train, ctx.mapping)
    acuity_val, referral_val = view.acuity_and_referrals(y_val, ctx.mapping)
    seed = cfg.seed
    return {
        'diagnosis': train_diagnosis_head(x_train, y_train, x_val, y_val, ctx.class_names, cfg.heads, seed,
                                          encoder_checksum),
        'diagnosis_context': train_diagnosis_head(fuse_context(x_train, ctx_train), y_train,
                                                  fuse_context(x_val, ctx_val), y_val, ctx.class_names, cfg.heads,
                                                  seed, encoder_checksum),
        'referral': train_referral_head(x_train, referral_train, x_val, referral_val, ctx.mapping.referral_names,
                                        cfg.heads, seed, encoder_checksum),
        'acuity': train_acuity_head(x_train, acuity_train, x_val, acuity_val, cfg.heads, seed, encoder_checksum),
        'age': train_age_head(x_train, view.ages(train_ids), x_val, view.ages(val_ids), cfg.heads, seed,
                              encoder_checksum),
    }


def _probe(ctx: StageContext) -> Tuple[List[str], Dict]:
    cfg = ctx.cfg
    view = ctx.view()
    model, checksum = ctx.clip()
    emb = ctx.embeddings(model, checksum)

    client = build_context_client(cfg.heads.context_provider, cfg.llm, ctx.store.path('metrics/llm_transcript.jsonl'))
    ids = [e.study_id for e in view.examples]
    context = build_context_embeddings([view.by_id[i].report for i in ids], client, cfg.heads.context_dim,
                                       cfg.heads.context_provider, cfg.llm.max_concurrency)
    np.savez(ctx.store.path(CONTEXT), study_ids=np.asarray(ids), vectors=context.vectors)

    heads = _train_heads(ctx, emb, dict(zip(ids, context.vectors)), checksum)
    for task, head in heads.items():
        head.save(ctx.store.path(HEAD_PATHS[task]))
    unchanged = state_checksum(model.state_dict()) == checksum
    summary = {
        'encoder_checksum': checksum,
        'encoder_unchanged': unchanged,
        'context_dim': context.dim,
        'heads': {task: {'best_epoch': h.best_epoch, 'best_val_score': h.best_score} for task, h in heads.items()},
        'inactive_classes': [n for n, a in zip(ctx.class_names, heads['diagnosis'].active) if not a],
        'positive_weights': dict(zip(ctx.class_names, heads['diagnosis'].pos_weight.tolist())),
    }
    ctx.store.write_json('metrics/probe.json', summary)
    return [CONTEXT, *HEAD_PATHS.values(), 'metrics/probe.json'], summary


def _contrast_groups(ctx: StageContext) -> Dict[str, List[str]]:
    """Classes most visible on T1-like vs T2-like sequences."""
    groups = {'T1': [], 'T2': []}
    for spec in ctx.cfg.cohort.labels:
        t1, t2 = abs(spec.contrast.get('T1', 0.0)), abs(spec.contrast.get('T2', 0.0))
        if t1 != t2:
            groups['T1' if t1 > t2 else 'T2'].append(spec.name)
    return groups


def _acuity_summary(head: TrainedHead, x: np.ndarray, levels: np.ndarray) -> Dict:
    confusion = acuity_confusion(head, x, levels)
    n = confusion.sum(axis=1)
    extreme = (confusion[0, 2] + confusion[2, 0]) / max(n[0] + n[2], 1)
    adjacent = (confusion[0, 1] + confusion[1, 0] + confusion[1, 2] + confusion[2, 1]) / max(n[0] + 2 * n[1] + n[2], 1)
    priority = head.priority_score(x)
    rho = float(pearsonr(priority, levels)[0]) if np.std(levels) > 0 and np.std(priority) > 0 else float('nan')
    return {
        'accuracy': float(np.trace(confusion) / max(confusion.sum(), 1)),
        'confusion': confusion.tolist(),
        'normal_high_confusion': float(extreme),
        'adjacent_confusion': float(adjacent),
        'priority_pearson': rho,
        'levels': list(ACUITY_LEVELS),
    }


def _evaluate(ctx: StageContext) -> Tuple[List[str], Dict]:
    cfg = ctx.cfg
    view = ctx.view()
    model, checksum = ctx.clip()
    emb = ctx.embeddings(model, checksum)
    context = ctx.context()
    heads = {task: ctx.head(task) for task in HEAD_TASKS}

    test_ids = view.ids('test')
    test = emb.subset(test_ids)
    truth = view.truth(test_ids)
    attributes = view.attributes(test_ids)
    bundle = {'run_id': ctx.store.run_id, 'seed': cfg.seed, 'encoder_checksum': checksum, 'n_test': len(test_ids)}

    bundle['retrieval'] = grouped_retrieval(test.v_m, test.v_r, group_size=min(cfg.eval.group_size, len(test_ids)),
                                            seed=cfg.seed, ks=cfg.eval.retrieval_ks).as_dict()

    records = heads['diagnosis'].records(test.study, truth, test_ids, attributes, 'test')
    write_records(ctx.store.path(PREDICTIONS), records)
    diagnosis = mauc(records, ctx.class_names)
    bundle['diagnosis'] = diagnosis.as_dict()
    fused = fuse_context(test.study, ContextEmbedding(np.stack([context[i] for i in test_ids]),
                                                       cfg.heads.context_provider))
    bundle['diagnosis_context'] = mauc(heads['diagnosis_context'].records(fused, truth, test_ids, attributes, 'test'),
                                       ctx.class_names).as_dict()

    scores, labels = records_to_arrays(records)
    bins = reliability_diagram(scores.ravel(), labels.ravel(), cfg.eval.reliability_bin, cfg.heads.decision_threshold)
    bundle['reliability'] = [vars(b) for b in bins]
    cooc = cooccurrence_matrix(records, ctx.class_names, cluster=cfg.eval.cluster_cooccurrence)
    bundle['cooccurrence'] = {'order': cooc.order, 'class_names': cooc.class_names, 'auc': cooc.auc.tolist(),
                              'label_correlation': cooc.label_correlation.tolist()}
    k = min(cfg.eval.npr_k, len(test_ids) - 1)
    bundle['npr'] = {name: vars(r) for name, r in npr(test.study, truth, ctx.class_names, k).items()}

    levels, referrals = view.acuity_and_referrals(truth, ctx.mapping)
    bundle['acuity'] = _acuity_summary(heads['acuity'], test.study, levels)
    ages = view.ages(test_ids)
    bundle['age'] = {'mae': mean_absolute_error(heads['age'], test.study, ages), 'population_sd': float(ages.std())}
    referral_auc = per_class_auroc(heads['referral'], test.study, referrals)
    defined = [v for v in referral_auc.values() if not np.isnan(v)]
    bundle['referral'] = {'mean_auroc': float(np.mean(defined)) if defined else float('nan'),
                          'per_class': referral_auc}

    def score_fn(inputs):
        return heads['diagnosis'].predict(embed_inputs(model, inputs))

    drop = modality_drop_eval(score_fn, view.split('test'), truth, ctx.class_names,
                              cfg.eval.dropped_modality_pattern)
    groups = _contrast_groups(ctx)
    delta = drop.delta
    bundle['modality_drop'] = {
        **drop.as_dict(),
        'mean_delta': {kind: float(np.nanmean([delta[n] for n in names])) if names else float('nan')
                       for kind, names in groups.items()},
        'groups': groups,
    }

    outputs = [PREDICTIONS, BUNDLE, 'metrics/summary.html', 'metrics/summary.txt']
    if cfg.eval.write_plots:
        plots = [
            plot_roc_curves(scores, labels, ctx.class_names, diagnosis.per_class, ctx.store.path('plots/roc.png')),
            plot_reliability(bins, ctx.store.path('plots/reliability.png')),
            plot_radar(diagnosis.per_class, ctx.store.path('plots/radar.png')),
            plot_cooccurrence(cooc.ordered(), ctx.store.path('plots/cooccurrence.png')),
        ]
        outputs += [ctx.store.relative(p) for p in plots]
    ctx.store.write_json(BUNDLE, bundle)

    formatter = SummaryFormatter()
    html, plain = formatter.format_evaluation(bundle, ctx.store.run_id, cfg.seed)
    formatter.write(ctx.store.path('metrics'), 'summary', html, plain)
    summary = {'mauc': diagnosis.mean, 'mauc_context': bundle['diagnosis_context']['mauc'],
               'top1': bundle['retrieval'].get('top1'), 'embedding_cache_hit': ctx.embedding_cache_hit}
    return outputs, summary


def _explain(ctx: StageContext) -> Tuple[List[str], Dict]:
    cfg = ctx.cfg
    view = ctx.view()
    model, _ = ctx.clip()
    head = ctx.head('diagnosis')
    targets = [e for e in view.split('test') if e.abnormal][:cfg.explain.max_studies]

    attributions, rows, outputs = [], [], []
    for n, example in enumerate(targets):
        study = view.by_id[example.study_id]
        classes = [c for c in study.labels.positives if head.active is None or head.active[c]]
        for item in explain_study(model.encoder, head, example, study, classes, cfg.cohort.labels, cfg.explain,
                                  seed=cfg.seed + n):
            name = ctx.class_names[item.class_index]
            attributions.append(item)
            rows.append(item.as_row(example.study_id, name))
            stem = re.sub(r'[^A-Za-z0-9_.-]+', '_', f'{example.study_id}_{name}')
            outputs.append(ctx.store.relative(
                export_attribution(ctx.store.path(f'metrics/attributions/{stem}.json'), example.study_id,
                                   name, item.attribution)))
            if cfg.explain.export_overlays:
                voxels = next(s.voxels for s in study.sequences if s.seq_name == item.seq_name)
                for path in export_overlays(ctx.store.path(f'plots/overlays/{stem}'), voxels, item.attribution,
                                            cfg.explain.top_k):
                    outputs.append(ctx.store.relative(path))

    rates = hit_rates(attributions)
    summary = {'n_studies': len(targets), 'n_attributions': len(rows), 'top_k': cfg.explain.top_k, **rates,
               'attributions': rows}
    ctx.store.write_json('metrics/explain.json', summary)
    logger.info(f"top-{cfg.explain.top_k} lesion hit rate {rates['hit_rate']:.3f} over {len(rows)} attributions "
                f"({rates['n_unscorable']} unscorable)",
                extra={'fields': {'n_attributions': len(rows), **rates}})
    return ['metrics/explain.json', *outputs], {k: v for k, v in summary.items() if k != 'attributions'}


def _fairness(ctx: StageContext) -> Tuple[List[str], Dict]:
    cfg = ctx.cfg
    records = read_records(ctx.store.require(PREDICTIONS, PRODUCERS[PREDICTIONS]))
    specs = [SubgroupSpec.from_config(s) for s in cfg.fairness.subgroups]
    categories = {spec.name: spec.category for spec in cfg.cohort.labels}
    n_regions = len(cfg.cohort.attributes.region_probs)
    long_days = cfg.cohort.bias.long_turnaround_days
    report = fairness_report(records, specs, ctx.class_names, cfg.fairness, categories, long_days, n_regions,
                             cfg.seed)
    # turnaround exposure is a property of the whole cohort, not of the test split
    cohort_attributes = [s.attributes.as_dict() for s in ctx.dataset().read_cohort()]
    report.exposures = exposure_odds_ratios(cohort_attributes, long_days, n_regions)

    payload = report.as_dict()
    ctx.store.write_json('metrics/fairness.json', payload)
    outputs = ['metrics/fairness.json', 'metrics/fairness.html', 'metrics/fairness.txt']
    if cfg.eval.write_plots:
        path = plot_region_heat(region_summary(report, n_regions), ctx.store.path('plots/regions.png'))
        outputs.append(ctx.store.relative(path))
    formatter = SummaryFormatter()
    html, plain = formatter.format_fairness(payload, ctx.store.run_id, cfg.seed)
    formatter.write(ctx.store.path('metrics'), 'fairness', html, plain)
    summary = {'n_flagged': len(report.flagged), 'threshold': report.threshold,
               'n_tested': sum(r.p_value is not None for r in report.disparities + report.intersectional
                               + report.categories)}
    return outputs, summary


def _scale_sweep(ctx: StageContext) -> Tuple[List[str], Dict]:
    cfg = ctx.cfg
    view = ctx.view()
    train, val = view.split('train'), view.split('val')

    def pipeline(fraction: float, seed: int) -> Dict[str, float]:
        rng = np.random.default_rng(np.random.SeedSequence((seed, int(fraction * 1000))))
        n = max(cfg.objective.batch_size, int(round(fraction * len(train))))
        subset = [train[i] for i in sorted(rng.choice(len(train), size=min(n, len(train)), replace=False))]
        model, result = _fit_clip(ctx, cfg.with_seed(seed), subset, val, f'scale_{fraction}_{seed}')
        top = validation_retrieval(model, val, cfg.eval.group_size, cfg.seed, cfg.objective.use_summaries)
        return {'top1': top[1], 'top5': top[5], 'n_train': float(len(subset)),
                'steps_to_target': float(result.steps_to_target or np.nan)}

    report = scaling_harness(cfg.eval.scaling_fractions, cfg.eval.scaling_seeds, pipeline, metric='top1')
    payload = report.as_dict()
    ctx.store.write_json('metrics/scaling.json', payload)
    return ['metrics/scaling.json'], {'medians': payload['medians'], 'inversions': report.inversions,
                                      'monotone': report.monotone}


def _design_run(ctx: StageContext, cfg: ExperimentConfig, tag: str) -> Dict:
    """Train CLIP under one design variant and score a linear diagnosis head on validation."""
    view = ctx.view()
    model, result = _fit_clip(ctx, cfg, view.split('train'), view.split('val'), tag)
    emb = embed_examples(model, view.split('train') + view.split('val'), cfg.objective.use_summaries)
    train_ids, val_ids = view.ids('train'), view.ids('val')
    head = train_diagnosis_head(emb.subset(train_ids).study, view.training_labels(train_ids),
                                emb.subset(val_ids).study, view.training_labels(val_ids), ctx.class_names,
                                cfg.heads, cfg.seed)
    aucs = per_class_auroc(head, emb.subset(val_ids).study, view.truth(val_ids))
    defined = [v for v in aucs.values() if not np.isnan(v)]
    return {'steps_to_target': result.steps_to_target, 'final': result.final, 'best_top1': result.best_top1,
            'val_mauc': float(np.mean(defined)) if defined else float('nan')}


def baseline_reaches_target_sooner(baseline: Dict, ablated: Dict) -> Optional[bool]:
    """None when neither run reached the retrieval target."""
    a, b = baseline['steps_to_target'], ablated['steps_to_target']
    if a is None and b is None:
        return None
    if b is None:
        return True
    return a is not None and a < b


def _ablate(ctx: StageContext, name: str) -> Tuple[List[str], Dict]:
    per_seed = []
    for seed in ctx.cfg.eval.ablation_seeds:
        cfg = ctx.cfg.with_seed(seed)
        baseline = _design_run(ctx, cfg, f'ablation_baseline_seed{seed}')
        ablated = _design_run(ctx, cfg.with_ablation(name), f'ablation_{name}_seed{seed}')
        per_seed.append({'seed': seed, 'baseline': baseline, 'ablated': ablated,
                         'baseline_sooner': baseline_reaches_target_sooner(baseline, ablated)})
    wins = sum(run['baseline_sooner'] is True for run in per_seed)
    payload = {'ablation': name, 'retrieval_target': ctx.cfg.objective.retrieval_target, 'per_seed': per_seed,
               'baseline_wins': wins, 'n_seeds': len(per_seed),
               'n_undecided': sum(run['baseline_sooner'] is None for run in per_seed),
               'baseline_sooner_majority': wins > len(per_seed) / 2}
    logger.info(f"ablation {name}: baseline reached the target sooner on {wins}/{len(per_seed)} seeds",
                extra={'fields': {'ablation': name, 'baseline_wins': wins, 'n_seeds': len(per_seed)}})
    rel = f'metrics/ablation_{name}.json'
    ctx.store.write_json(rel, payload)
    return [rel], payload


# ---------------------------------------------------------------------------
# Stage registry and driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Stage:
    name: str
    sections: Tuple[str, ...]
    requires: Tuple[str, ...]
    body: Callable[..., Tuple[List[str], Dict]]


_UPSTREAM_TEXT = ('cohort', 'tokenizer', 'text', 'objective', 'llm')
_MODEL = _UPSTREAM_TEXT + ('encoder',)

STAGES: Dict[str, Stage] = {s.name: s for s in (
    Stage('generate', ('cohort', 'objective', 'llm'), (), _generate),
    Stage('train-tokenizer', ('cohort', 'objective', 'llm', 'tokenizer'), (DATASET,), _train_tokenizer),
    Stage('tokenize', ('cohort', 'objective', 'llm', 'tokenizer'), (DATASET, TOKENIZER), _tokenize),
    Stage('pretrain-text', _UPSTREAM_TEXT, (DATASET, TOKEN_INDEX), _pretrain_text),
    Stage('train-clip', _MODEL + ('eval',), (TOKEN_INDEX, REPORT_LM, NAME_ENCODER), _train_clip),
    Stage('probe', _MODEL + ('heads',), (CLIP,), _probe),
    Stage('evaluate', _MODEL + ('heads', 'eval'), (CLIP, CONTEXT, *HEAD_PATHS.values()), _evaluate),
    Stage('explain', _MODEL + ('heads', 'explain'), (CLIP, HEAD_PATHS['diagnosis']), _explain),
    Stage('fairness', _MODEL + ('heads', 'fairness'), (PREDICTIONS,), _fairness),
    Stage('scale-sweep', _MODEL + ('eval',), (TOKEN_INDEX, REPORT_LM, NAME_ENCODER), _scale_sweep),
    Stage('ablate', _MODEL + ('heads', 'eval'), (TOKEN_INDEX, REPORT_LM, NAME_ENCODER), _ablate),
)}

STAGE_NAMES = tuple(STAGES) + ('all',)


def run_stage(stage: str, cfg: ExperimentConfig, runs_dir: Optional[Path] = None, resume: bool = False,
              ablation: Optional[str] = None, show_progress: bool = False,
              ctx: Optional[StageContext] = None) -> StageResult:
    """
    Run one stage of the experiment for ``cfg``.

    Args:
        stage: Stage name, or ``all`` for generate through fairness
        cfg: Validated experiment configuration
        runs_dir: Root of the run store (defaults to settings.RUNS_DIR)
        resume: Skip the stage when the ledger shows identical inputs and intact outputs
        ablation: Design toggle compared against the baseline by ``ablate``
        show_progress: Show tqdm bars in training loops
        ctx: Reuse a context (and its loaded cohort) across stages

    Returns:
        StageResult with the checksums of every output
    """
    ctx = ctx or StageContext(cfg, Path(runs_dir or settings.RUNS_DIR), show_progress)
    if stage == 'all':
        result = StageResult(stage='all')
        for name in PIPELINE:
            step = run_stage(name, cfg, resume=resume, ctx=ctx)
            result.outputs.update(step.outputs)
            result.summary[name] = step.summary
        return result
    if stage not in STAGES:
        raise ConfigurationError(f'unknown stage {stage!r}; expected one of {STAGE_NAMES}')

    spec = STAGES[stage]
    inputs = {'config': cfg.section_hash(*spec.sections)}
    for rel in spec.requires:
        inputs[rel] = file_checksum(ctx.store.require(rel, PRODUCERS[rel]))
    args = ()
    if stage == 'ablate':
        ablation = ablation or cfg.ablation.name
        if ablation not in ABLATIONS:
            raise ConfigurationError(f'ablate needs --ablation; one of {ABLATIONS}')
        inputs['ablation'] = ablation
        args = (ablation,)

    ledger = ctx.store.ledger
    if resume:
        should_run, previous = ledger.should_run(stage, inputs, ctx.store.root)
        if not should_run:
            logger.info(f'stage {stage}: inputs unchanged since {previous["completed_at"]}; skipped',
                        extra={'fields': {'stage': stage, 'skipped': True}})
            return StageResult(stage=stage, skipped=True, outputs=previous['outputs'])

    logger.info(f'stage {stage} started for run {ctx.store.run_id}', extra={'fields': {'stage': stage}})
    rels, summary = spec.body(ctx, *args)
    outputs = ctx.outputs(rels)
    ledger.log_completed(stage, inputs, outputs)
    logger.info(f'stage {stage} completed with {len(outputs)} outputs',
                extra={'fields': {'stage': stage, 'outputs': len(outputs)}})
    return StageResult(stage=stage, outputs=outputs, summary=summary)
