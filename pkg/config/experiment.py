"""Experiment configuration: one validated document per run."""
import hashlib
import json
import math
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCHEMA_VERSION = 1

ABLATIONS = (
    'no-sequence-name',
    'no-study-description',
    'flat-transformer',
    'token-readout',
    'long-report',
    'no-patdis',
)


class ConfigurationError(ValueError):
    """Raised when a configuration is internally inconsistent."""


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


# ---------------------------------------------------------------------------
# Cohort
# ---------------------------------------------------------------------------

class LabelSpec(_Section):
    """One diagnosis class of the synthetic catalog."""

    name: str
    category: str
    phrase: str
    keywords: List[str]
    prevalence: float = Field(ge=0.0, le=1.0)
    acuity: Literal['normal', 'medium', 'high'] = 'medium'
    referrals: List[str] = Field(default_factory=list)
    contrast: Dict[Literal['T1', 'T2'], float]
    site: Tuple[float, float, float]
    lateralized: bool = True

    @field_validator('keywords')
    @classmethod
    def _keywords_present(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError('keywords must name at least one pattern')
        return [v.lower() for v in value]

    @field_validator('site')
    @classmethod
    def _site_inside(cls, value: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if not all(0.0 <= v <= 1.0 for v in value):
            raise ValueError('site coordinates are fractions of the grid in [0, 1]')
        return value


class RosterEntry(_Section):
    """One acquisition protocol a study may contain."""

    kind: Literal['T1', 'T2']
    plane: Literal['axial', 'coronal', 'sagittal']
    aliases: List[str]
    required: bool = False
    inclusion_prob: float = Field(default=0.5, ge=0.0, le=1.0)

    @field_validator('aliases')
    @classmethod
    def _aliases_present(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError('aliases must contain at least one sequence name')
        return value


class CooccurrenceRule(_Section):
    trigger: str
    implied: str
    probability: float = Field(ge=0.0, le=1.0)


class AttributeMarginals(_Section):
    female_prob: float = Field(default=0.52, ge=0.0, le=1.0)
    age_mean: float = 50.0
    age_sd: float = Field(default=20.0, ge=0.0)
    age_range: Tuple[float, float] = (1.0, 95.0)
    race_probs: List[float] = Field(default_factory=lambda: [0.70, 0.15, 0.08, 0.07])
    region_probs: List[float] = Field(default_factory=lambda: [0.30, 0.25, 0.15, 0.12, 0.10, 0.08])
    quartile_probs: List[float] = Field(default_factory=lambda: [0.25, 0.25, 0.25, 0.25])
    weekend_prob: float = Field(default=2.0 / 7.0, ge=0.0, le=1.0)
    insurer_probs: List[float] = Field(default_factory=lambda: [0.45, 0.40, 0.15])
    scanner_probs: List[float] = Field(default_factory=lambda: [0.40, 0.35, 0.25])

    @field_validator('race_probs', 'region_probs', 'quartile_probs', 'insurer_probs', 'scanner_probs')
    @classmethod
    def _is_distribution(cls, value: List[float]) -> List[float]:
        if not value or any(p < 0 for p in value) or abs(sum(value) - 1.0) > 1e-6:
            raise ValueError('categorical marginals must be non-negative and sum to 1')
        return value


class BiasModel(_Section):
    """Logistic link from attributes to P(turnaround > long_turnaround_days)."""

    intercept: float = -1.2
    rural_coef: float = 0.7
    region_coefs: List[float] = Field(default_factory=lambda: [0.0, 0.1, 0.3, 0.5, 0.7, 0.9])
    weekend_coef: float = 0.6931471805599453
    long_turnaround_days: float = Field(default=2.0, gt=0.0)
    long_tail_scale: float = Field(default=2.0, gt=0.0)


def _default_labels() -> List[LabelSpec]:
    rows = [
        ('glioma', 'neoplastic', 'infiltrative glioma', ['glioma'], 0.07, 'medium',
         ['neurosurgery', 'neuro_oncology'], {'T2': 0.35, 'T1': 0.0}, (0.35, 0.35, 0.5)),
        ('metastasis', 'neoplastic', 'enhancing metastatic lesion', ['metasta'], 0.06, 'medium',
         ['neuro_oncology'], {'T1': 0.35, 'T2': 0.0}, (0.65, 0.30, 0.5)),
        ('meningioma', 'neoplastic', 'extra-axial meningioma', ['meningioma'], 0.05, 'medium',
         ['neurosurgery'], {'T1': 0.30, 'T2': 0.05}, (0.30, 0.75, 0.5)),
        ('subdural_hematoma', 'vascular', 'subdural hematoma', ['subdural', 'hemat'], 0.05, 'high',
         ['neurosurgery'], {'T2': 0.30, 'T1': -0.25}, (0.18, 0.50, 0.5)),
        ('ischemic_stroke', 'vascular', 'acute ischemic infarct', ['infarct'], 0.06, 'high',
         ['neurology', 'stroke'], {'T2': 0.40, 'T1': 0.0}, (0.62, 0.62, 0.5)),
        ('microhemorrhage', 'vascular', 'chronic microhemorrhage', ['microhemorrhage'], 0.05, 'medium',
         ['neurology'], {'T2': -0.30, 'T1': 0.0}, (0.26, 0.60, 0.5)),
        ('obstructive_mass', 'structural', 'obstructive posterior fossa mass', ['posterior fossa', 'mass'], 0.04,
         'high', ['neurosurgery', 'pediatric_neurosurgery'], {'T2': 0.30, 'T1': -0.20}, (0.50, 0.86, 0.5)),
        ('ventriculomegaly', 'structural', 'ventriculomegaly', ['ventriculomegaly'], 0.05, 'medium',
         ['neurosurgery'], {'T2': 0.35, 'T1': -0.25}, (0.50, 0.50, 0.5)),
        ('arachnoid_cyst', 'structural', 'arachnoid cyst', ['arachnoid', 'cyst'], 0.05, 'normal',
         [], {'T2': 0.40, 'T1': -0.30}, (0.76, 0.72, 0.5)),
        ('demyelination', 'inflammatory', 'demyelinating plaques', ['demyelinat'], 0.05, 'medium',
         ['neurology'], {'T2': 0.35, 'T1': 0.0}, (0.40, 0.20, 0.5)),
        ('abscess', 'inflammatory', 'ring-enhancing abscess', ['abscess'], 0.03, 'high',
         ['neurosurgery', 'infectious_disease'], {'T1': 0.35, 'T2': 0.10}, (0.78, 0.45, 0.5)),
        ('edema', 'inflammatory', 'vasogenic edema', ['edema'], 0.05, 'medium',
         ['neurology'], {'T2': 0.30, 'T1': -0.10}, (0.58, 0.40, 0.5)),
    ]
    return [
        LabelSpec(name=n, category=c, phrase=p, keywords=k, prevalence=pr, acuity=a,
                  referrals=r, contrast=ct, site=s, lateralized=(n != 'ventriculomegaly'))
        for n, c, p, k, pr, a, r, ct, s in rows
    ]


def _default_roster() -> List[RosterEntry]:
    return [
        RosterEntry(kind='T1', plane='axial', aliases=['AX_T1', 'AX T1 SE', 'Ax_T1_MPRAGE'], required=True),
        RosterEntry(kind='T2', plane='axial', aliases=['AX_T2_FLAIR', 'Ax T2 FLAIR', 'AX_FLAIR'], required=True),
        RosterEntry(kind='T2', plane='coronal', aliases=['COR_T2', 'COR T2 TSE', 'Cor_T2'], inclusion_prob=0.5),
        RosterEntry(kind='T1', plane='sagittal', aliases=['SAG_T1_POST', 'SAG T1 +C', 'Sag_T1_MPRAGE_POST'],
                    inclusion_prob=0.5),
    ]


def _default_cooccurrence() -> List[CooccurrenceRule]:
    return [
        CooccurrenceRule(trigger='obstructive_mass', implied='ventriculomegaly', probability=0.7),
        CooccurrenceRule(trigger='glioma', implied='edema', probability=0.5),
        CooccurrenceRule(trigger='metastasis', implied='edema', probability=0.5),
    ]


class CohortConfig(_Section):
    """
    Cohort generator settings.

    With ``normal_fraction`` set, a study is first drawn normal or abnormal and
    the label prevalences become relative weights inside abnormal studies
    (labels are drawn conditioned on at least one being positive). With it
    unset, every label is an independent draw at its prevalence.

    Supplying ``labels`` without ``cooccurrence`` keeps only the default rules
    whose two labels are in the new catalog; supplying ``labels`` without
    ``normal_fraction`` switches to independent draws.
    """

    n_studies: int = Field(default=500, ge=1)
    grid: Tuple[int, int, int] = (32, 32, 8)
    labels: List[LabelSpec] = Field(default_factory=_default_labels)
    normal_fraction: Optional[float] = Field(default=0.4, ge=0.0, le=1.0)
    roster: List[RosterEntry] = Field(default_factory=_default_roster)
    cooccurrence: List[CooccurrenceRule] = Field(default_factory=_default_cooccurrence)
    attributes: AttributeMarginals = Field(default_factory=AttributeMarginals)
    bias: BiasModel = Field(default_factory=BiasModel)
    study_names: List[str] = Field(default_factory=lambda: [
        'MRI BRAIN WITH AND WITHOUT CONTRAST', 'MRI BRAIN WITHOUT CONTRAST', 'MRI HEAD STROKE PROTOCOL'])
    noise_sd: float = Field(default=0.02, ge=0.0)
    lesion_radius: float = Field(default=2.0, gt=0.0)
    age_gradient: float = Field(default=0.12, ge=0.0)
    qualifier_prob: float = Field(default=0.3, ge=0.0, le=1.0)

    @field_validator('grid')
    @classmethod
    def _grid_positive(cls, value: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if any(v <= 0 for v in value):
            raise ValueError('grid dimensions must be positive')
        return value

    @field_validator('roster')
    @classmethod
    def _roster_allows_two(cls, value: List[RosterEntry]) -> List[RosterEntry]:
        if len(value) < 2:
            raise ValueError('roster must list at least two sequences (studies need >= 2)')
        return value

    @field_validator('labels')
    @classmethod
    def _labels_present(cls, value: List[LabelSpec]) -> List[LabelSpec]:
        if not value:
            raise ValueError('labels must define at least one class')
        names = [spec.name for spec in value]
        if len(set(names)) != len(names):
            raise ValueError('label names must be unique')
        return value

    @model_validator(mode='before')
    @classmethod
    def _defaults_follow_catalog(cls, data):
        if not isinstance(data, dict) or 'labels' not in data or not isinstance(data['labels'], list):
            return data
        names = {spec.get('name') if isinstance(spec, dict) else getattr(spec, 'name', None)
                 for spec in data['labels']}
        data = dict(data)
        if 'cooccurrence' not in data:
            data['cooccurrence'] = [rule for rule in _default_cooccurrence()
                                    if rule.trigger in names and rule.implied in names]
        data.setdefault('normal_fraction', None)
        return data

    @model_validator(mode='after')
    def _rules_reference_labels(self) -> 'CohortConfig':
        names = {spec.name for spec in self.labels}
        for rule in self.cooccurrence:
            if rule.trigger not in names or rule.implied not in names:
                raise ValueError(f'cooccurrence rule {rule.trigger}->{rule.implied} names an unknown label')
        if len(self.bias.region_coefs) != len(self.attributes.region_probs):
            raise ValueError('bias.region_coefs must have one entry per region')
        if (self.normal_fraction is not None and self.normal_fraction < 1.0
                and not any(spec.prevalence > 0 for spec in self.labels)):
            raise ValueError('normal_fraction < 1 needs at least one label with prevalence > 0')
        return self

    @property
    def label_names(self) -> List[str]:
        return [spec.name for spec in self.labels]

    def expected_prevalence(self) -> List[float]:
        """Marginal rate of each label before co-occurrence rules add implied labels."""
        prevalence = [spec.prevalence for spec in self.labels]
        if self.normal_fraction is None:
            return prevalence
        any_positive = 1.0 - math.prod(1.0 - p for p in prevalence)
        if any_positive == 0.0:
            return [0.0] * len(prevalence)
        return [(1.0 - self.normal_fraction) * p / any_positive for p in prevalence]


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

class TokenizerConfig(_Section):
    patch_dims: Tuple[int, int, int] = (8, 8, 2)
    codebook_size: int = Field(default=64, ge=2)
    latent_dim: int = Field(default=8, ge=1)
    hidden_channels: int = Field(default=16, ge=1)
    commitment_beta: float = Field(default=0.25, ge=0.0)
    learning_rate: float = Field(default=2e-3, gt=0.0)
    epochs: int = Field(default=8, ge=1)
    batch_size: int = Field(default=256, ge=1)
    threshold: float = Field(default=0.02, ge=0.0)
    permute: bool = True
    dead_code_epochs: int = Field(default=2, ge=1)
    val_fraction: float = Field(default=0.1, gt=0.0, lt=1.0)
    max_train_patches: int = Field(default=20000, ge=1)

    @field_validator('patch_dims')
    @classmethod
    def _patch_positive(cls, value: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if any(v <= 0 for v in value):
            raise ValueError('patch_dims must be positive')
        return value

    @property
    def compression(self) -> int:
        px, py, pz = self.patch_dims
        return (px * py * pz) // self.latent_dim

    @classmethod
    def full_scale(cls) -> 'TokenizerConfig':
        return cls(patch_dims=(32, 32, 4), codebook_size=8192, latent_dim=256, hidden_channels=64)


# ---------------------------------------------------------------------------
# Text
# ---------------------------------------------------------------------------

class TextConfig(_Section):
    lm_dim: int = Field(default=64, ge=8)
    lm_layers: int = Field(default=2, ge=1)
    lm_heads: int = Field(default=4, ge=1)
    lm_epochs: int = Field(default=6, ge=1)
    lm_learning_rate: float = Field(default=3e-3, gt=0.0)
    lm_batch_size: int = Field(default=32, ge=1)
    max_report_tokens: int = Field(default=96, ge=8)
    name_dim: int = Field(default=32, ge=4)
    name_layers: int = Field(default=3, ge=1)
    name_heads: int = Field(default=4, ge=1)
    name_max_len: int = Field(default=24, ge=4)
    name_epochs: int = Field(default=30, ge=1)
    name_learning_rate: float = Field(default=3e-3, gt=0.0)
    name_batch_size: int = Field(default=32, ge=1)


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------

class SequenceEncoderConfig(_Section):
    layers: int = Field(default=2, ge=1)
    heads: int = Field(default=4, ge=1)
    head_dim: int = Field(default=16, ge=1)
    n_registers: int = Field(default=4, ge=1)
    output_dim: int = Field(default=64, ge=1)
    mlp_ratio: int = Field(default=4, ge=1)

    @property
    def dim(self) -> int:
        return self.heads * self.head_dim

    @classmethod
    def full_scale(cls) -> 'SequenceEncoderConfig':
        return cls(layers=15, heads=16, head_dim=64, n_registers=20, output_dim=1024)


class StudyEncoderConfig(_Section):
    layers: int = Field(default=2, ge=1)
    heads: int = Field(default=4, ge=1)
    head_dim: int = Field(default=16, ge=1)
    n_registers: int = Field(default=2, ge=1)
    output_dim: int = Field(default=128, ge=1)
    mlp_ratio: int = Field(default=4, ge=1)

    @model_validator(mode='after')
    def _output_splits_over_registers(self) -> 'StudyEncoderConfig':
        if self.output_dim % self.n_registers:
            raise ValueError('output_dim must be a multiple of n_registers')
        return self

    @property
    def dim(self) -> int:
        """Width of one study register (output is registers concatenated)."""
        return self.output_dim // self.n_registers

    @classmethod
    def full_scale(cls) -> 'StudyEncoderConfig':
        return cls(layers=4, heads=8, head_dim=64, n_registers=10, output_dim=10240)


class EncoderConfig(_Section):
    sequence: SequenceEncoderConfig = Field(default_factory=SequenceEncoderConfig)
    study: StudyEncoderConfig = Field(default_factory=StudyEncoderConfig)
    pos_dim_per_axis: int = Field(default=6, ge=2)
    architecture: Literal['hierarchical', 'flat'] = 'hierarchical'
    readout: Literal['registers', 'tokens'] = 'registers'
    use_sequence_names: bool = True
    use_study_name: bool = True
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)

    @field_validator('pos_dim_per_axis')
    @classmethod
    def _even(cls, value: int) -> int:
        if value % 2:
            raise ValueError('pos_dim_per_axis must be even (sin/cos pairs)')
        return value

    @classmethod
    def full_scale(cls) -> 'EncoderConfig':
        return cls(sequence=SequenceEncoderConfig.full_scale(), study=StudyEncoderConfig.full_scale(),
                   pos_dim_per_axis=10)


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------

class AugmentationPolicy(_Section):
    shuffle_report_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    token_drop_prob: float = Field(default=0.1, ge=0.0, le=1.0)
    unk_name_prob: float = Field(default=0.1, ge=0.0, le=1.0)
    threshold_jitter_prob: float = Field(default=0.3, ge=0.0, le=1.0)
    threshold_range: Tuple[float, float] = (0.0, 0.06)
    sequence_drop_prob: float = Field(default=0.1, ge=0.0, le=1.0)

    @classmethod
    def disabled(cls) -> 'AugmentationPolicy':
        return cls(shuffle_report_prob=0.0, token_drop_prob=0.0, unk_name_prob=0.0,
                   threshold_jitter_prob=0.0, sequence_drop_prob=0.0)


class ObjectiveConfig(_Section):
    projection_dim: int = Field(default=128, ge=1)
    temperature_init: float = Field(default=0.07, gt=0.0)
    max_logit_scale: float = Field(default=100.0, gt=1.0)
    patdis_temperature_init: float = Field(default=0.1, gt=0.0)
    patdis_weight: float = Field(default=0.03, ge=0.0)
    patdis_hidden: int = Field(default=128, ge=1)
    suppress_self: bool = True
    steps: int = Field(default=3000, ge=1)
    batch_size: int = Field(default=32, ge=2)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    warmup_steps: int = Field(default=100, ge=0)  # linear ramp, capped at a tenth of the run
    weight_decay: float = Field(default=0.01, ge=0.0)
    eval_every: int = Field(default=50, ge=1)
    retrieval_target: float = Field(default=0.25, ge=0.0, le=1.0)
    abnormal_upsample: float = Field(default=4.0, ge=1.0)
    use_summaries: bool = True
    val_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)
    test_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)
    augmentation: AugmentationPolicy = Field(default_factory=AugmentationPolicy)


# ---------------------------------------------------------------------------
# Heads, evaluation, explanation, fairness
# ---------------------------------------------------------------------------

class HeadConfig(_Section):
    epochs: int = Field(default=60, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)
    batch_size: int = Field(default=64, ge=1)
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0)
    acuity_loss: Literal['cross_entropy', 'binary_ordinal', 'ordinal_soft'] = 'cross_entropy'
    context_dim: int = Field(default=16, ge=1)
    context_provider: Literal['hash', 'gemini'] = 'hash'
    decision_threshold: float = Field(default=0.5, gt=0.0, lt=1.0)


class EvalConfig(_Section):
    group_size: int = Field(default=100, ge=2)
    retrieval_ks: List[int] = Field(default_factory=lambda: [1, 5])
    npr_k: int = Field(default=20, ge=1)
    reliability_bin: float = Field(default=0.1, gt=0.0, le=1.0)
    scaling_fractions: List[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0])
    scaling_seeds: List[int] = Field(default_factory=lambda: [1, 2, 3])
    ablation_seeds: List[int] = Field(default_factory=lambda: [1, 2, 3], min_length=1)
    dropped_modality_pattern: str = 'T2|FLAIR'
    kept_modality_pattern: str = 'T1'
    cluster_cooccurrence: bool = True
    write_plots: bool = True


class ExplainConfig(_Section):
    n_samples: int = Field(default=3000, ge=2)
    kernel_width: float = Field(default=0.25, gt=0.0)
    ridge: float = Field(default=1e-6, ge=0.0)
    keep_prob: float = Field(default=0.5, gt=0.0, lt=1.0)
    top_k: int = Field(default=3, ge=1)
    max_studies: int = Field(default=20, ge=1)
    export_overlays: bool = True


class SubgroupConfig(_Section):
    name: str
    equals: Dict[str, List[int | str]] = Field(default_factory=dict)
    ranges: Dict[str, Tuple[float, float]] = Field(default_factory=dict)


def _default_subgroups() -> List[SubgroupConfig]:
    return [
        SubgroupConfig(name='female', equals={'sex': ['F']}),
        SubgroupConfig(name='male', equals={'sex': ['M']}),
        SubgroupConfig(name='age_0_17', ranges={'age_years': (0.0, 18.0)}),
        SubgroupConfig(name='age_34_61', ranges={'age_years': (34.0, 62.0)}),
        SubgroupConfig(name='age_62_plus', ranges={'age_years': (62.0, 200.0)}),
        SubgroupConfig(name='race_1', equals={'race_code': [1]}),
        SubgroupConfig(name='rural', equals={'population_quartile': [1]}),
        SubgroupConfig(name='weekend', equals={'weekend_flag': [1]}),
        SubgroupConfig(name='government_insurer', equals={'insurer_code': [2]}),
        SubgroupConfig(name='scanner_2', equals={'scanner_code': [2]}),
        SubgroupConfig(name='female_rural', equals={'sex': ['F'], 'population_quartile': [1]}),
        SubgroupConfig(name='race_1_region_4', equals={'race_code': [1], 'region_code': [4]}),
    ]


class FairnessConfig(_Section):
    tpr_threshold: float = Field(default=0.1, gt=0.0, le=1.0)
    bootstrap_size: int = Field(default=200, ge=1)
    bootstrap_iters: int = Field(default=20, ge=2)
    decision_threshold: float = Field(default=0.5, gt=0.0, lt=1.0)
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    subgroups: List[SubgroupConfig] = Field(default_factory=_default_subgroups)


class LLMConfig(_Section):
    provider: Literal['mock', 'gemini'] = 'mock'
    endpoint: Optional[str] = None
    model: str = 'gemini-flash-latest'
    max_retries: int = Field(default=3, ge=0)
    backoff_seconds: float = Field(default=1.0, ge=0.0)
    timeout_seconds: float = Field(default=30.0, gt=0.0)
    max_concurrency: int = Field(default=4, ge=1)


class AblationConfig(_Section):
    name: Optional[str] = None

    @field_validator('name')
    @classmethod
    def _known(cls, value: Optional[str]) -> Optional[str]:
        if value is not None and value not in ABLATIONS:
            raise ValueError(f'unknown ablation {value!r}; expected one of {ABLATIONS}')
        return value


# ---------------------------------------------------------------------------
# Root document
# ---------------------------------------------------------------------------

class ExperimentConfig(_Section):
    schema_version: int = SCHEMA_VERSION
    seed: int = 1
    cohort: CohortConfig = Field(default_factory=CohortConfig)
    tokenizer: TokenizerConfig = Field(default_factory=TokenizerConfig)
    text: TextConfig = Field(default_factory=TextConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    objective: ObjectiveConfig = Field(default_factory=ObjectiveConfig)
    heads: HeadConfig = Field(default_factory=HeadConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    explain: ExplainConfig = Field(default_factory=ExplainConfig)
    fairness: FairnessConfig = Field(default_factory=FairnessConfig)
    llm: LLMConfig = Field(default_factory=LLMConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)

    @field_validator('schema_version')
    @classmethod
    def _supported_schema(cls, value: int) -> int:
        if value != SCHEMA_VERSION:
            raise ValueError(f'unsupported schema_version {value}; this build reads {SCHEMA_VERSION}')
        return value

    @classmethod
    def load(cls, path: Path) -> 'ExperimentConfig':
        """Load and validate a JSON config file."""
        with open(path, 'r', encoding='utf-8') as f:
            return cls.model_validate(json.load(f))

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode='json'), sort_keys=True, separators=(',', ':'))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode('utf-8')).hexdigest()

    @property
    def run_id(self) -> str:
        return self.config_hash()[:12]

    def section_hash(self, *sections: str) -> str:
        """Hash of the named sections plus the seed (upstream-input fingerprint)."""
        dump = self.model_dump(mode='json')
        payload = {name: dump[name] for name in sections}
        payload['seed'] = self.seed
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode('utf-8')).hexdigest()

    def with_seed(self, seed: int) -> 'ExperimentConfig':
        return self.model_copy(update={'seed': seed}, deep=True)

    def with_ablation(self, name: str) -> 'ExperimentConfig':
        """Return a copy with one model-design toggle applied."""
        if name not in ABLATIONS:
            raise ConfigurationError(f'unknown ablation {name!r}; expected one of {ABLATIONS}')
        cfg = self.model_copy(deep=True)
        if name == 'no-sequence-name':
            cfg.encoder.use_sequence_names = False
        elif name == 'no-study-description':
            cfg.encoder.use_study_name = False
        elif name == 'flat-transformer':
            cfg.encoder.architecture = 'flat'
        elif name == 'token-readout':
            cfg.encoder.readout = 'tokens'
        elif name == 'long-report':
            cfg.objective.use_summaries = False
        elif name == 'no-patdis':
            cfg.objective.patdis_weight = 0.0
        cfg.ablation = AblationConfig(name=name)
        return cfg
