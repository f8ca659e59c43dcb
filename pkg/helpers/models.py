# -*- coding: utf-8 -*-
from dataclasses import dataclass, field, fields
import math

LEVELS = ('I', 'II', 'III')
ABLATION_KEYS = ('full', 'wo_align', 'wo_pretrain_align', 'last_feats',
                 'ft_en_fix_dm', 'fix_en_ft_dm', 'ft_en_dm_sp')


class ConfigError(ValueError):
    """Raised for malformed, unknown or out-of-range settings."""


@dataclass
class GeneralConfig:
    seed: int = 0
    output: str = 'runs'


@dataclass
class ArchitectureConfig: # pylint: disable=too-many-instance-attributes
    image_size: int = 32
    c_pen: int = 64
    c_lat: int = 4
    c_align: int = 8
    align_width: int = 32
    align_heads: int = 1
    ffn_ratio: int = 2
    unet_base: int = 32
    unet_mult: int = 2
    unet_heads: int = 1
    text_dim: int = 32
    caption_length: int = 8
    groups: int = 8

    @property
    def latent_size(self):
        return self.image_size // 4


@dataclass
class ScheduleConfig:
    timesteps: int = 1000
    beta_min: float = 0.0001
    beta_max: float = 0.02


@dataclass
class SamplerConfig:
    kind: str = 'euler'
    steps: int = 20
    cfg_scale: float = 5.0
    capture_daam: bool = False


@dataclass
class TrainSettings: # pylint: disable=too-many-instance-attributes
    batch_size: int = 8
    vae_iters: int = 2000
    vae_lr: float = 0.001
    prior_iters: int = 4000
    prior_lr: float = 0.0002
    pretrain_iters: int = 1000
    pretrain_lr: float = 0.0005
    joint_iters: int = 4000
    lr_unet: float = 0.0002
    lr_encoder: float = 0.0001
    lr_min: float = 0.000001
    caption_dropout: float = 0.2
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    checkpoint_every: int = 500


@dataclass
class DataConfig:
    train_size: int = 2000
    val_size: int = 50
    train_level: str = 'mixed'


@dataclass
class AblationConfig:
    key: str = 'full'
    align: str = 'full'
    align_pretrain: str = 'run'


@dataclass
class EvalConfig:
    daam_images: int = 10


_SECTIONS = {
    'general': GeneralConfig,
    'model': ArchitectureConfig,
    'schedule': ScheduleConfig,
    'sampler': SamplerConfig,
    'train': TrainSettings,
    'data': DataConfig,
    'ablation': AblationConfig,
    'eval': EvalConfig
}


def setting_key(field_name):
    return field_name.replace('_', '-')


def _coerce(name, value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
    raise ConfigError(
        f'setting "{name}" expects a {type(default).__name__} value, got {value!r}')


@dataclass
class ModelConfig: # pylint: disable=too-many-instance-attributes
    """
    Every architecture, schedule, sampler, training, data and ablation
    hyperparameter of a run, grouped by settings section.
    """
    general: GeneralConfig = field(default_factory=GeneralConfig)
    model: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    data: DataConfig = field(default_factory=DataConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def todata(self):
        """
        Converts the configuration into the nested settings tree.

        Returns:
            dict: ``{section: {dashed-key: value}}``, JSON serializable.
        """
        result = {}
        for section_name in _SECTIONS:
            section = getattr(self, section_name)
            result[section_name] = {
                setting_key(item.name): getattr(section, item.name) for item in fields(section)
            }
        return result

    @staticmethod
    def from_data(data):
        """
        Builds a configuration from a (possibly partial) settings tree.

        Missing keys keep their defaults, unknown sections or keys and wrongly
        typed values raise ConfigError, and the result is validated.
        """
        if not isinstance(data, dict):
            raise ConfigError('configuration root must be an object')
        config = ModelConfig()
        for section_name, values in data.items():
            if section_name not in _SECTIONS:
                raise ConfigError(f'unknown setting section "{section_name}"')
            if not isinstance(values, dict):
                raise ConfigError(f'setting section "{section_name}" must be an object')
            section = getattr(config, section_name)
            known = {setting_key(item.name): item.name for item in fields(section)}
            for key, value in values.items():
                if key not in known:
                    raise ConfigError(f'unknown setting "{section_name}.{key}"')
                attribute = known[key]
                setattr(section, attribute,
                        _coerce(f'{section_name}.{key}', value, getattr(section, attribute)))
        config.validate()
        return config

    @staticmethod
    def dotted_defaults():
        """Yields ``(dotted.name, default)`` for every setting, in section order."""
        for section_name, section_class in _SECTIONS.items():
            section = section_class()
            for item in fields(section):
                yield f'{section_name}.{setting_key(item.name)}', getattr(section, item.name)

    def validate(self): # pylint: disable=too-many-branches
        """
        Checks cross-field constraints.

        Raises:
            ConfigError: Naming the first offending setting.
        """
        arch = self.model
        train = self.train
        checks = [
            (self.general.seed >= 0, 'general.seed must be >= 0'),
            (arch.image_size > 0 and arch.image_size % 4 == 0,
             'model.image-size must be a positive multiple of 4'),
            (arch.c_pen > arch.c_lat > 0, 'model.c-pen must be greater than model.c-lat'),
            (arch.align_width > 0 and arch.align_width % 2 == 0,
             'model.align-width must be a positive even number'),
            (arch.align_heads >= 1 and arch.align_width % arch.align_heads == 0,
             'model.align-width must be divisible by model.align-heads'),
            (arch.unet_heads >= 1 and arch.unet_base % arch.unet_heads == 0,
             'model.unet-base must be divisible by model.unet-heads'),
            (arch.c_pen % 4 == 0, 'model.c-pen must be a multiple of 4'),
            (arch.c_align >= arch.c_lat, 'model.c-align must be >= model.c-lat'),
            (arch.groups >= 1 and arch.unet_base % arch.groups == 0,
             'model.unet-base must be divisible by model.groups'),
            (arch.caption_length >= 1, 'model.caption-length must be >= 1'),
            (self.schedule.timesteps >= 2, 'schedule.timesteps must be >= 2'),
            (0 < self.schedule.beta_min < self.schedule.beta_max,
             'schedule.beta-min must be positive and below schedule.beta-max'),
            (self.sampler.kind in ('euler', 'ddpm'), 'sampler.kind must be euler or ddpm'),
            (self.sampler.steps >= 1, 'sampler.steps must be >= 1'),
            (math.isfinite(self.sampler.cfg_scale) and self.sampler.cfg_scale >= 0,
             'sampler.cfg-scale must be finite and >= 0'),
            (0.0 <= train.caption_dropout <= 1.0, 'train.caption-dropout must be in [0, 1]'),
            (train.lr_encoder <= train.lr_unet, 'train.lr-encoder must not exceed train.lr-unet'),
            (train.batch_size >= 1, 'train.batch-size must be >= 1'),
            (train.checkpoint_every >= 0, 'train.checkpoint-every must be >= 0'),
            (self.data.train_size >= 0 and self.data.val_size >= 0,
             'data sizes must be >= 0'),
            (self.data.train_level in LEVELS + ('mixed',),
             'data.train-level must be I, II, III or mixed'),
            (self.ablation.key in ABLATION_KEYS,
             f'ablation.key must be one of {", ".join(ABLATION_KEYS)}'),
            (self.ablation.align in ('full', 'add', 'none'),
             'ablation.align must be full, add or none'),
            (self.ablation.align_pretrain in ('run', 'skip'),
             'ablation.align-pretrain must be run or skip'),
            (self.eval.daam_images >= 0, 'eval.daam-images must be >= 0')
        ]
        for passed, message in checks:
            if not passed:
                raise ConfigError(message)
        for name in ('vae_iters', 'prior_iters', 'pretrain_iters', 'joint_iters'):
            if getattr(train, name) < 0:
                raise ConfigError(f'train.{setting_key(name)} must be >= 0')


class ItemMetric: # pylint: disable=too-few-public-methods
    """PSNR and SSIM of one restored (or degraded) image against its HQ target."""

    def __init__(self, index, psnr_db, ssim):
        self.index = index
        self.psnr_db = psnr_db
        self.ssim = ssim

    def todata(self):
        return {
            'index': self.index,
            'psnr_db': self.psnr_db,
            'ssim': self.ssim
        }

    @staticmethod
    def fieldnames():
        return ['index', 'psnr_db', 'ssim']


class MetricReport:
    """
    Per-image metrics and their means for one dataset split.

    Attributes:
        dataset (str): Manifest the items came from.
        level (str): Degradation level of the split.
        source (str): What was scored (``restored`` or ``lq``).
        items (list[ItemMetric]): Per-image values in manifest order.
    """

    def __init__(self, dataset, level, source='restored'):
        self.dataset = dataset
        self.level = level
        self.source = source
        self.items = []

    def add(self, index, psnr_db, ssim):
        self.items.append(ItemMetric(index, psnr_db, ssim))

    @property
    def mean_psnr(self):
        if not self.items:
            return 0.0
        return math.fsum(item.psnr_db for item in self.items) / len(self.items)

    @property
    def mean_ssim(self):
        if not self.items:
            return 0.0
        return math.fsum(item.ssim for item in self.items) / len(self.items)

    def todata(self):
        return {
            'dataset': self.dataset,
            'level': self.level,
            'source': self.source,
            'items': [item.todata() for item in self.items],
            'mean': {
                'psnr_db': self.mean_psnr,
                'ssim': self.mean_ssim,
                'count': len(self.items)
            }
        }

    def __repr__(self):
        return (f'<MetricReport {self.source} level={self.level} n={len(self.items)} '
                f'psnr={self.mean_psnr:.3f} ssim={self.mean_ssim:.4f}>')
