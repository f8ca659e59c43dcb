# -*- coding: utf-8 -*-
"""
Training stages of the restoration model.

``prior`` pretrains the denoiser and caption embedder on clean latents,
``pretrain_align`` trains only the alignment module, and ``joint`` fine-tunes
LQ encoder, alignment module and denoiser together. Every stage minimizes the
mean absolute error between injected and predicted noise.
"""
from dataclasses import dataclass, field
import numpy as np
from tqdm import tqdm
from core.optim import BatchSampler, OptimizerState, TrainingDivergedError,\
    adamw_step, clip_grad_norm, cosine_lr
from core.pipeline import TAP_LAST, TAP_PENULTIMATE
from core.schedule import forward_noise
from core.tensor import Tensor, abs_, backward, mean, sub
from core.vae import encode_images
from helpers.models import ABLATION_KEYS
from helpers.rng_helper import substream, STREAM_DATA, STREAM_DROPOUT, STREAM_NOISE

STAGE_PRIOR = 'prior'
STAGE_PRETRAIN_ALIGN = 'pretrain_align'
STAGE_JOINT = 'joint'
STAGES = (STAGE_PRIOR, STAGE_PRETRAIN_ALIGN, STAGE_JOINT)

GROUP_ENCODER = 'encoder'
GROUP_ALIGN = 'align'
GROUP_UNET = 'unet'
GROUP_TEXT = 'text'

STAGE_GROUPS = {
    STAGE_PRIOR: (GROUP_UNET, GROUP_TEXT),
    STAGE_PRETRAIN_ALIGN: (GROUP_ALIGN,),
    STAGE_JOINT: (GROUP_ENCODER, GROUP_ALIGN, GROUP_UNET),
}


@dataclass
class TrainConfig: # pylint: disable=too-many-instance-attributes
    """
    Settings of one training run. ``trainable`` overrides the stage's default
    parameter groups (used by the ablation variants); ``name`` labels the
    loss log lines.
    """
    stage: str
    iters: int
    batch_size: int
    lr_align: float
    lr_unet: float
    lr_encoder: float
    lr_min: float = 1e-6
    caption_dropout: float = 0.2
    seed: int = 0
    checkpoint_every: int = 0
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    trainable: tuple = None
    name: str = None

    def __post_init__(self):
        if self.trainable is None:
            self.trainable = STAGE_GROUPS.get(self.stage)
        if self.name is None:
            self.name = self.stage
        self.validate()

    def validate(self):
        if self.stage not in STAGES:
            raise ValueError(f'unknown training stage "{self.stage}"')
        if self.iters < 0:
            raise ValueError(f'iters must be >= 0, got {self.iters}')
        if self.batch_size < 1:
            raise ValueError(f'batch size must be >= 1, got {self.batch_size}')
        if not 0.0 <= self.caption_dropout <= 1.0:
            raise ValueError(f'caption dropout must lie in [0, 1], got {self.caption_dropout}')
        if self.stage == STAGE_JOINT and self.lr_encoder > self.lr_unet:
            raise ValueError('joint stage needs lr_encoder <= lr_unet')
        unknown = set(self.trainable) - {GROUP_ENCODER, GROUP_ALIGN, GROUP_UNET, GROUP_TEXT}
        if unknown:
            raise ValueError(f'unknown parameter groups: {", ".join(sorted(unknown))}')

    def group_lr(self, group):
        if group == GROUP_ENCODER:
            return self.lr_encoder
        if group == GROUP_ALIGN:
            return self.lr_align
        return self.lr_unet

    @classmethod
    def for_stage(cls, config, stage, trainable=None, iters=None, name=None):
        """Builds the stage settings from a ModelConfig."""
        train = config.train
        lr_align = train.lr_unet
        stage_iters = train.joint_iters
        if stage == STAGE_PRIOR:
            lr_align, stage_iters = train.prior_lr, train.prior_iters
            lr_unet = train.prior_lr
        elif stage == STAGE_PRETRAIN_ALIGN:
            lr_align, stage_iters = train.pretrain_lr, train.pretrain_iters
            lr_unet = train.lr_unet
        else:
            lr_unet = train.lr_unet
        return cls(stage=stage,
                   iters=stage_iters if iters is None else iters,
                   batch_size=train.batch_size,
                   lr_align=lr_align,
                   lr_unet=lr_unet,
                   lr_encoder=train.lr_encoder,
                   lr_min=train.lr_min,
                   caption_dropout=train.caption_dropout,
                   seed=config.general.seed,
                   checkpoint_every=train.checkpoint_every,
                   weight_decay=train.weight_decay,
                   grad_clip=train.grad_clip,
                   trainable=trainable,
                   name=name)


@dataclass
class TrainingData:
    """Training pairs: clean latents of the HQ images, LQ images and captions."""
    x0: np.ndarray
    lq: np.ndarray
    captions: list

    def __len__(self):
        return len(self.captions)

    @classmethod
    def from_images(cls, vae_encoder, hq, lq, captions):
        """Encodes HQ images with the frozen VAE encoder once up front."""
        return cls(x0=encode_images(vae_encoder, hq).x0, lq=np.asarray(lq, dtype=np.float32),
                   captions=[list(caption) for caption in captions])

    def batch(self, indices):
        return TrainingData(x0=self.x0[indices], lq=self.lq[indices],
                            captions=[self.captions[index] for index in indices])


@dataclass
class LossRecord:
    iteration: int
    stage: str
    loss: float
    lr_encoder: float
    lr_other: float

    def toline(self):
        return (f'{self.iteration}, {self.stage}, {self.loss!r}, '
                f'{self.lr_encoder!r}, {self.lr_other!r}')


@dataclass
class StageResult:
    records: list = field(default_factory=list)
    checkpoint: str = None

    @property
    def losses(self):
        return [record.loss for record in self.records]


def drop_captions(captions, probability, rng):
    """
    Replaces each caption by the empty (null) caption with ``probability``.

    Returns:
        tuple: (captions, boolean mask of dropped items)
    """
    dropped = rng.random(len(captions)) < probability
    return [[] if drop else caption for caption, drop in zip(captions, dropped)], dropped


def l1_eps_loss(eps_hat, eps):
    """Mean absolute error between predicted and injected noise."""
    return mean(abs_(sub(eps_hat, eps)))


def sample_noise(x0, schedule, rng):
    """Uniform step indices in [0, T) and standard normal noise for a batch."""
    t = rng.integers(0, schedule.timesteps, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape).astype(np.float32)
    return t, eps


def denoising_loss(batch, models, schedule, rng, prior=False):
    """
    Noise-prediction loss of one batch.

    Draws t and eps, noises the clean latents, extracts LQ features with the
    trainable encoder, fuses both in the alignment module and scores the
    denoiser's prediction. With ``prior`` the noisy latent goes to the
    denoiser directly (zero-padded) and no LQ features are computed.

    Args:
        batch (TrainingData): x0 latents, LQ images and (already dropped) captions.
        models (RestorationModels): The networks.
        schedule (NoiseSchedule): Training schedule.
        rng (numpy.random.Generator): Noise stream.

    Raises:
        ShapeError: If latents and LQ features disagree in size.
    """
    t, eps = sample_noise(batch.x0, schedule, rng)
    x_t = forward_noise(Tensor(batch.x0), Tensor(eps), t, schedule)
    c = models.text.embed_batch(batch.captions)
    if prior:
        eps_hat = models.prior_eps(x_t, None, t, c)
    else:
        eps_hat = models.eps(x_t, models.lq_features(Tensor(batch.lq)), t, c)
    return l1_eps_loss(eps_hat, Tensor(eps))


def group_modules(models):
    return {
        GROUP_ENCODER: models.lq_encoder,
        GROUP_ALIGN: models.align,
        GROUP_UNET: models.unet,
        GROUP_TEXT: models.text,
    }


def apply_partition(models, trainable):
    """
    Marks the listed groups trainable and everything else (always including
    the VAE) frozen.

    Returns:
        dict: ``{group: [parameters]}`` of the trainable groups.
    """
    models.freeze_all()
    groups = {}
    for name, module in group_modules(models).items():
        if name in trainable:
            module.set_trainable(True)
            groups[name] = module.parameters()
    return groups


def run_stage(config, models, data, checkpoint_fn=None, show_progress=None): # pylint: disable=too-many-locals
    """
    Runs one training stage in place on ``models``.

    Each stage starts with fresh optimizer state. Per iteration: draw a
    batch, drop captions, compute the loss, clip the global gradient norm
    and apply AdamW per group with cosine-annealed learning rates.

    Args:
        config (TrainConfig): Stage settings.
        models (RestorationModels): Networks to train.
        data (TrainingData): Training pairs.
        checkpoint_fn (callable, optional): ``checkpoint_fn(iteration)``
            saves the weights and returns the checkpoint path.
        show_progress (bool, optional): tqdm bar on/off, ``None`` for auto.

    Returns:
        StageResult: One LossRecord per iteration and the last checkpoint.

    Raises:
        TrainingDivergedError: On a NaN/Inf loss.
    """
    groups = apply_partition(models, config.trainable)
    states = {name: OptimizerState(weight_decay=config.weight_decay) for name in groups}
    params = [param for group in groups.values() for param in group]
    batches = BatchSampler(len(data), config.batch_size,
                           substream(config.seed, f'{STREAM_DATA}/{config.name}'))
    noise = substream(config.seed, f'{STREAM_NOISE}/{config.name}')
    dropout = substream(config.seed, f'{STREAM_DROPOUT}/{config.name}')
    other = next((name for name in groups if name != GROUP_ENCODER), None)
    result = StageResult()
    disable = None if show_progress is None else not show_progress
    for iteration in tqdm(range(config.iters), desc=config.name, disable=disable):
        batch = data.batch(batches.next_indices())
        batch.captions, _ = drop_captions(batch.captions, config.caption_dropout, dropout)
        for group in groups.values():
            for param in group:
                param.zero_grad()
        loss = denoising_loss(batch, models, models.schedule, noise,
                              prior=config.stage == STAGE_PRIOR)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDivergedError(config.name, iteration, result.checkpoint)
        backward(loss)
        clip_grad_norm(params, config.grad_clip)
        rates = {name: cosine_lr(iteration, config.iters, config.group_lr(name), config.lr_min)
                 for name in groups}
        for name, group in groups.items():
            adamw_step(group, states[name], rates[name])
        result.records.append(LossRecord(
            iteration=iteration,
            stage=config.name,
            loss=value,
            lr_encoder=rates.get(GROUP_ENCODER, 0.0),
            lr_other=rates[other] if other else 0.0))
        if checkpoint_fn and config.checkpoint_every and \
                (iteration + 1) % config.checkpoint_every == 0:
            result.checkpoint = checkpoint_fn(iteration + 1)
    if checkpoint_fn:
        result.checkpoint = checkpoint_fn(config.iters)
    models.freeze_all()
    return result


@dataclass
class AblationPlan:
    """
    How a variant is wired and trained.

    Attributes:
        key (str): Ablation key.
        align_kind (str): ``full`` (transformer fusion) or ``add``.
        tap (str): ``penultimate`` or ``last`` encoder features.
        pretrain_align (bool): Whether the alignment pretraining stage runs.
        joint_passes (list[tuple]): Trainable groups of each joint pass; the
            joint iteration budget is split evenly across passes.
    """
    key: str
    align_kind: str = 'full'
    tap: str = TAP_PENULTIMATE
    pretrain_align: bool = True
    joint_passes: list = field(
        default_factory=lambda: [(GROUP_ENCODER, GROUP_ALIGN, GROUP_UNET)])

    def pass_iters(self, total):
        """Splits ``total`` iterations over the passes (earlier passes take the remainder)."""
        count = len(self.joint_passes)
        return [total // count + (1 if index < total % count else 0) for index in range(count)]


def build_ablation(key, config=None):
    """
    Plan for an ablation key.

    ``full`` honours ``ablation.align`` (``none`` selects the add fusion) and
    ``ablation.align-pretrain`` from ``config``; the other keys fix their
    own wiring.

    Raises:
        ValueError: For an unknown key.
    """
    if key not in ABLATION_KEYS:
        raise ValueError(f'unknown ablation key "{key}", expected one of {", ".join(ABLATION_KEYS)}')
    if key == 'full':
        plan = AblationPlan(key)
        if config is not None:
            plan.align_kind = 'full' if config.ablation.align == 'full' else 'add'
            plan.pretrain_align = config.ablation.align_pretrain == 'run'
        return plan
    if key == 'wo_align':
        return AblationPlan(key, align_kind='add')
    if key == 'wo_pretrain_align':
        return AblationPlan(key, pretrain_align=False)
    if key == 'last_feats':
        return AblationPlan(key, tap=TAP_LAST)
    if key == 'ft_en_fix_dm':
        return AblationPlan(key, joint_passes=[(GROUP_ENCODER, GROUP_ALIGN)])
    if key == 'fix_en_ft_dm':
        return AblationPlan(key, joint_passes=[(GROUP_ALIGN, GROUP_UNET)])
    return AblationPlan(key, joint_passes=[(GROUP_ENCODER, GROUP_ALIGN),
                                           (GROUP_UNET, GROUP_ALIGN)])


def joint_configs(config, plan):
    """One TrainConfig per joint pass of ``plan``."""
    passes = plan.joint_passes
    configs = []
    for index, (groups, iters) in enumerate(zip(passes, plan.pass_iters(config.train.joint_iters))):
        name = STAGE_JOINT if len(passes) == 1 else f'{STAGE_JOINT}{index + 1}'
        configs.append(TrainConfig.for_stage(config, STAGE_JOINT, trainable=tuple(groups),
                                             iters=iters, name=name))
    return configs
