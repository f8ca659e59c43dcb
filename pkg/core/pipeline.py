# -*- coding: utf-8 -*-
"""
The restoration model as one object: frozen VAE, trainable LQ encoder,
alignment module, denoiser and caption embedder, plus sampling-based
restoration of LQ images.
"""
import numpy as np
from core.align import build_alignment
from core.denoiser import TextEmbedder, UNetDenoiser, pad_latent
from core.schedule import GuidanceConfig, NoiseSchedule, sample
from core.tensor import Tensor, no_grad
from core.vae import TinyVae, VaeEncoder
from helpers.rng_helper import substream, STREAM_INIT

TAP_PENULTIMATE = 'penultimate'
TAP_LAST = 'last'

# checkpoint name prefix per component, in state-dict order
COMPONENTS = ('vae', 'lq_encoder', 'align', 'unet', 'text')


def build_schedule(config):
    return NoiseSchedule(config.schedule.timesteps, config.schedule.beta_min,
                         config.schedule.beta_max)


class RestorationModels:
    """
    All networks of a run.

    ``vae`` is the pretrained autoencoder (its encoder produces the clean
    latents, its decoder the final image) and stays frozen. ``lq_encoder``
    starts as a copy of the VAE encoder and is the one fine-tuned on LQ
    inputs. ``tap`` picks its penultimate features or its latent output as
    the alignment input.
    """

    def __init__(self, config, align_kind='full', tap=TAP_PENULTIMATE, seed=None):
        arch = config.model
        if tap not in (TAP_PENULTIMATE, TAP_LAST):
            raise ValueError(f'unknown feature tap "{tap}"')
        rng = substream(config.general.seed if seed is None else seed, STREAM_INIT)
        self.config = config
        self.align_kind = align_kind
        self.tap = tap
        self.vae = TinyVae(arch.c_pen, arch.c_lat, rng)
        self.lq_encoder = VaeEncoder(arch.c_pen, arch.c_lat, rng)
        self.feature_width = arch.c_pen if tap == TAP_PENULTIMATE else arch.c_lat
        self.align = build_alignment(align_kind, arch.c_lat, self.feature_width, arch, rng)
        self.unet = UNetDenoiser(arch.c_align, arch.c_lat, arch, rng)
        self.text = TextEmbedder(arch.text_dim, arch.caption_length, rng)
        self.schedule = build_schedule(config)

    def components(self):
        return {name: getattr(self, name) for name in COMPONENTS}

    def state_dict(self, parts=COMPONENTS):
        state = {}
        for name in parts:
            state.update(getattr(self, name).state_dict(f'{name}.'))
        return state

    def load_state_dict(self, state, parts=COMPONENTS):
        """Loads the listed components from a prefixed state dict."""
        for name in parts:
            getattr(self, name).load_state_dict(state, f'{name}.')

    def init_lq_encoder(self):
        """Copies the pretrained VAE encoder weights into the trainable LQ encoder."""
        self.lq_encoder.load_state_dict(self.vae.encoder.state_dict())

    def freeze_all(self):
        for module in self.components().values():
            module.set_trainable(False)

    def lq_features(self, lq):
        features = self.lq_encoder.encode(lq)
        return features.f_lq if self.tap == TAP_PENULTIMATE else features.x0

    def eps(self, x_t, f_lq, t, c, store=None): # pylint: disable=too-many-arguments
        """Epsilon prediction from the noisy latent fused with LQ features."""
        return self.unet.predict_eps(self.align.align(x_t, f_lq), t, c, store)

    def prior_eps(self, x_t, _f_lq, t, c, store=None): # pylint: disable=too-many-arguments
        """Unconditioned-on-LQ prediction used while pretraining the diffusion prior."""
        return self.unet.predict_eps(pad_latent(x_t, self.unet.c_in), t, c, store)

    def latent_shape(self, batch):
        size = self.config.model.latent_size
        return (batch, self.config.model.c_lat, size, size)

    def restore(self, lq, captions, seed, steps=None, cfg_scale=None, kind=None, store=None): # pylint: disable=too-many-arguments
        """
        Restores LQ images: encode, sample a clean latent with guidance, decode.

        Args:
            lq (numpy.ndarray): [B,3,H,W] images in [-1, 1].
            captions (list[list[int]]): One token-id caption per image.
            seed (int): Sampler seed.
            steps, cfg_scale, kind: Override the ``sampler`` settings.
            store (AttentionStore, optional): Receives cross-attention maps.

        Returns:
            numpy.ndarray: float32 [B,3,H,W] restored images (not clamped).
        """
        sampler = self.config.sampler
        steps = sampler.steps if steps is None else steps
        cfg_scale = sampler.cfg_scale if cfg_scale is None else cfg_scale
        kind = sampler.kind if kind is None else kind
        lq = np.asarray(lq, dtype=np.float32)
        if len(captions) != lq.shape[0]:
            raise ValueError(f'{lq.shape[0]} images but {len(captions)} captions')
        with no_grad():
            f_lq = self.lq_features(Tensor(lq))
            c = self.text.embed_batch(captions)
            guidance = GuidanceConfig(cfg_scale, self.text.uncond(1))
            x0 = sample(kind, self.eps, f_lq, c, steps, guidance, seed, self.schedule,
                        self.latent_shape(lq.shape[0]), store=store)
            return self.vae.decode(x0).data.copy()


def build_models(config, plan=None, seed=None):
    """Models wired for an ablation plan (alignment kind and feature tap)."""
    if plan is None:
        return RestorationModels(config, seed=seed)
    return RestorationModels(config, align_kind=plan.align_kind, tap=plan.tap, seed=seed)
