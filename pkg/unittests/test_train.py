# -*- coding: utf-8 -*-
import math
import numpy as np
import pytest
from core.degrade import synth_hq, degrade, make_recipe
from core.optim import BatchSampler, OptimizerState, TrainingDivergedError, adamw_step,\
    clip_grad_norm, cosine_lr
from core.pipeline import COMPONENTS, RestorationModels, TAP_LAST
from core.tensor import Tensor, backward, gradcheck, mul, sum_
from core.train import GROUP_ALIGN, GROUP_ENCODER, GROUP_UNET, STAGE_JOINT, STAGE_PRETRAIN_ALIGN,\
    STAGE_PRIOR, TrainConfig, TrainingData, build_ablation, drop_captions, joint_configs,\
    denoising_loss, run_stage


def snapshot(models):
    return {name: module.state_dict() for name, module in models.components().items()}


def changed_components(before, after):
    changed = set()
    for name in COMPONENTS:
        if any(not np.array_equal(before[name][key], after[name][key]) for key in before[name]):
            changed.add(name)
    return changed


def training_data(models, count=4, size=16):
    hq, lq, captions = [], [], []
    for seed in range(count):
        image, caption, _ = synth_hq(seed, size)
        hq.append(image)
        lq.append(degrade(image, make_recipe('II', seed)))
        captions.append(caption)
    return TrainingData.from_images(models.vae.encoder, np.stack(hq), np.stack(lq), captions)


def prepared_models(config, rng):
    models = RestorationModels(config)
    models.init_lq_encoder()
    # a zero output layer would block every gradient upstream of it
    models.unet.conv_out.weight.data = rng.normal(0.0, 0.1, models.unet.conv_out.weight.shape)\
        .astype(np.float32)
    return models


def test_adamw_minimizes_a_quadratic():
    param = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    state = OptimizerState(weight_decay=0.0)
    for iteration in range(500):
        param.zero_grad()
        backward(sum_(mul(param, param)))
        adamw_step([param], state, cosine_lr(iteration, 500, 0.1, 1e-4))
    assert np.all(np.abs(param.data) < 0.05)


def test_weight_decay_is_decoupled():
    param = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    param.grad = np.zeros(2)
    adamw_step([param], OptimizerState(weight_decay=0.5), 0.1)
    np.testing.assert_allclose(param.data, [0.95, -1.9])
    untouched = Tensor(np.array([1.0]), requires_grad=True)
    adamw_step([untouched], OptimizerState(weight_decay=0.5), 0.1)
    assert untouched.data[0] == 1.0


def test_adamw_first_step_moves_by_the_learning_rate():
    grad = np.array([0.3, -2.0, 1e-2, -5e-3])
    param = Tensor(np.array([1.0, 1.0, -1.0, 0.5]), requires_grad=True)
    start = param.data.copy()
    param.grad = grad.copy()
    adamw_step([param], OptimizerState(weight_decay=0.0), 1e-3)
    np.testing.assert_allclose(param.data - start, -1e-3 * np.sign(grad), atol=1e-6)


def reference_adamw(value, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8, decay=0.01): # pylint: disable=too-many-arguments
    """Plain-float AdamW on one scalar, decay applied before the moment update."""
    first, second = 0.0, 0.0
    for step, grad in enumerate(grads, start=1):
        first = beta1 * first + (1 - beta1) * grad
        second = beta2 * second + (1 - beta2) * grad * grad
        value *= 1 - lr * decay
        first_hat = first / (1 - beta1 ** step)
        second_hat = second / (1 - beta2 ** step)
        value -= lr * first_hat / (math.sqrt(second_hat) + eps)
    return value


def test_adamw_matches_scalar_reference_over_ten_steps():
    grads = [0.5, -1.0, 0.25, 2.0, -0.1, 0.0, 0.7, -0.3, 1.5, -2.5]
    param = Tensor(np.array([0.8]), requires_grad=True)
    state = OptimizerState(weight_decay=0.01)
    for grad in grads:
        param.grad = np.array([grad])
        adamw_step([param], state, 0.01)
    assert param.data[0] == pytest.approx(reference_adamw(0.8, grads, 0.01), abs=1e-6)
    assert state.step == 10


def test_cosine_schedule_end_points():
    assert cosine_lr(0, 10, 1.0, 0.1) == 1.0
    assert math.isclose(cosine_lr(10, 10, 1.0, 0.1), 0.1)
    assert math.isclose(cosine_lr(5, 10, 1.0, 0.1), 0.55)
    assert cosine_lr(3, 0, 1.0, 0.1) == 1.0


def test_clip_grad_norm_rescales_globally():
    a = Tensor(np.zeros(1), requires_grad=True)
    b = Tensor(np.zeros(1), requires_grad=True)
    a.grad, b.grad = np.array([3.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == 5.0
    np.testing.assert_allclose([a.grad[0], b.grad[0]], [0.6, 0.8], rtol=1e-9)
    assert clip_grad_norm([a, b], 10.0) == pytest.approx(1.0)


def test_batch_sampler_walks_permutations():
    first = BatchSampler(6, 3, np.random.default_rng(0))
    second = BatchSampler(6, 3, np.random.default_rng(0))
    epoch = np.concatenate([first.next_indices(), first.next_indices()])
    assert sorted(epoch.tolist()) == list(range(6))
    np.testing.assert_array_equal(epoch[:3], second.next_indices())
    assert len(BatchSampler(2, 8, np.random.default_rng(0)).next_indices()) == 2
    with pytest.raises(ValueError):
        BatchSampler(0, 2, np.random.default_rng(0))


def test_caption_dropout_extremes(rng):
    captions = [[1, 4, 12], [2, 5, 13]]
    kept, mask = drop_captions(captions, 0.0, rng)
    assert kept == captions
    assert not mask.any()
    dropped, mask = drop_captions(captions, 1.0, rng)
    assert dropped == [[], []]
    assert mask.all()


def test_caption_dropout_rate():
    _, mask = drop_captions([[1]] * 10000, 0.1, np.random.default_rng(9))
    assert abs(mask.mean() - 0.1) <= 0.02


def test_fresh_denoiser_loss_plateau(tiny_config):
    models = RestorationModels(tiny_config)
    count = 2000
    data = TrainingData(x0=np.zeros((count, 2, 4, 4), dtype=np.float32),
                        lq=np.zeros((count, 3, 16, 16), dtype=np.float32),
                        captions=[[1]] * count)
    loss = denoising_loss(data, models, models.schedule, np.random.default_rng(0), prior=True).item()
    assert loss == pytest.approx(math.sqrt(2.0 / math.pi), rel=0.02)


def test_denoising_loss_gradients_reach_the_alignment_module(tiny_config, rng):
    models = prepared_models(tiny_config, rng)
    for _, tensor in models.align.named_parameters():
        if not np.any(tensor.data):
            tensor.data = rng.normal(0.0, 0.3, tensor.shape)
    data = training_data(models, count=2)
    for module in models.components().values():
        module.to_dtype(np.float64)
    align = models.align
    leaves = [align.conv_x.weight, align.conv_m.weight, align.position,
              align.blocks[0].attn1.to_q.weight, align.blocks[1].ff2.weight,
              align.out_linear.weight]
    # same t and noise on every evaluation
    result = gradcheck(lambda: denoising_loss(data, models, models.schedule,
                                              np.random.default_rng(3)),
                       leaves, h=1e-6, max_coords=8)
    assert result.max_error <= 1e-2, result
    assert result.median_error <= 1e-4, result


def test_pretrain_align_only_moves_the_alignment_module(tiny_config, rng):
    models = prepared_models(tiny_config, rng)
    data = training_data(models)
    before = snapshot(models)
    result = run_stage(TrainConfig.for_stage(tiny_config, STAGE_PRETRAIN_ALIGN), models, data,
                       show_progress=False)
    assert len(result.records) == 2
    assert all(np.isfinite(result.losses))
    assert changed_components(before, snapshot(models)) == {'align'}
    assert not any(tensor.requires_grad for module in models.components().values()
                   for tensor in module.parameters())


def test_prior_stage_trains_denoiser_and_captions_only(tiny_config, rng):
    models = prepared_models(tiny_config, rng)
    before = snapshot(models)
    run_stage(TrainConfig.for_stage(tiny_config, STAGE_PRIOR), models, training_data(models),
              show_progress=False)
    changed = changed_components(before, snapshot(models))
    assert 'unet' in changed
    assert changed <= {'unet', 'text'}


@pytest.mark.parametrize('key, frozen, moved', [
    ('ft_en_fix_dm', {'unet'}, {'lq_encoder', 'align'}),
    ('fix_en_ft_dm', {'lq_encoder'}, {'align', 'unet'}),
    ('full', set(), {'lq_encoder', 'align', 'unet'}),
])
def test_joint_partitions_freeze_the_right_groups(key, frozen, moved, tiny_config, rng):
    models = prepared_models(tiny_config, rng)
    data = training_data(models)
    before = snapshot(models)
    for config in joint_configs(tiny_config, build_ablation(key)):
        run_stage(config, models, data, show_progress=False)
    changed = changed_components(before, snapshot(models))
    assert not changed & (frozen | {'vae', 'text'})
    assert moved <= changed


def test_stage_checkpoints(tiny_config, rng):
    models = prepared_models(tiny_config, rng)
    saved = []
    config = TrainConfig.for_stage(tiny_config, STAGE_PRETRAIN_ALIGN)
    config.checkpoint_every = 1
    result = run_stage(config, models, training_data(models),
                       checkpoint_fn=lambda iteration: saved.append(iteration) or f'step-{iteration}',
                       show_progress=False)
    assert saved == [1, 2, 2]
    assert result.checkpoint == 'step-2'


def test_nan_loss_raises_diverged(tiny_config, rng):
    models = prepared_models(tiny_config, rng)
    models.unet.conv_in.bias.data[:] = np.nan
    with pytest.raises(TrainingDivergedError) as info:
        run_stage(TrainConfig.for_stage(tiny_config, STAGE_PRIOR), models, training_data(models),
                  show_progress=False)
    assert info.value.iteration == 0
    assert 'prior' in str(info.value)


def test_ablation_plans():
    assert build_ablation('wo_align').align_kind == 'add'
    assert not build_ablation('wo_pretrain_align').pretrain_align
    assert build_ablation('last_feats').tap == TAP_LAST
    assert build_ablation('ft_en_fix_dm').joint_passes == [(GROUP_ENCODER, GROUP_ALIGN)]
    assert build_ablation('fix_en_ft_dm').joint_passes == [(GROUP_ALIGN, GROUP_UNET)]
    split = build_ablation('ft_en_dm_sp')
    assert split.joint_passes == [(GROUP_ENCODER, GROUP_ALIGN), (GROUP_UNET, GROUP_ALIGN)]
    assert split.pass_iters(5) == [3, 2]
    with pytest.raises(ValueError):
        build_ablation('wo_everything')


def test_full_plan_follows_ablation_settings(make_config):
    config = make_config(ablation={'align': 'none', 'align-pretrain': 'skip'})
    plan = build_ablation('full', config)
    assert plan.align_kind == 'add'
    assert not plan.pretrain_align


def test_joint_config_names(tiny_config):
    single = joint_configs(tiny_config, build_ablation('full'))
    assert [config.name for config in single] == [STAGE_JOINT]
    split = joint_configs(tiny_config, build_ablation('ft_en_dm_sp'))
    assert [config.name for config in split] == ['joint1', 'joint2']
    assert [config.iters for config in split] == [1, 1]
    assert split[1].trainable == (GROUP_UNET, GROUP_ALIGN)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(STAGE_JOINT, 1, 1, lr_align=1e-3, lr_unet=1e-4, lr_encoder=1e-3)
    with pytest.raises(ValueError):
        TrainConfig('warmup', 1, 1, lr_align=1e-3, lr_unet=1e-4, lr_encoder=1e-5)
    with pytest.raises(ValueError):
        TrainConfig(STAGE_PRIOR, 1, 1, lr_align=1e-3, lr_unet=1e-4, lr_encoder=1e-5,
                    trainable=('decoder',))
