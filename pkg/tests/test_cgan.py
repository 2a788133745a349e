import numpy as np
import pytest

from sarbiomass.autodiff import Tensor, gradcheck
from sarbiomass.autodiff import functional as F
from sarbiomass.cgan import (
    ConfigError,
    DiscriminatorSpec,
    GeneratorSpec,
    TrainConfig,
    build_discriminator,
    build_generator,
    discriminator_receptive_field,
    generate,
    gradient_penalty,
    load_generator,
    loss_lsgan,
    loss_vanilla,
    loss_wgangp,
    receptive_field,
    train,
)
from sarbiomass.synth import toy_translation


@pytest.mark.parametrize("kind,expected", [("pixel", 1), ("patch16", 16), ("patch34", 34)])
def test_receptive_fields(kind, expected):
    d = build_discriminator(DiscriminatorSpec(kind=kind, base_width=4))
    assert discriminator_receptive_field(d) == expected


def test_receptive_field_recurrence():
    assert receptive_field([]) == 1
    assert receptive_field([(3, 1), (3, 1)]) == 5
    assert receptive_field([(2, 2), (2, 2), (2, 2)]) == 8


@pytest.mark.parametrize("blocks", [4, 5, 6])
@pytest.mark.parametrize("norm", ["bn", "in"])
def test_generator_shape_and_non_negative(rng, blocks, norm):
    g = build_generator(GeneratorSpec(resnet_blocks=blocks, norm=norm, base_width=4), seed=1)
    out = generate(g, rng.normal(size=(2, 3, 64, 64)) * 3)
    assert out.shape == (2, 1, 64, 64)
    assert out.min() >= 0.0


def test_generator_bias_only_when_no_batch_norm():
    g = build_generator(GeneratorSpec(norm="bn", base_width=2))
    names = [n for n, _ in g.named_parameters() if n.endswith("bias")]
    assert len(names) == 1  # the 7x7 head only


@pytest.mark.parametrize("kind", ["pixel", "patch16", "patch34"])
def test_discriminator_output_grid(rng, kind):
    d = build_discriminator(DiscriminatorSpec(kind=kind, base_width=4))
    out = d(Tensor(rng.normal(size=(1, 3, 64, 64))), Tensor(rng.normal(size=(1, 1, 64, 64))))
    expected = {"pixel": 64, "patch16": 30, "patch34": 14}[kind]
    assert out.shape == (1, 1, expected, expected)




def test_invalid_specs_raise():
    with pytest.raises(ValueError):
        GeneratorSpec(resnet_blocks=3)
    with pytest.raises(ValueError):
        GeneratorSpec(norm="ln")
    with pytest.raises(ValueError):
        DiscriminatorSpec(kind="patch70")


def test_vanilla_loss_at_zero_logits():
    z = Tensor(np.zeros((2, 1, 3, 3)))
    losses = loss_vanilla(z, z, z)
    assert losses.loss_d.item() == pytest.approx(2 * np.log(2), abs=1e-15)
    assert losses.loss_g.item() == pytest.approx(np.log(2), abs=1e-15)


def test_vanilla_perfect_discriminator():
    losses = loss_vanilla(Tensor([1e9]), Tensor([-1e9]))
    assert losses.loss_d.item() < 1e-12


def test_lsgan_hand_values():
    real, fake = Tensor([1.0, 0.5]), Tensor([0.0, 0.5])
    losses = loss_lsgan(real, fake, fake)
    # 0.5 * mean((real - 1)^2) + 0.5 * mean(fake^2)
    assert losses.loss_d.item() == pytest.approx(0.5 * 0.125 + 0.5 * 0.125, abs=1e-15)
    assert losses.loss_g.item() == pytest.approx(0.5 * (1 + 0.25) / 2, abs=1e-15)


def test_wgangp_loss_composition():
    out = loss_wgangp(Tensor([2.0, 4.0]), Tensor([1.0, 1.0]), Tensor(0.5), 10.0, Tensor([3.0]))
    assert out.loss_d.item() == pytest.approx(1.0 - 3.0 + 5.0)
    assert out.loss_g.item() == pytest.approx(-3.0)


def _linear_critic(w):
    def critic(sar, agb):
        return F.reshape(F.sum(F.mul(agb, w), axis=(1, 2, 3)), (agb.shape[0], 1))
    return critic


def test_gradient_penalty_linear_critic(rng):
    shape = (1, 4, 4)
    w = rng.normal(size=shape)
    w *= 2.0 / np.linalg.norm(w)
    sar = Tensor(np.zeros((3, 3, 4, 4)))
    real, fake = rng.normal(size=(3, *shape)), rng.normal(size=(3, *shape))
    pen = gradient_penalty(_linear_critic(Tensor(w)), sar, real, fake, rng.uniform(size=3))
    assert abs(10.0 * pen.item() - 10.0) < 1e-10


def test_training_step_counts():
    x, z = toy_translation(4, seed=3, size=16)
    g = build_generator(GeneratorSpec(resnet_blocks=4, base_width=2), seed=0)
    d = build_discriminator(DiscriminatorSpec(kind="pixel", norm="ln", base_width=2), seed=1)
    res = train(g, d, x, z, TrainConfig(objective="wgangp", epochs=1, batch_size=2, n_critic=5))
    assert res.g_steps == 2
    assert res.d_steps == 10


def test_wgangp_rejects_batch_norm_critic():
    x, z = toy_translation(2, seed=3, size=16)
    g = build_generator(GeneratorSpec(resnet_blocks=4, base_width=2))
    d = build_discriminator(DiscriminatorSpec(kind="pixel", norm="bn", base_width=2))
    with pytest.raises(ConfigError):
        train(g, d, x, z, TrainConfig(objective="wgangp", epochs=1))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(objective="hinge")
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def _run_once(tmp_path, tag):
    x, z = toy_translation(4, seed=5, size=16)
    g = build_generator(GeneratorSpec(resnet_blocks=4, base_width=2), seed=0)
    d = build_discriminator(DiscriminatorSpec(kind="patch16", norm="bn", base_width=2), seed=1)
    train(g, d, x, z, TrainConfig(objective="vanilla", epochs=1, batch_size=3, seed=4), tmp_path / tag)
    return (tmp_path / tag / "checkpoint_final.bin").read_bytes(), (tmp_path / tag / "loss_log.csv").read_text()


def test_training_is_bit_identical_on_rerun(tmp_path):
    assert _run_once(tmp_path, "a") == _run_once(tmp_path, "b")


def test_loss_log_header_and_generator_reload(tmp_path):
    _run_once(tmp_path, "c")
    assert (tmp_path / "c" / "loss_log.csv").read_text().splitlines()[0] == "epoch,step,loss_d,loss_g"
    g = build_generator(GeneratorSpec(resnet_blocks=4, base_width=2), seed=99)
    load_generator(tmp_path / "c" / "checkpoint_final", g)
    x, _ = toy_translation(1, seed=5, size=16)
    assert generate(g, x).shape == (1, 1, 16, 16)


@pytest.mark.parametrize("kind", ["pixel", "patch16", "patch34"])
def test_discriminator_gradcheck(rng, kind):
    d = build_discriminator(DiscriminatorSpec(kind=kind, norm="ln", base_width=2), seed=3)
    for p in d.parameters():
        p.data = rng.normal(size=p.shape) * 0.5
    sar = Tensor(rng.normal(size=(1, 3, 12, 12)))
    agb = Tensor(rng.normal(size=(1, 1, 12, 12)))
    params = d.parameters()

    def f(*ps):
        return d(sar, agb)

    assert gradcheck(f, params) < 1e-4
