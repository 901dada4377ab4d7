import math

import numpy as np
import pytest

from lowres_adapt.training import (ADAPTER_PRESETS, CPT_TRAIN, TRAIN_PRESETS, AdapterConfig,
                                   ConfigError, TrainConfig, collapse_ratio, make_toy_task,
                                   toy_train, validate_adapter_config, validate_train_config)


def test_cpt_defaults_valid():
    assert validate_train_config(CPT_TRAIN) is CPT_TRAIN
    assert (CPT_TRAIN.per_device_batch, CPT_TRAIN.grad_accum, CPT_TRAIN.effective_batch) == (1, 16, 16)
    assert (CPT_TRAIN.seq_len, CPT_TRAIN.warmup_steps, CPT_TRAIN.epochs) == (4096, 50, 2)
    assert CPT_TRAIN.eval_split == 0.025 and CPT_TRAIN.seed == 42
    assert all(TRAIN_PRESETS[name].eval_split == 0.05 for name in ADAPTER_PRESETS)


def test_train_config_lists_every_violation():
    with pytest.raises(ConfigError) as exc:
        validate_train_config(TrainConfig(per_device_batch=2, grad_accum=8, effective_batch=15, eval_split=0.0))
    assert len(exc.value.errors) == 2
    assert "effective batch" in exc.value.errors[0]


@pytest.mark.parametrize("name", list(ADAPTER_PRESETS))
def test_adapter_presets_valid(name):
    validate_adapter_config(ADAPTER_PRESETS[name])


def test_adapter_preset_gammas():
    assert ADAPTER_PRESETS["sft-lora-r64"].gamma == 2.0
    assert ADAPTER_PRESETS["sft-rslora-r256"].gamma == 16.0
    assert ADAPTER_PRESETS["sft-dora-r256"].gamma == 16.0


@pytest.mark.parametrize("cfg", [
    AdapterConfig("lora", 0, 16.0),
    AdapterConfig("lora", 8, -1.0),
    AdapterConfig("lora", 8, 16.0, dropout=1.0),
    AdapterConfig("full", 8, 16.0),
    AdapterConfig("adapterx", 8, 16.0),
])
def test_adapter_config_rejects(cfg):
    with pytest.raises(ConfigError):
        validate_adapter_config(cfg)


def test_one_step_and_determinism():
    tel = toy_train("lora", 4, 16, 1)
    assert len(tel.loss) == len(tel.grad_norm) == 1
    a, b = toy_train("rslora", 8, 16, 20), toy_train("rslora", 8, 16, 20)
    assert a.loss == b.loss and a.grad_norm == b.grad_norm


@pytest.mark.parametrize("method", ["full", "lora", "rslora", "dora"])
def test_loss_decreases(method):
    tel = toy_train(method, 16, 16, 60)
    assert tel.loss[-1] < tel.loss[0]
    assert all(math.isfinite(v) for v in tel.loss + tel.grad_norm)


@pytest.mark.parametrize("r", [4, 16, 64])
def test_collapse_ratio_exact(r):
    measured, expected = collapse_ratio(r)
    assert measured == pytest.approx(expected, rel=1e-9)


def test_rank_ratio_shrinks_under_lora_scaling():
    def ratio(method):
        return toy_train(method, 64, 16, 1).grad_norm[0] / toy_train(method, 4, 16, 1).grad_norm[0]
    assert ratio("lora") <= 0.5 * ratio("rslora")


def test_higher_rank_stalls_under_lora_scaling():
    lora = toy_train("lora", 64, 16, 150)
    rs = toy_train("rslora", 64, 16, 150)
    assert rs.loss[-1] < 0.1 * lora.loss[-1]


def test_eval_below_train_with_dropout():
    tel = toy_train("rslora", 16, 16, 150, dropout=0.05)
    assert tel.eval_loss < tel.loss[-1]


def test_task_is_seeded():
    a, b = make_toy_task(1), make_toy_task(1)
    assert np.array_equal(a.W0, b.W0) and np.array_equal(a.Y, b.Y)
    assert not np.array_equal(a.W0, make_toy_task(2).W0)


def test_bad_arguments():
    with pytest.raises(ValueError):
        toy_train("lora", 4, 16, 0)
    with pytest.raises(ValueError):
        toy_train("lora", 4, 16, 5, dropout=1.0)
