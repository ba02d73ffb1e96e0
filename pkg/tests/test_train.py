import numpy as np
import pytest

from argan.checkpoint import load_checkpoint
from argan.config import ArganConfig
from argan.data import SampleTriplet, gen_synthetic_sample
from argan.train import (LOG_HEADER, NumericalError, Trainer, build_models, evaluate, model_tensors,
                         read_log)


def small_config(**kw):
    base = dict(depth=2, base_channels=4, channel_cap=8, batch_size=2, seed=1)
    base.update(kw)
    return ArganConfig(**base)


@pytest.fixture(scope="module")
def labeled():
    return [gen_synthetic_sample(s, 32) for s in range(4)]


@pytest.fixture(scope="module")
def unlabeled():
    return [SampleTriplet(gen_synthetic_sample(s, 32).shadow, name=f"u{s}") for s in range(10, 13)]


def test_zero_iterations_checkpoint_is_initialization(tmp_path, labeled):
    cfg = small_config(iterations=0)
    tr = Trainer(cfg, labeled)
    tr.run(log_path=tmp_path / "log.csv", ckpt_path=tmp_path / "c.ckpt")
    _, tensors = load_checkpoint(tmp_path / "c.ckpt")
    gen, disc = build_models(cfg)
    for name, arr in list(model_tensors(gen, "G").items()) + list(model_tensors(disc, "D").items()):
        np.testing.assert_array_equal(tensors[name], arr, err_msg=name)
    assert (tmp_path / "log.csv").read_text() == LOG_HEADER + "\n"


def test_log_rows_and_header(tmp_path, labeled):
    tr = Trainer(small_config(), labeled)
    tr.run(3, log_path=tmp_path / "log.csv")
    assert LOG_HEADER == "iter,l_det,l_rem_mse,l_rem_per,l_adv_g,l_adv_d,d_real,d_fake"
    rows = read_log(tmp_path / "log.csv")
    assert [r["iter"] for r in rows] == [1, 2, 3]
    for r in rows:
        assert all(np.isfinite(v) for v in r.values())
        assert 0 < r["d_real"] < 1 and 0 < r["d_fake"] < 1


def test_training_is_deterministic(tmp_path, labeled):
    for name in ("a", "b"):
        Trainer(small_config(), labeled).run(3, log_path=tmp_path / f"{name}.csv",
                                             ckpt_path=tmp_path / f"{name}.ckpt")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_periodic_checkpoints(tmp_path, labeled):
    tr = Trainer(small_config(checkpoint_every=2), labeled)
    tr.run(2, ckpt_path=tmp_path / "c.ckpt")
    _, tensors = load_checkpoint(tmp_path / "c.ckpt")
    assert tensors["opt_d.t"][0] == 2


def test_semi_supervised_lambda_one_matches_supervised(labeled, unlabeled):
    sup = Trainer(small_config(), labeled)
    semi = Trainer(small_config(semi_supervised=True, lam=1.0), labeled, unlabeled)
    for _ in range(3):
        a, b = sup.step(), semi.step()
        assert a.csv() == b.csv()
    # batch-norm running statistics also see the unlabeled batch, so only parameters are compared
    for model in ("gen", "disc"):
        pa = getattr(sup, model).named_parameters()
        pb = getattr(semi, model).named_parameters()
        for k in pa:
            assert pa[k].data.tobytes() == pb[k].data.tobytes(), k


def test_semi_supervised_uses_unlabeled(labeled, unlabeled):
    sup = Trainer(small_config(), labeled)
    semi = Trainer(small_config(semi_supervised=True, lam=0.5), labeled, unlabeled)
    assert sup.step().l_adv_d != semi.step().l_adv_d


def test_trainer_input_validation(labeled):
    with pytest.raises(ValueError, match="labeled"):
        Trainer(small_config(), [])
    with pytest.raises(ValueError, match="unlabeled"):
        Trainer(small_config(semi_supervised=True), labeled)
    with pytest.raises(ValueError, match="expects 64x64"):
        Trainer(small_config(image_size=64), labeled)


def test_nan_aborts_naming_loss(labeled):
    bad = labeled[0]
    poisoned = SampleTriplet(bad.shadow, np.full_like(bad.matte, np.nan), bad.free, name="nan")
    tr = Trainer(small_config(batch_size=4), [poisoned] + labeled[1:])
    with pytest.raises(NumericalError, match="l_det"):
        tr.step()


def test_losses_fall_on_tiny_problem(labeled):
    tr = Trainer(small_config(lr=2e-3), labeled[:2])
    rows = [tr.step() for _ in range(40)]
    assert rows[-1].l_rem_mse < rows[0].l_rem_mse
    assert rows[-1].l_det < rows[0].l_det


def test_evaluate_reports_identity_baseline(labeled):
    tr = Trainer(small_config(), labeled)
    ev = evaluate(tr.gen, labeled)
    assert ev["ber_identity"] == 50.0
    assert ev["rmse_shadow_identity"] > 0
    assert set(ev) == {"ber", "ber_identity", "rmse_shadow", "rmse_shadow_identity", "rmse_all"}
