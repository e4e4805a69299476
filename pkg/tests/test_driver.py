import numpy as np
import pytest

from classinc import driver
from classinc.aligning import weight_norms
from classinc.driver import (RunState, TrainConfig, VariationSpec, run_experiment, run_step,
                             snapshot_teacher, step_sample_ids)
from classinc.errors import ConfigError, DegenerateWeightsError, ProtocolError
from classinc.memory import ExemplarMemory
from classinc.model import load_checkpoint, save_checkpoint


def first_step(data, schedule, variation, train, model_cfg, budget=12):
    state = RunState(memory=ExemplarMemory(budget))
    ids = step_sample_ids(data.y_train, schedule.batch(1))
    return run_step(state, data, schedule, ids, variation, train, model_cfg, seed=0)


def test_first_step_semantics(small_data, small_schedule, fast_train, small_model):
    res = first_step(small_data, small_schedule, VariationSpec(), fast_train, small_model)
    m = res.metrics
    assert m.step == 1 and m.old_classes == 0 and m.seen_classes == 2
    assert m.norms.gamma is None and m.gamma_applied is None
    assert res.wa_equivalence_gap is None
    assert m.errors["e_o"] == 0


def test_wa_equivalence_recheck_during_run(small_data, small_schedule, fast_train, small_model):
    for bias in (False, True):
        res = run_experiment(small_data, small_schedule, VariationSpec(bias_enabled=bias), fast_train,
                             small_model, 12, seed=1)
        gaps = [g for g in res.wa_gaps if g is not None]
        assert len(gaps) == 2
        assert max(gaps) < 1e-9


def test_wa_applied_once_after_training(small_data, small_schedule, fast_train, small_model):
    res = run_experiment(small_data, small_schedule, VariationSpec(), fast_train, small_model, 12, seed=2)
    state = res.state
    raw, final = state.raw_model.head, state.model.head
    gamma = weight_norms(raw).gamma
    assert gamma == res.steps[-1].gamma_applied == res.steps[-1].norms.gamma
    assert np.array_equal(final.weights[:, :4], raw.weights[:, :4])
    np.testing.assert_array_equal(final.weights[:, 4:], gamma * raw.weights[:, 4:])


def test_norm_report_is_pre_correction(small_data, small_schedule, fast_train, small_model):
    res = run_experiment(small_data, small_schedule, VariationSpec(), fast_train, small_model, 12, seed=0)
    post = weight_norms(res.state.model.head)
    assert abs(post.gamma - 1.0) < 1e-9
    assert res.steps[-1].norms.gamma != pytest.approx(1.0, abs=1e-6)


def test_nonnegative_head_at_every_step(small_data, small_schedule, fast_train, small_model):
    heads = []
    run_experiment(small_data, small_schedule, VariationSpec(), fast_train, small_model, 12, seed=0,
                   on_step=lambda r: heads.append(r.state.model.head.weights.copy()))
    assert len(heads) == 3
    assert all(np.all(w >= 0) for w in heads)


def test_unrestricted_head_may_go_negative(small_data, small_schedule, fast_train, small_model):
    res = run_experiment(small_data, small_schedule, VariationSpec(restrict_nonnegative=False), fast_train,
                         small_model, 12, seed=0)
    assert np.any(res.state.model.head.weights < 0)


def test_determinism(small_data, small_schedule, fast_train, small_model):
    a = run_experiment(small_data, small_schedule, VariationSpec(), fast_train, small_model, 12, seed=5)
    b = run_experiment(small_data, small_schedule, VariationSpec(), fast_train, small_model, 12, seed=5)
    for x, y in zip(a.steps, b.steps):
        dx, dy = x.to_dict(), y.to_dict()
        dx.pop("wallclock"), dy.pop("wallclock")
        assert dx == dy
    assert np.array_equal(a.state.model.head.weights, b.state.model.head.weights)


def test_teacher_is_frozen_and_matches_checkpoint(small_data, small_schedule, fast_train, small_model, tmp_path):
    res1 = first_step(small_data, small_schedule, VariationSpec(), fast_train, small_model)
    save_checkpoint(tmp_path / "step_1.npz", res1.state.model, 0)
    probe = small_data.x_test[:10]
    before = res1.state.model.logits(probe)
    teacher = snapshot_teacher(res1.state.model)
    assert teacher.old_count == small_schedule.old_count(2) == teacher.model.head.num_classes

    ids = step_sample_ids(small_data.y_train, small_schedule.batch(2))
    train = TrainConfig(epochs=10, batch_size=16, lr=0.05)
    res2 = run_step(res1.state, small_data, small_schedule, ids, VariationSpec(), train, small_model, seed=0)
    assert np.array_equal(res1.state.model.logits(probe), before)
    assert np.array_equal(teacher.logits(probe), before)
    assert not np.array_equal(res2.state.model.logits(probe)[:, :2], before)

    saved, _ = load_checkpoint(tmp_path / "step_1.npz")
    assert np.array_equal(saved.head.weights, teacher.model.head.weights)
    for k, v in saved.extractor.params.items():
        assert np.array_equal(v, teacher.model.extractor.params[k])
    with pytest.raises(ValueError):
        teacher.model.head.weights[0, 0] = 1.0


def test_schedule_mismatch(small_data, small_schedule, fast_train, small_model):
    ids = step_sample_ids(small_data.y_train, small_schedule.batch(2))
    with pytest.raises(ProtocolError):
        run_step(RunState(memory=ExemplarMemory(12)), small_data, small_schedule, ids, VariationSpec(),
                 fast_train, small_model, seed=0)


def test_degenerate_weights_report_step(small_data, small_schedule, fast_train, small_model, monkeypatch):
    def boom(head, kind):
        raise DegenerateWeightsError("mean norm of new-class weights is zero")

    monkeypatch.setattr(driver, "align_weights", boom)
    with pytest.raises(DegenerateWeightsError, match="step 2"):
        run_experiment(small_data, small_schedule, VariationSpec(), fast_train, small_model, 12, seed=0)


def test_old_count_grows_with_schedule(small_data, small_schedule, fast_train, small_model):
    res = run_experiment(small_data, small_schedule, VariationSpec(use_wa=False), fast_train, small_model,
                         12, seed=0)
    assert [m.old_classes for m in res.steps] == [0, 2, 4]
    assert [m.seen_classes for m in res.steps] == [2, 4, 6]
    assert [m.class_order for m in res.steps][-1] == small_schedule.order


@pytest.mark.parametrize("variation", [
    VariationSpec(use_kd=True, use_wa=False, use_wnl=True),
    VariationSpec(use_unit_norm_post=True, use_wa=False),
    VariationSpec(teacher="pre_wa"),
    VariationSpec(norm_kind="one_norm", restrict_nonnegative=False, bias_enabled=True),
])
def test_variations_run(small_data, small_schedule, fast_train, small_model, variation):
    res = run_experiment(small_data, small_schedule, variation, fast_train, small_model, 12, seed=0)
    assert len(res.steps) == 3
    assert all(0.0 <= m.top1 <= 1.0 for m in res.steps)
    if variation.use_wnl:
        norms = res.steps[-1].norms
        np.testing.assert_allclose(norms.old_norms + norms.new_norms, 1.0, atol=1e-12)


def test_pre_wa_teacher_differs(small_data, small_schedule, fast_train, small_model):
    a = run_experiment(small_data, small_schedule, VariationSpec(), fast_train, small_model, 12, seed=0)
    b = run_experiment(small_data, small_schedule, VariationSpec(teacher="pre_wa"), fast_train, small_model,
                       12, seed=0)
    # the step-2 teacher is the step-1 model, which WA never touches
    assert a.steps[1].top1 == b.steps[1].top1
    assert not np.array_equal(a.state.model.head.weights, b.state.model.head.weights)


def test_no_rehearsal(small_data, small_schedule, fast_train, small_model):
    res = run_experiment(small_data, small_schedule, VariationSpec(), fast_train, small_model, None, seed=0)
    assert res.state.memory is None


def test_random_memory_strategy(small_data, small_schedule, fast_train, small_model):
    res = run_experiment(small_data, small_schedule, VariationSpec(), fast_train, small_model, 12, "random",
                         seed=0)
    assert res.state.memory.counts() == {c: 2 for c in range(6)}


def test_single_step_and_upper_bound(small_data, small_schedule, fast_train, small_model):
    res = run_experiment(small_data, small_schedule, VariationSpec(), fast_train, small_model, 12, seed=0,
                         upper_bound=True)
    assert len(res.steps) == 1 and res.steps[0].seen_classes == 6
    assert res.summary.incremental_average is None
    assert res.summary.upper_bound == res.steps[0].top1


def test_config_validation():
    with pytest.raises(ConfigError):
        VariationSpec(use_wa=True, use_wnl=True)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=10, milestones=(5, 10))
    assert TrainConfig(epochs=30).effective_milestones == (18, 24)
    t = TrainConfig(epochs=250, milestones=(100, 150, 200))
    assert [t.lr_at(e) for e in (0, 99, 100, 150, 249)] == pytest.approx([0.1, 0.1, 0.01, 0.001, 0.0001])


def test_sgd_matches_reference_update():
    opt = driver.SGD(momentum=0.9, weight_decay=0.1)
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, 0.5])}
    p1 = opt.step(p, g, lr=0.1)
    d1 = g["w"] + 0.1 * p["w"]
    np.testing.assert_allclose(p1["w"], p["w"] - 0.1 * d1)
    p2 = opt.step(p1, g, lr=0.1)
    d2 = g["w"] + 0.1 * p1["w"]
    np.testing.assert_allclose(p2["w"], p1["w"] - 0.1 * (0.9 * d1 + d2))
