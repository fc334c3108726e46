"""Recurrence, bound, and adversarial-audit checks against hand-computed values."""

import numpy as np
import pytest

import dyndepth.autodiff as ad
from dyndepth.autodiff import Tensor
from dyndepth.config import ModelConfig
from dyndepth.halting import (
    BlockReadout,
    DactModel,
    HaltingState,
    adversarial_bound_audit,
    dact_step,
    halting_bound_holds,
    initial_state,
    run_bound_audit_suite,
    run_recurrence,
)
from dyndepth.rng import STREAM_MODEL_INIT, make_rng

TINY_CONFIG = ModelConfig(num_blocks=3, hidden_dim=8, num_heads=2, ffn_dim=16,
                          vocab_size=16, max_seq_len=12, num_classes=2)


def readout(y, h):
    return BlockReadout(probs=Tensor(np.asarray(y, dtype=np.float64)), halt=Tensor(float(h)))


def test_initial_state_is_zero_answer_full_remaining():
    state = initial_state(3)
    assert np.array_equal(state.answer_values(), np.zeros(3))
    assert state.remaining_value() == 1.0
    assert state.steps == 0


def test_first_step_copies_probs():
    # remaining=1 forces the answer to equal the first block's distribution
    state = dact_step(initial_state(2), readout([0.6, 0.4], 0.7))
    assert np.array_equal(state.answer_values(), [0.6, 0.4])
    assert state.remaining_value() == pytest.approx(0.7, abs=1e-15)
    assert state.steps == 1


def test_second_step_hand_computed():
    # from a=[0.6,0.4], p=0.5 with y=[0.2,0.8]:
    #   a' = [0.2*0.5 + 0.6*0.5, 0.8*0.5 + 0.4*0.5] = [0.4, 0.6]
    state = HaltingState(Tensor([0.6, 0.4]), Tensor(0.5), steps=1)
    out = dact_step(state, readout([0.2, 0.8], 0.3))
    assert np.allclose(out.answer_values(), [0.4, 0.6], atol=1e-15)
    assert out.remaining_value() == pytest.approx(0.15, abs=1e-15)
    assert out.steps == 2


def test_answer_update_uses_incoming_remaining():
    # if the decayed remaining were used instead, a' would be [0.26, 0.74]
    state = HaltingState(Tensor([0.6, 0.4]), Tensor(0.5), steps=1)
    out = dact_step(state, readout([0.2, 0.8], 0.3))
    assert not np.allclose(out.answer_values(), [0.26, 0.74], atol=1e-3)


def test_all_h_one_reduces_to_latest_readout_exactly():
    rng = np.random.default_rng(7)
    state = initial_state(4)
    for _ in range(6):
        y = rng.dirichlet(np.ones(4))
        state = dact_step(state, readout(y, 1.0))
        assert np.array_equal(state.answer_values(), y)  # bitwise, not approx
        assert state.remaining_value() == 1.0


def test_answer_stays_probability_vector():
    rng = np.random.default_rng(3)
    state = initial_state(3)
    for _ in range(10):
        state = dact_step(state, readout(rng.dirichlet(np.ones(3)), rng.uniform(0.05, 0.95)))
        a = state.answer_values()
        assert a.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(a >= 0.0) and np.all(a <= 1.0)


def test_remaining_equals_product_of_halts():
    rng = np.random.default_rng(11)
    state = initial_state(2)
    product = 1.0
    for _ in range(8):
        h = float(rng.uniform(0.1, 0.9))
        state = dact_step(state, readout(rng.dirichlet(np.ones(2)), h))
        product *= h
        assert state.remaining_value() == pytest.approx(product, abs=1e-12)
        assert state.remaining_value() <= 1.0


def test_run_recurrence_returns_all_states():
    readouts = [readout([0.6, 0.4], 0.5), readout([0.2, 0.8], 0.5)]
    states = run_recurrence(readouts, 2)
    assert len(states) == 2
    assert states[0].steps == 1 and states[1].steps == 2
    assert np.allclose(states[1].answer_values(), [0.4, 0.6], atol=1e-15)


# -- halting bound -------------------------------------------------------------------


def test_bound_holds_hand_case():
    # 0.9 * 0.99^3 = 0.8732691 >= 0.1 + 0.03 = 0.13
    state = HaltingState(Tensor([0.9, 0.1]), Tensor(0.01), steps=1)
    assert halting_bound_holds(state, 3) is True


def test_bound_fails_when_remaining_mass_large():
    # 0.6 * 0.8^2 = 0.384 < 0.4 + 0.4 = 0.8
    state = HaltingState(Tensor([0.6, 0.4]), Tensor(0.2), steps=1)
    assert halting_bound_holds(state, 2) is False


def test_bound_with_zero_remaining_always_holds():
    state = HaltingState(Tensor([0.51, 0.49]), Tensor(0.0), steps=1)
    for d in (0, 1, 5):
        assert halting_bound_holds(state, d) is True


def test_bound_with_zero_steps_left_always_holds():
    state = HaltingState(Tensor([0.4, 0.6]), Tensor(0.9), steps=1)
    assert halting_bound_holds(state, 0) is True


def test_bound_tie_breaks_by_lowest_index():
    # exact tie: c* = 0, runner-up = 1; with d=0 the bound degenerates to a tie check
    state = HaltingState(Tensor([0.5, 0.5]), Tensor(0.5), steps=1)
    assert halting_bound_holds(state, 0) is True


def test_bound_rejects_single_class_and_negative_d():
    with pytest.raises(ValueError):
        halting_bound_holds(HaltingState(Tensor([1.0]), Tensor(0.5), 1), 1)
    with pytest.raises(ValueError):
        halting_bound_holds(HaltingState(Tensor([0.6, 0.4]), Tensor(0.5), 1), -1)


# -- adversarial audit ----------------------------------------------------------------


def test_audit_hand_trace():
    # adversary pours y=[0,1] with h=1 for 3 steps from a=[0.9,0.1], p=0.01:
    # a0 decays by 0.99 each step -> 0.9*0.99^3 = 0.8732691
    # a1 ends at 1 - 0.8732691 = 0.1267309; argmax never flips
    state = HaltingState(Tensor([0.9, 0.1]), Tensor(0.01), steps=1)
    assert adversarial_bound_audit(state, 3) is True


def test_audit_detects_flippable_state():
    # bound fails here and the adversary indeed flips the argmax in one step:
    # a = [0.6*0.8, 0.2 + 0.4*0.8] = [0.48, 0.52]
    state = HaltingState(Tensor([0.6, 0.4]), Tensor(0.2), steps=1)
    assert halting_bound_holds(state, 2) is False
    assert adversarial_bound_audit(state, 2) is False


def test_audit_vacuous_with_no_steps_left():
    state = HaltingState(Tensor([0.4, 0.6]), Tensor(0.9), steps=1)
    assert adversarial_bound_audit(state, 0) is True


@pytest.mark.parametrize("num_classes", [2, 3, 5])
def test_audit_agrees_with_bound_on_random_states(num_classes):
    rng = np.random.default_rng(13)
    held = 0
    for _ in range(500):
        a = rng.dirichlet(np.ones(num_classes))
        p = 10.0 ** rng.uniform(-5, 0)
        d = int(rng.integers(0, 7))
        state = HaltingState(Tensor(a), Tensor(p), steps=1)
        if halting_bound_holds(state, d):
            held += 1
            assert adversarial_bound_audit(state, d) is True
    assert held > 0  # the sample must actually exercise the audit


def test_audit_suite_runs_clean():
    checked, failures = run_bound_audit_suite(trials=300, seed=5, num_classes=3, max_steps=5)
    assert checked == 300
    assert failures == 0


# -- model-level behaviour ------------------------------------------------------------


@pytest.fixture
def model():
    return DactModel(TINY_CONFIG, seed=0)


@pytest.fixture
def token_ids():
    rng = make_rng(99, STREAM_MODEL_INIT)
    return [1] + list(rng.integers(4, 16, size=9)) + [0, 0]


def test_block_readout_shapes_and_ranges(model, token_ids):
    states = model.encoder.encode(token_ids)
    for i, cls in enumerate(states.cls_states, start=1):
        r = model.block_readout(cls, i)
        assert r.probs.data.shape == (2,)
        assert r.probs.data.sum() == pytest.approx(1.0, abs=1e-9)
        assert 0.0 < float(r.halt.data) < 1.0


def test_block_readout_zero_heads_give_uniform_and_half(model, token_ids):
    for head in model.out_heads:
        head.w.data[:] = 0.0
        head.b.data[:] = 0.0
    for head in model.halt_heads:
        head.w.data[:] = 0.0
        head.b.data[:] = 0.0
    states = model.encoder.encode(token_ids)
    r = model.block_readout(states.cls_states[0], 1)
    assert np.allclose(r.probs.data, [0.5, 0.5], atol=1e-15)
    assert float(r.halt.data) == pytest.approx(0.5, abs=1e-15)


def test_block_readout_heads_are_not_shared(model, token_ids):
    states = model.encoder.encode(token_ids)
    cls = states.cls_states[0]
    r1 = model.block_readout(cls, 1)
    r2 = model.block_readout(cls, 2)
    assert not np.allclose(r1.probs.data, r2.probs.data)


def test_block_readout_rejects_bad_index(model, token_ids):
    states = model.encoder.encode(token_ids)
    with pytest.raises(ValueError):
        model.block_readout(states.cls_states[0], 0)
    with pytest.raises(ValueError):
        model.block_readout(states.cls_states[0], 4)


def test_forward_training_runs_all_blocks(model, token_ids):
    before = model.encoder.blocks_executed
    model.forward_training(token_ids, 0, tau=0.1)
    assert model.encoder.blocks_executed - before == TINY_CONFIG.num_blocks


def test_loss_breakdown_identity(model, token_ids):
    _, losses, readouts = model.forward_training(token_ids, 1, tau=0.5)
    halts = sum(float(r.halt.data) for r in readouts)
    assert losses.ponder_penalty.item() == pytest.approx(halts, abs=1e-12)
    assert losses.total.item() == pytest.approx(
        losses.task_loss.item() + 0.5 * losses.ponder_penalty.item(), abs=1e-12
    )
    assert losses.tau == 0.5


def test_zero_tau_recovers_task_loss(model, token_ids):
    _, losses, _ = model.forward_training(token_ids, 1, tau=0.0)
    assert losses.total.item() == losses.task_loss.item()


def test_ponder_gradient_carries_constant_tau_term(model, token_ids):
    tau = 0.3
    _, losses_zero, readouts_zero = model.forward_training(token_ids, 0, tau=0.0)
    losses_zero.total.backward()
    _, losses_tau, readouts_tau = model.forward_training(token_ids, 0, tau=tau)
    losses_tau.total.backward()
    for r0, rt in zip(readouts_zero, readouts_tau):
        assert float(rt.halt.grad) - float(r0.halt.grad) == pytest.approx(tau, abs=1e-12)


def test_gradient_reaches_every_parameter(model, token_ids):
    _, losses, _ = model.forward_training(token_ids, 0, tau=0.1)
    losses.total.backward()
    for name, p in model.named_parameters():
        assert p.grad is not None, f"{name} received no gradient"


def test_forward_adaptive_matches_full_run_argmax(model):
    rng = np.random.default_rng(21)
    for _ in range(25):
        ids = [1] + list(rng.integers(4, 16, size=8))
        pred, used, _ = model.forward_adaptive(ids)
        assert pred == model.predict_full(ids)
        assert 1 <= used <= TINY_CONFIG.num_blocks


def test_forward_adaptive_saturated_low_halt_exits_at_block_one(model, token_ids):
    for head in model.halt_heads:
        head.w.data[:] = 0.0
        head.b.data[:] = -50.0  # h ~ 2e-22, remaining mass collapses immediately
    pred, used, state = model.forward_adaptive(token_ids)
    assert used == 1
    states = model.encoder.encode(token_ids)
    block1 = model.block_readout(states.cls_states[0], 1)
    assert pred == int(np.argmax(block1.probs.data))


def test_forward_adaptive_high_halt_never_exits_early(model, token_ids):
    for head in model.halt_heads:
        head.w.data[:] = 0.0
        head.b.data[:] = 50.0  # h ~ 1, remaining mass never decays
    _, used, _ = model.forward_adaptive(token_ids)
    assert used == TINY_CONFIG.num_blocks


def test_forward_adaptive_trace_rows(model, token_ids):
    trace = []
    _, used, _ = model.forward_adaptive(token_ids, trace=trace)
    assert len(trace) == used
    assert [row["block"] for row in trace] == list(range(1, used + 1))
    for row in trace:
        assert set(row) == {"block", "probs", "halt", "remaining", "answer", "halted"}
    assert trace[-1]["halted"] is True
    assert all(row["halted"] is False for row in trace[:-1])


def test_forward_adaptive_charges_only_executed_blocks(model, token_ids):
    for head in model.halt_heads:
        head.w.data[:] = 0.0
        head.b.data[:] = -50.0
    before = model.encoder.blocks_executed
    _, used, _ = model.forward_adaptive(token_ids)
    assert model.encoder.blocks_executed - before == used == 1


def test_reinit_heads_keeps_final_output_head(model):
    final_w = model.out_heads[-1].w.data.copy()
    first_w = model.out_heads[0].w.data.copy()
    halt_w = model.halt_heads[-1].w.data.copy()
    model.reinit_heads(make_rng(1, STREAM_MODEL_INIT))
    assert np.array_equal(model.out_heads[-1].w.data, final_w)
    assert not np.array_equal(model.out_heads[0].w.data, first_w)
    assert not np.array_equal(model.halt_heads[-1].w.data, halt_w)


def test_named_parameters_unique_and_complete(model):
    names = [name for name, _ in model.named_parameters()]
    assert len(names) == len(set(names))
    # encoder params plus 4 head tensors per block
    assert len(names) == len(list(model.encoder.named_parameters())) + 4 * TINY_CONFIG.num_blocks
