import pytest

from reltr.optim import PlateauState, plateau_update, sgd_step
from reltr.tensor import Tensor


def test_sgd_step():
    p = Tensor([1.0], requires_grad=True)
    p.grad = p.data * 0 + 2.0
    sgd_step([p], 0.1)
    assert p.data[0] == pytest.approx(0.8)


def test_sgd_skips_params_without_grad():
    p = Tensor([1.0], requires_grad=True)
    sgd_step([p], 0.1)
    assert p.data[0] == 1.0


def test_improving_metric_keeps_lr():
    state = PlateauState(learning_rate=1e-3, patience=3)
    for m in (1.0, 0.9, 0.8):
        plateau_update(state, m)
    assert state.learning_rate == 1e-3
    assert state.plateau_counter == 0


def test_flat_metric_decays_after_patience_plus_one():
    # call 1 sets the best; calls 2-5 are non-improvements 1..4; the 4th triggers decay
    state = PlateauState(learning_rate=1e-3, patience=3)
    lrs = [plateau_update(state, 1.0) for _ in range(5)]
    assert lrs[:4] == [1e-3] * 4
    assert lrs[4] == pytest.approx(1e-4)
    assert state.plateau_counter == 0


def test_max_mode():
    state = PlateauState(learning_rate=1.0, patience=0, mode="max")
    plateau_update(state, 0.5)
    assert plateau_update(state, 0.6) == 1.0
    assert plateau_update(state, 0.6) == pytest.approx(0.1)


def test_counter_never_exceeds_patience_and_lr_never_grows():
    state = PlateauState(learning_rate=1.0, patience=2)
    prev = state.learning_rate
    for m in [5, 4, 4, 4, 4, 3, 3, 3, 3, 3, 3, 2]:
        lr = plateau_update(state, m)
        assert state.plateau_counter <= state.patience
        assert lr <= prev
        prev = lr


def test_rejects_non_finite_metric():
    with pytest.raises(ValueError):
        plateau_update(PlateauState(), float("nan"))
