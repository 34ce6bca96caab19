
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtcsim.exceptions import InvalidInputError
from dtcsim.scheduler import (
    UTILITY_FLOOR,
    PfState,
    SlotContext,
    UtilityWeights,
    allocate_power,
    allocate_res,
    associate_users,
    compute_sinr,
    objective,
    pf_schedule,
    rate,
    re_layout,
    run_bcd,
    schedule_pf,
    sinr_per_subcarrier,
    utility,
)

from conftest import random_channels


def test_association_single_bs(rng):
    assert associate_users(random_channels(rng, 1, 5, 2, 12)).tolist() == [0] * 5


def test_association_tie_and_strength(rng):
    h = random_channels(rng, 1, 1, 2, 12)
    assert associate_users(np.concatenate([h, h])).tolist() == [0]
    strong = np.concatenate([h, h, 10 * h])
    assert associate_users(strong).tolist() == [2]


def test_sinr_examples():
    h = np.zeros((2, 1, 2, 1), dtype=complex)
    h[0, 0, :, 0] = [1, 0]
    psd = np.array([[4.0, 9.0], [1.0, 1.0]])
    assoc = np.array([0])
    assert sinr_per_subcarrier(h[:1], psd[:1], assoc, 1.0)[0, 0] == pytest.approx(4)
    assert sinr_per_subcarrier(h[:1], np.zeros((1, 2)), assoc, 1.0)[0, 0] == 0
    h[1, 0, :, 0] = [np.sqrt(3), 0]
    assert compute_sinr(0, h, psd, assoc, 1.0) == pytest.approx(1)


@pytest.mark.parametrize("w,s,expected", [(1, 1, 1), (10, 3, 20), (5, 0, 0)])
def test_rate_examples(w, s, expected):
    assert rate(w, s) == pytest.approx(expected)


def test_rate_rejects_negative():
    with pytest.raises(InvalidInputError):
        rate(1.0, -0.5)


def test_power_examples():
    one = np.ones((1, 1, 1, 12), dtype=complex)
    assert allocate_power(one, [0], 3.0).psd.tolist() == [[3.0]]
    equal = np.ones((1, 1, 4, 12), dtype=complex)
    np.testing.assert_allclose(allocate_power(equal, [0], 2.0).psd, [[0.5] * 4])
    h = np.zeros((1, 1, 2, 1), dtype=complex)
    h[0, 0, :, 0] = [np.sqrt(2), 1]
    np.testing.assert_allclose(allocate_power(h, [0], 3.0).psd, [[2.0, 1.0]])


def test_power_idle_bs_uniform(rng):
    h = random_channels(rng, 2, 2, 4, 12)
    p = allocate_power(h, [0, 0], [1.0, 2.0])
    np.testing.assert_allclose(p.psd[1], [0.5] * 4)
    assert p.satisfies_budget()


def test_utility_examples():
    assert utility(5, -2, 0, 1, UtilityWeights(1, 1, 0)) == 7
    assert utility(5, 10, 3, 0, UtilityWeights(1, 0, 1)) == 8
    assert utility(0, 1, 0, 1, UtilityWeights(1, 1, 1)) == UTILITY_FLOOR
    # positive slack earns no urgency bonus
    assert utility(5, 2, 0, 1, UtilityWeights(1, 1, 0)) == 5


def test_allocate_res_examples():
    assert allocate_res([1, 1, 1, 1], 8).tolist() == [2, 2, 2, 2]
    assert allocate_res([3, 1], 4).tolist() == [3, 1]
    assert allocate_res([0.7], 9).tolist() == [9]
    assert allocate_res([UTILITY_FLOOR] * 3, 6).tolist() == [2, 2, 2]


def test_allocate_res_cap():
    assert allocate_res([10, 1, 1], 10, cap=4).tolist() == [4, 3, 3]
    # infeasible cap: everyone sits at the cap
    assert allocate_res([1, 1], 10, cap=3).tolist() == [3, 3]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1e-9, 1e6), min_size=1, max_size=12), st.integers(0, 500))
def test_allocate_res_conserves(u, n_re):
    a = allocate_res(u, n_re)
    assert a.sum() == n_re and np.all(a >= 0)


def test_re_layout_contiguous():
    layout = re_layout([3, 5, 4], [0, 0, 1], 2, 2, 6)
    assert layout.tolist() == [[3, 0], [3, 2], [4, 0]]


def test_pf_examples():
    assert pf_schedule([4, 1], [2, 1], 3).tolist() == [2, 1]
    assert pf_schedule([2, 2, 2], [1, 1, 1], 6).tolist() == [2, 2, 2]
    a = pf_schedule([5, 1, 2], [1, 1, 1], 8)
    assert a.argmax() == 0


def test_pf_state_update():
    s = PfState(2, horizon=4.0)
    s.update([5.0, 1.0])
    np.testing.assert_allclose(s.average, [2.0, 1.0])


def _ctx(h, **kw):
    return SlotContext(h, 1e-8, 1e-20, 1e6, 2, **kw)


def test_bcd_single_user(rng):
    h = random_channels(rng, 1, 1, 2, 24)
    res = run_bcd(_ctx(h))
    assert res.n_iter == 1
    assert res.allocation.shares.tolist() == [4]
    assert res.power.psd.sum() == pytest.approx(1e-8)


def test_bcd_symmetric_users(rng):
    h1 = random_channels(rng, 1, 1, 2, 24)
    res = run_bcd(_ctx(np.concatenate([h1, h1], axis=1)))
    assert res.allocation.shares.tolist() == [2, 2]


def test_bcd_history_monotone_and_conserving(rng):
    for _ in range(20):
        h = random_channels(rng, 2, 5, 2, 24)
        ctx = _ctx(h, previous=rng.integers(0, 4, 5), slack=rng.normal(0, 5, 5),
                   service_class=rng.integers(0, 2, 5))
        res = run_bcd(ctx, UtilityWeights(1, 0.5, 0.2), max_iter=10)
        assert all(b >= a for a, b in zip(res.history, res.history[1:]))
        assert res.objective == pytest.approx(objective(ctx, res.power, res.allocation.shares))
        assert res.power.satisfies_budget()
        for b in range(2):
            users = ctx.association == b
            if users.any():
                assert res.allocation.shares[users].sum() == ctx.n_re


def test_bcd_ineligible_users_get_nothing(rng):
    h = random_channels(rng, 1, 3, 2, 24)
    res = run_bcd(_ctx(h, eligible=[True, False, True]))
    assert res.allocation.shares[1] == 0 and res.allocation.shares.sum() == 4


def test_bcd_max_iter():
    with pytest.raises(InvalidInputError):
        run_bcd(_ctx(np.ones((1, 1, 1, 12))), max_iter=0)


def test_schedule_pf_conserves(rng):
    h = random_channels(rng, 2, 4, 2, 24)
    ctx = _ctx(h)
    res = schedule_pf(ctx, PfState(4))
    assert res.power.satisfies_budget()
    assert sum(res.allocation.per_bs_total(2)) == ctx.n_re * len(set(ctx.association.tolist()))


def test_context_validation():
    with pytest.raises(InvalidInputError):
        _ctx(np.ones((1, 1, 1, 6)))
    with pytest.raises(InvalidInputError):
        SlotContext(np.ones((1, 1, 1, 12)), 0.0, 1e-20, 1e6, 2)
