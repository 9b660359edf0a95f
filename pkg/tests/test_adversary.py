import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nimean.adversary import (
    CanonicalAction,
    QueryAlgorithm,
    adversarial_oracles,
    bernoulli_from_bits,
    bit_oracle,
    build_low_depth,
    counting_blocks,
    effective_state,
    grover_counting_algorithm,
    hard_counting_sequence,
    make_estimator_unitary,
    random_projector,
    random_query_algorithm,
    recover_query_register,
    run_algorithm,
    schmidt_coefficients,
)
from nimean.errors import PreconditionError, RegisterOverflow, ShapeError, ValidationError
from nimean.rvoracle import oracle_marginal
from nimean.statevec import complete_to_unitary, random_state, unitarity_error


def _setup(n_Q, n_W, T, seed, rank=1):
    rng = np.random.default_rng(seed)
    alg = random_query_algorithm(n_Q, n_W, T, rng)
    canon = CanonicalAction(random_state(1 << n_Q, rng))
    return alg, canon, random_projector(1 << (n_Q + n_W), rank, rng)


def test_algorithm_shape_checks():
    with pytest.raises(ShapeError):
        QueryAlgorithm(1, 1, (np.eye(4),), (1,))
    with pytest.raises(ValidationError):
        QueryAlgorithm(1, 1, (np.eye(4), np.eye(4)), (2,))


def test_effective_state_base_and_product_form():
    alg, canon, _ = _setup(3, 1, 2, 0)
    assert np.allclose(effective_state(alg, canon, 0).amplitudes, np.eye(16)[0])
    for t in (1, 2):
        eff = effective_state(alg, canon, t)
        assert not eff.normalized and eff.norm() <= 1 + 1e-12
        # the query register is pinned to phi_end, so the Q|W cut has rank one
        sv = schmidt_coefficients(eff.amplitudes, 8)
        assert sv[1] <= 1e-12
        end = canon.phi_end(alg.directions[t - 1])
        w_part = end.conj() @ eff.amplitudes.reshape(8, 2)
        assert np.allclose(np.kron(end, w_part), eff.amplitudes)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), T=st.integers(1, 3), rank=st.integers(1, 3))
def test_adversarial_oracles_properties(seed, T, rank):
    alg, canon, pi = _setup(3, 1, T, seed, rank)
    rep = adversarial_oracles(alg, canon, pi)
    assert rep.residual <= 1e-9
    assert rep.max_unitarity_error <= 1e-9
    assert rep.max_pin_error <= 1e-10
    assert max(rep.orth_residuals) <= 1e-10
    assert rep.kill_residual <= 1e-9
    # replaying the algorithm with the synthesized oracles gives the same weight
    final = run_algorithm(alg, rep.oracles)[-1]
    assert np.linalg.norm(pi.basis.conj().T @ final) ** 2 == pytest.approx(rep.lhs, abs=1e-12)


def test_adversary_preconditions():
    alg, canon, pi = _setup(2, 1, 1, 0)
    with pytest.raises(PreconditionError):
        adversarial_oracles(alg, canon, pi)
    alg, canon, _ = _setup(3, 1, 1, 0)
    with pytest.raises(PreconditionError):
        adversarial_oracles(alg, canon, random_projector(16, 5, 0))


def test_low_depth_overflow_and_oracle_pin():
    alg = random_query_algorithm(4, 1, 3, 0)
    with pytest.raises(RegisterOverflow):
        build_low_depth(alg, np.eye(16))
    alg = random_query_algorithm(2, 1, 1, 0)
    with pytest.raises(PreconditionError):
        build_low_depth(alg, np.eye(4), CanonicalAction(random_state(4, 1)))


def test_low_depth_backward_queries_use_previous_register():
    alg = random_query_algorithm(2, 1, 2, 3, directions=(-1, -1))
    rep = build_low_depth(alg, np.linalg.qr(np.random.default_rng(0).normal(size=(4, 4)))[0])
    odag = [op.wires for op in rep.ops if op.label == "Odag"]
    assert odag == [(1, 2), (3, 4)]  # registers Q_0 and Q_1
    assert rep.residual <= 1e-9 and rep.query_rounds == 1


def test_bit_oracle():
    o = bit_oracle("101").matrix  # padded to 1010
    assert o.shape == (8, 8)
    assert np.allclose(o @ o, np.eye(8))
    # |i=0>|0> -> |0>|1>, |i=1>|0> -> |1>|0>, |i=2>|1> -> |2>|0>
    assert o[1, 0] == 1 and o[2, 2] == 1 and o[4, 5] == 1
    with pytest.raises(ValidationError):
        bit_oracle("102")


@pytest.mark.parametrize("x", ["1", "10", "0110", "11101000"])
def test_bernoulli_from_bits(x):
    o = bernoulli_from_bits(x)
    p = x.count("1") / len(x)
    assert oracle_marginal(o) == pytest.approx([1 - p, p], abs=1e-12)
    assert o.rv.mean == pytest.approx(p)
    assert unitarity_error(o.unitary.matrix) < 1e-12


def test_bernoulli_from_bits_needs_power_of_two():
    with pytest.raises(ValidationError):
        bernoulli_from_bits("101")


def test_counting_blocks_floor():
    assert counting_blocks(8, 4, 1) == 1  # the formula floors to 0
    assert counting_blocks(100, 4, 1) == 6


def test_identity_algorithm_makes_no_progress():
    n_Q = 4
    alg = QueryAlgorithm(n_Q, 0, tuple(np.eye(16) for _ in range(5)), (1,) * 4)
    tr = hard_counting_sequence(8, 4, 2, alg, T=2)
    assert tr.block_totals() == pytest.approx([0, 0])
    assert tr.final_overlap == pytest.approx(1.0)


def test_counting_preconditions():
    alg = grover_counting_algorithm(8, 1)
    with pytest.raises(PreconditionError):
        hard_counting_sequence(8, 4, 1, alg, T=2)
    with pytest.raises(PreconditionError):
        hard_counting_sequence(8, 4, 3, grover_counting_algorithm(8, 9))
    with pytest.raises(PreconditionError):
        hard_counting_sequence(8, 8, 1, alg)


def test_progress_trace_csv():
    tr = hard_counting_sequence(16, 2, 2, grover_counting_algorithm(16, 4), T=2)
    rows = list(csv.DictReader(io.StringIO(tr.to_csv())))
    assert len(rows) == tr.T * (tr.m + 1)
    assert list(rows[0]) == ["block", "l", "S_l", "bound", "chosen_i0"]
    first = complex(rows[0]["S_l"])
    assert first == pytest.approx(tr.n - tr.k)  # blocks start from identical states
    assert [int(r["bound"]) for r in rows[:3]] == [0, 4, 12]


def test_recovery_deterministic_estimator_is_exact():
    u = make_estimator_unitary([0, 0, 1, 0], 3, 2, 0)
    rep = recover_query_register(u, 2, 0.25, 0.5)
    assert rep.contract_ok and rep.i_star == 2
    assert rep.distance < 1e-7 and rep.recovered_weight == pytest.approx(1.0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_recovery_weight_floor_when_contract_holds(seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(4))
    # put at least 2/3 on indices 1 and 2 (mu between grid points 1 and 2)
    p[1:3] = p[1:3] / p[1:3].sum() * rng.uniform(2 / 3, 1)
    p[[0, 3]] = p[[0, 3]] / p[[0, 3]].sum() * (1 - p[1:3].sum())
    rep = recover_query_register(make_estimator_unitary(p, 2, 2, seed), 2, 0.25, 0.3)
    assert rep.contract_ok
    assert rep.raw_weight >= 2 / 9 - 1e-12
    assert rep.distance <= 0.01
    # the recovered state's flanking weight is the normalized squared weight
    assert rep.recovered_weight == pytest.approx(rep.raw_weight / np.sum(p**2), abs=2e-2)


def test_recovery_flags_contract_violation():
    rep = recover_query_register(make_estimator_unitary([0.45, 0.05, 0.05, 0.45], 2, 2, 1),
                                 2, 0.25, 0.3)
    assert not rep.contract_ok
    assert math.isfinite(rep.distance)


def test_effective_state_identity_chain():
    alg = QueryAlgorithm(2, 1, (np.eye(8), np.eye(8)), (1,))
    eff = effective_state(alg, CanonicalAction(np.eye(4)[0]), 1)
    assert np.allclose(eff.amplitudes, np.eye(8)[0]) and eff.norm() == pytest.approx(1.0)


def test_effective_state_is_oracle_independent():
    # two different completions of the same canonical column give the same post-selection
    alg = random_query_algorithm(2, 1, 2, 11, directions=(1, -1))
    psi_x = random_state(4, 12)
    reps = [build_low_depth(alg, complete_to_unitary(psi_x, s).matrix) for s in (0, 1)]
    assert np.allclose(reps[0].postselected, reps[1].postselected, atol=1e-12)
    assert reps[0].queries == 2 and reps[0].query_rounds == 2


def test_low_depth_zero_queries():
    alg = random_query_algorithm(2, 1, 0, 5)
    rep = build_low_depth(alg, complete_to_unitary(random_state(4, 0), 0))
    assert rep.queries == 0 and rep.residual <= 1e-12


def test_adversary_with_no_residual_component():
    canon = CanonicalAction(random_state(8, 3))
    alg = QueryAlgorithm(3, 1, (np.eye(16), np.eye(16)), (1,))
    rep = adversarial_oracles(alg, canon, random_projector(16, 1, 4))
    assert rep.residual <= 1e-12 and rep.kill_residual <= 1e-12


def test_bit_oracle_constant_strings():
    assert np.allclose(bit_oracle("0000").matrix, np.eye(8))
    x_target = np.kron(np.eye(4), [[0, 1], [1, 0]])
    assert np.allclose(bit_oracle("1111").matrix, x_target)


@pytest.mark.parametrize("x,p", [("0000", 0.0), ("1111", 1.0), ("0011", 0.5)])
def test_bernoulli_from_bits_examples(x, p):
    assert oracle_marginal(bernoulli_from_bits(x))[1] == pytest.approx(p, abs=1e-12)


def test_trivial_algorithm_small_counting_instance():
    alg = QueryAlgorithm(3, 0, tuple(np.eye(8) for _ in range(2)), (1,))
    tr = hard_counting_sequence(4, 2, 1, alg)
    assert tr.S_values[0] == pytest.approx([2, 2])
    assert tr.final_overlap == pytest.approx(1.0)


def test_grover_distinguisher_overlap_floor():
    n, k, m = 8, 4, 1
    tr = hard_counting_sequence(n, k, m, grover_counting_algorithm(n, 1))
    assert tr.final_overlap >= 1 - 2 * m * (m + 1) * tr.T / (n - k)


def test_recovery_two_outcome_estimator():
    rep = recover_query_register(make_estimator_unitary([0, 2 / 3, 1 / 3, 0], 3, 2, 2), 2, 0.25, 0.3)
    assert rep.contract_ok
    assert rep.raw_weight == pytest.approx(5 / 9)
    assert rep.recovered_weight >= 2 / 9
