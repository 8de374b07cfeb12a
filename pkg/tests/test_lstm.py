import numpy as np
import pytest

from intnet import autodiff as ad
from intnet.autodiff import DimensionError, Parameter, RngState, Tensor, grad_check
from intnet.lstm import LstmCell, lstm_step, reversal_index, reverse_padded, run_lstm
from intnet.tagger import bilstm_forward

import oracles


def _random_cell(seed, D=3, H=4, scale=0.5):
    cell = LstmCell("cell", D, H, RngState(seed))
    gen = np.random.default_rng(seed)
    for p in cell.parameters():
        p.values[...] = gen.standard_normal(p.shape) * scale
    return cell


def _weights(cell):
    return {n.split(".", 1)[1]: p.values.tolist() for n, p in cell.named_parameters()}


def test_parameter_shapes_and_init():
    cell = LstmCell("fwd", 5, 3, RngState(0))
    shapes = {n: p.shape for n, p in cell.named_parameters()}
    assert shapes["fwd.W_zi"] == (3, 5) and shapes["fwd.W_hc"] == (3, 3)
    assert shapes["fwd.W_ci"] == shapes["fwd.W_cf"] == shapes["fwd.W_co"] == (3, 3)
    assert "fwd.W_cc" not in shapes
    assert all(np.all(p.values == 0) for n, p in cell.named_parameters() if ".b_" in n)
    bound = np.sqrt(6 / (3 + 5))
    assert np.all(np.abs(cell.W_zi.values) <= bound)


def test_step_matches_reference():
    cell = _random_cell(0)
    gen = np.random.default_rng(1)
    z, h, c = gen.standard_normal(3), gen.standard_normal(4), gen.standard_normal(4)
    h1, c1 = lstm_step(Tensor(z), Tensor(h), Tensor(c), cell)
    rh, rc = oracles.lstm_step_reference(z.tolist(), h.tolist(), c.tolist(), _weights(cell))
    np.testing.assert_allclose(h1.values, rh, atol=1e-14)
    np.testing.assert_allclose(c1.values, rc, atol=1e-14)


def test_zero_weights_fixed_point():
    cell = LstmCell("cell", 3, 2, RngState(0))
    for p in cell.parameters():
        p.values[...] = 0.0
    h, c = lstm_step(Tensor(np.ones(3)), Tensor(np.zeros(2)), Tensor(np.zeros(2)), cell)
    assert h.values.tolist() == [0.0, 0.0] and c.values.tolist() == [0.0, 0.0]


def test_saturated_gates_carry_the_cell():
    cell = LstmCell("cell", 2, 2, RngState(0))
    for p in cell.parameters():
        p.values[...] = 0.0
    cell.b_f.values[...] = 1e3
    cell.b_i.values[...] = -1e3
    c_prev = np.array([0.3, -1.7])
    _, c = lstm_step(Tensor(np.ones(2)), Tensor(np.zeros(2)), Tensor(c_prev), cell)
    assert c.values.tolist() == c_prev.tolist()


def test_dimension_errors():
    cell = LstmCell("cell", 3, 2, RngState(0))
    with pytest.raises(DimensionError):
        lstm_step(Tensor(np.ones(4)), Tensor(np.zeros(2)), Tensor(np.zeros(2)), cell)
    with pytest.raises(DimensionError):
        lstm_step(Tensor(np.ones(3)), Tensor(np.zeros(3)), Tensor(np.zeros(2)), cell)


def test_step_gradient():
    # moderate scales keep the gates out of saturation, where gradients of ~1e-6
    # make the relative error measure central-difference roundoff instead
    cell = _random_cell(2, scale=0.3)
    gen = np.random.default_rng(3)
    z = Parameter(gen.standard_normal(3), "z")
    h0, c0 = Parameter(gen.standard_normal(4) * 0.5, "h0"), Parameter(gen.standard_normal(4) * 0.5, "c0")
    r = gen.standard_normal(4)
    f = lambda: ad.sum_all(ad.mul_const(lstm_step(z, h0, c0, cell)[0], r))
    assert grad_check(f, [z, h0, c0] + cell.parameters()) < 1e-6


def test_reverse_padded_is_row_involution():
    x = Tensor(np.arange(12.0).reshape(2, 6, 1))
    lengths = [4, 6]
    r = reverse_padded(x, lengths).values[..., 0]
    assert r[0].tolist() == [3, 2, 1, 0, 4, 5]
    assert r[1].tolist() == [11, 10, 9, 8, 7, 6]
    assert np.array_equal(reverse_padded(reverse_padded(x, lengths), lengths).values, x.values)
    assert reversal_index([1], 3).tolist() == [[0, 1, 2]]


def test_run_lstm_matches_repeated_steps():
    cell = _random_cell(4)
    x = np.random.default_rng(5).standard_normal((2, 5, 3))
    seq = run_lstm(cell, Tensor(x)).values
    h = Tensor(np.zeros(4))
    c = Tensor(np.zeros(4))
    for t in range(5):
        h, c = lstm_step(Tensor(x[1, t]), h, c, cell)
        np.testing.assert_allclose(seq[1, t], h.values, atol=1e-14)


def test_bilstm_length_one_and_zero_weights():
    fwd, bwd = _random_cell(6), _random_cell(7)
    x = np.random.default_rng(8).standard_normal((1, 3))
    out = bilstm_forward(Tensor(x), fwd, bwd).values
    hf, _ = lstm_step(Tensor(x[0]), Tensor(np.zeros(4)), Tensor(np.zeros(4)), fwd)
    hb, _ = lstm_step(Tensor(x[0]), Tensor(np.zeros(4)), Tensor(np.zeros(4)), bwd)
    np.testing.assert_allclose(out[0], np.concatenate([hf.values, hb.values]), atol=1e-14)
    zero = LstmCell("z", 3, 4, RngState(0))
    for p in zero.parameters():
        p.values[...] = 0.0
    assert np.all(bilstm_forward(Tensor(x), zero, zero).values == 0)


def test_bilstm_reversal_symmetry():
    fwd, bwd = _random_cell(9), _random_cell(10)
    x = np.random.default_rng(11).standard_normal((5, 3))
    out = bilstm_forward(Tensor(x), fwd, bwd).values
    swapped = bilstm_forward(Tensor(x[::-1].copy()), bwd, fwd).values
    np.testing.assert_allclose(swapped[:, :4], out[::-1, 4:], atol=1e-13)


def test_bilstm_padding_does_not_leak():
    fwd, bwd = _random_cell(12), _random_cell(13)
    gen = np.random.default_rng(14)
    x = gen.standard_normal((2, 6, 3))
    short = bilstm_forward(Tensor(x[0, :4]), fwd, bwd).values
    noisy = x.copy()
    noisy[0, 4:] = 100.0
    batched = bilstm_forward(Tensor(noisy), fwd, bwd, lengths=[4, 6]).values
    np.testing.assert_allclose(batched[0, :4], short, atol=1e-13)


def test_bilstm_empty_sentence_is_an_error():
    fwd, bwd = _random_cell(0), _random_cell(1)
    with pytest.raises(ValueError):
        bilstm_forward(Tensor(np.zeros((1, 0, 3))), fwd, bwd)
