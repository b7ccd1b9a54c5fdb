"""Forward/backward correctness, training behavior, generation, checkpoints."""

import numpy as np
import pytest

from privgrid import (
    ConsumptionMatrix,
    GridSpec,
    ModelConfig,
    TrainingSample,
    forward,
    generate_pattern_matrix,
    gradient_check,
    load_checkpoint,
    save_checkpoint,
    train,
)
from privgrid.rnn import _backward_batch, _forward_batch, init_params, mse_loss


def straight_line_forward(p, window):
    """Independent re-derivation of the recurrence: explicit embedding, no
    batching, no algebraic shortcuts.  Oracle for the production path."""
    h_dim = p.u_z.shape[0]
    sigmoid = lambda v: 1.0 / (1.0 + np.exp(-v))
    h = np.zeros(h_dim)
    hidden = []
    for x_t in window:
        e = x_t * p.w_embed + p.b_embed
        z = sigmoid(e @ p.w_z + h @ p.u_z + p.b_z)
        r = sigmoid(e @ p.w_r + h @ p.u_r + p.b_r)
        g = np.tanh(e @ p.w_h + (r * h) @ p.u_h + p.b_h)
        h = z * h + (1.0 - z) * g
        hidden.append(h)
    hidden = np.stack(hidden)
    q = hidden[-1] @ p.w_query
    scores = np.array([q @ (h_t @ p.w_key) for h_t in hidden]) / np.sqrt(h_dim)
    weights = np.exp(scores - scores.max())
    weights = weights / weights.sum()
    context = (weights[:, None] * hidden).sum(axis=0)
    return float(context @ p.w_out + p.b_out)


def randomized_params(config, seed, spread=0.4):
    params = init_params(config)
    rng = np.random.default_rng(seed)
    for arr in params.arrays():
        arr += rng.normal(0.0, spread, size=arr.shape)
    return params


def test_zero_weights_predict_output_bias():
    config = ModelConfig(window=6, embed_dim=8, hidden_dim=4)
    params = init_params(config)
    for arr in params.arrays():
        arr *= 0.0
    params.b_out += -1.25
    assert forward(params, np.linspace(0, 1, 6)) == pytest.approx(-1.25)


def test_forward_is_deterministic():
    config = ModelConfig(window=6, embed_dim=16, hidden_dim=8, seed=3)
    params = init_params(config)
    window = np.linspace(-1, 1, 6)
    assert forward(params, window) == forward(params, window)


def test_forward_matches_straight_line_reimplementation():
    rng = np.random.default_rng(11)
    for seed in range(5):
        config = ModelConfig(window=6, embed_dim=10, hidden_dim=7, seed=seed)
        params = randomized_params(config, seed)
        window = rng.normal(0, 1, size=6)
        assert forward(params, window) == pytest.approx(
            straight_line_forward(params, window), abs=1e-9)


def test_forward_rejects_nonfinite():
    params = init_params(ModelConfig(window=3, embed_dim=4, hidden_dim=3))
    with pytest.raises(ValueError):
        forward(params, [0.0, np.nan, 1.0])


def test_gradient_check_random_small_params():
    rng = np.random.default_rng(5)
    for trial in range(5):
        config = ModelConfig(window=4, embed_dim=5, hidden_dim=4, seed=trial)
        params = randomized_params(config, trial)
        sample = TrainingSample(rng.normal(0, 1, 4), float(rng.normal()))
        assert gradient_check(params, sample) < 1e-4


def test_gradient_check_dead_path_is_zero():
    # zero inputs with zero embedding bias leave the input-side gate weights unused
    config = ModelConfig(window=4, embed_dim=5, hidden_dim=4, seed=9)
    params = randomized_params(config, 9)
    params.b_embed *= 0.0
    sample = TrainingSample(np.zeros(4), 0.3)
    pred, cache = _forward_batch(params, sample.window[None, :], want_cache=True)
    grads = _backward_batch(params, cache, 2.0 * (pred - sample.target))
    assert np.abs(grads.w_z).max() < 1e-12
    assert np.abs(grads.w_r).max() < 1e-12
    assert np.abs(grads.w_h).max() < 1e-12
    # numeric side agrees: perturbing w_z cannot move the loss
    step = 1e-5
    params.w_z[0, 0] += step
    up = (forward(params, sample.window) - sample.target) ** 2
    params.w_z[0, 0] -= 2 * step
    down = (forward(params, sample.window) - sample.target) ** 2
    params.w_z[0, 0] += step
    assert abs(up - down) / (2 * step) < 1e-9


def test_corrupted_gradient_is_detected():
    # sign-flip one analytic gradient entry: the finite-difference
    # comparison must flag it
    config = ModelConfig(window=4, embed_dim=5, hidden_dim=4, seed=2)
    params = randomized_params(config, 2)
    rng = np.random.default_rng(8)
    sample = TrainingSample(rng.normal(0, 1, 4), 0.5)
    pred, cache = _forward_batch(params, sample.window[None, :], want_cache=True)
    grads = _backward_batch(params, cache, 2.0 * (pred - sample.target))
    corrupted = -grads.u_h[0, 0]
    step = 1e-5
    params.u_h[0, 0] += step
    up = (forward(params, sample.window) - sample.target) ** 2
    params.u_h[0, 0] -= 2 * step
    down = (forward(params, sample.window) - sample.target) ** 2
    params.u_h[0, 0] += step
    numeric = (up - down) / (2 * step)
    rel = abs(corrupted - numeric) / max(abs(corrupted), abs(numeric), 1e-8)
    assert rel > 0.1


def constant_samples(c, n=200, ws=6):
    return [TrainingSample(np.full(ws, c), c) for _ in range(n)]


@pytest.mark.parametrize("c", [0.0, 0.5, 1.0])
def test_learns_constant_function(c):
    config = ModelConfig(window=6, embed_dim=16, hidden_dim=8, epochs=20, seed=1)
    params = train(constant_samples(c), config)
    pred = forward(params, np.full(6, c))
    assert abs(pred - c) <= abs(c) * 0.05 + 0.05


def sine_samples(n_points=520, ws=6):
    t = np.arange(n_points)
    series = 0.5 + 0.4 * np.sin(2 * np.pi * t / 24)
    samples = [TrainingSample(series[i : i + ws], series[i + ws])
               for i in range(n_points - ws)]
    return samples[:500], samples[500:]


def test_sine_prediction_heldout_rmse():
    train_set, heldout = sine_samples()
    config = ModelConfig(epochs=20, batch_size=32, window=6, seed=0)
    params = train(train_set, config)
    errors = [forward(params, s.window) - s.target for s in heldout]
    rmse = float(np.sqrt(np.mean(np.square(errors))))
    assert rmse < 0.1


def test_training_is_bit_deterministic():
    train_set, _ = sine_samples(200)
    config = ModelConfig(window=6, embed_dim=12, hidden_dim=6, epochs=3, seed=7)
    a = train(train_set, config)
    b = train(train_set, config)
    for arr_a, arr_b in zip(a.arrays(), b.arrays()):
        np.testing.assert_array_equal(arr_a, arr_b)


def test_training_loss_decreases():
    train_set, _ = sine_samples(300)
    losses = []
    config = ModelConfig(window=6, embed_dim=12, hidden_dim=6, epochs=10, seed=4)
    train(train_set, config, on_epoch=lambda e, l: losses.append(l))
    assert losses[-1] <= losses[0]


def test_train_rejects_empty_and_mismatched():
    with pytest.raises(ValueError):
        train([], ModelConfig())
    with pytest.raises(ValueError):
        train([TrainingSample(np.zeros(4), 0.0)], ModelConfig(window=6))


def _prefix(grid, t_train, value=0.25):
    return ConsumptionMatrix(GridSpec(grid.c_x, grid.c_y, t_train),
                             np.full((grid.c_x, grid.c_y, t_train), value), "sanitized")


def test_generation_constant_model_fills_constant():
    grid = GridSpec(4, 4, 10)
    config = ModelConfig(window=6, embed_dim=8, hidden_dim=4)
    params = init_params(config)
    for arr in params.arrays():
        arr *= 0.0
    params.b_out += 0.5
    pattern = generate_pattern_matrix(params, _prefix(grid, 6), grid, 10, ws=6)
    assert pattern.provenance == "pattern"
    np.testing.assert_allclose(pattern.cells[:, :, 6:], 0.5)
    np.testing.assert_allclose(pattern.cells[:, :, :6], 0.25)


def test_generation_degenerate_horizon_copies_prefix():
    grid = GridSpec(4, 4, 6)
    params = init_params(ModelConfig(window=6, embed_dim=8, hidden_dim=4, seed=2))
    prefix = _prefix(grid, 6, 0.7)
    pattern = generate_pattern_matrix(params, prefix, grid, 6, ws=6)
    np.testing.assert_array_equal(pattern.cells, prefix.cells)


def test_generation_matches_hand_rolled_loop(rng):
    grid = GridSpec(4, 4, 10)
    config = ModelConfig(window=6, embed_dim=8, hidden_dim=4, seed=5)
    params = randomized_params(config, 5, spread=0.2)
    prefix_cells = rng.uniform(0, 1, size=(4, 4, 6))
    prefix = ConsumptionMatrix(GridSpec(4, 4, 6), prefix_cells, "sanitized")
    pattern = generate_pattern_matrix(params, prefix, grid, 10, ws=6)
    for x in range(4):
        for y in range(4):
            series = list(prefix_cells[x, y, :])
            for _ in range(4):
                series.append(min(1.0, max(0.0, forward(params, np.array(series[-6:])))))
            np.testing.assert_allclose(pattern.cells[x, y, :], series, atol=1e-12)


def test_generation_outputs_clamped_to_unit_interval():
    grid = GridSpec(4, 4, 12)
    params = init_params(ModelConfig(window=6, embed_dim=8, hidden_dim=4))
    for arr in params.arrays():
        arr *= 0.0
    params.b_out += 7.0  # model always predicts far above 1
    pattern = generate_pattern_matrix(params, _prefix(grid, 6), grid, 12, ws=6)
    assert pattern.cells.max() <= 1.0
    np.testing.assert_allclose(pattern.cells[:, :, 6:], 1.0)


def test_generation_requires_sanitized_prefix_and_seed_window():
    grid = GridSpec(4, 4, 10)
    params = init_params(ModelConfig(window=6, embed_dim=8, hidden_dim=4))
    raw_prefix = ConsumptionMatrix(GridSpec(4, 4, 6), np.zeros((4, 4, 6)), "raw")
    with pytest.raises(ValueError, match="sanitized"):
        generate_pattern_matrix(params, raw_prefix, grid, 10, ws=6)
    with pytest.raises(ValueError, match="seed window"):
        generate_pattern_matrix(params, _prefix(grid, 4), grid, 10, ws=6)
    with pytest.raises(ValueError, match="horizon"):
        generate_pattern_matrix(params, _prefix(grid, 6), grid, 5, ws=6)


def test_checkpoint_roundtrip(tmp_path):
    config = ModelConfig(window=5, embed_dim=6, hidden_dim=4, epochs=2, seed=13)
    samples = constant_samples(0.4, n=50, ws=5)
    params = train(samples, config)
    path = tmp_path / "model.bin"
    save_checkpoint(params, config, path)
    loaded_params, loaded_config = load_checkpoint(path)
    assert loaded_config == config
    for a, b in zip(params.arrays(), loaded_params.arrays()):
        np.testing.assert_array_equal(a, b)
    window = np.full(5, 0.4)
    assert forward(params, window) == forward(loaded_params, window)


def test_checkpoint_rejects_foreign_files(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_mse_loss_helper():
    params = init_params(ModelConfig(window=3, embed_dim=4, hidden_dim=3))
    for arr in params.arrays():
        arr *= 0.0
    samples = [TrainingSample(np.zeros(3), 1.0), TrainingSample(np.zeros(3), -1.0)]
    assert mse_loss(params, samples) == pytest.approx(1.0)
