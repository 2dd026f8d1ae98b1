import numpy as np
import pytest

from ttcshield.prediction import (
    CAV_INPUT_DIM,
    HDV_INPUT_DIM,
    HistoryWindow,
    Predictor,
    ReplayMemory,
    StateRow,
    TransitionCAV,
    TransitionHDV,
    backprop_gradients,
    featurize_cav,
    featurize_hdv,
    fit_linear_closed_form,
    fit_linear_matrices,
    init_predictor,
    load_checkpoint,
    memory_matrices,
    mse_loss,
    predict,
    save_checkpoint,
    train_step,
)
from ttcshield.vehicle import ControlCommand

DT = 0.05


def constant_velocity_rows(x0=0.0, y0=0.0, vx=10.0, vy=0.0):
    rows = np.zeros((5, 6))
    for i in range(5):
        t = (i - 4) * DT
        rows[i] = [x0 + vx * t, y0 + vy * t, vx, vy, 0.0, 0.0]
    return rows


def zero_controls():
    return np.zeros((5, 3))


# --- featurization -----------------------------------------------------------


def test_featurize_hdv_stationary_vehicle_is_all_relative_zero():
    rows = np.zeros((5, 6))
    rows[:, 0] = 123.4
    rows[:, 1] = -56.7
    feats = featurize_hdv(HistoryWindow(rows))
    assert feats.shape == (HDV_INPUT_DIM,)
    assert np.all(feats == 0.0)


def test_featurize_hdv_constant_velocity_backtrack():
    # 10 m/s along +x at dt = 0.05: relative x entries -2.0, -1.5, -1.0, -0.5, 0
    feats = featurize_hdv(HistoryWindow(constant_velocity_rows(x0=500.0)))
    rel_x = feats[0::6]
    assert rel_x == pytest.approx([-2.0, -1.5, -1.0, -0.5, 0.0], abs=1e-12)
    assert np.all(feats[2::6] == 10.0)   # vx column
    assert np.all(feats[1::6] == 0.0)    # relative y


def test_featurize_hdv_translation_invariance():
    rng = np.random.default_rng(3)
    rows = rng.normal(size=(5, 6))
    shifted = rows.copy()
    shifted[:, 0] += 987.0
    shifted[:, 1] -= 654.0
    assert np.allclose(featurize_hdv(HistoryWindow(rows)), featurize_hdv(HistoryWindow(shifted)))


def test_featurize_cav_zero_everything():
    window = HistoryWindow(np.zeros((5, 6)), zero_controls())
    feats = featurize_cav(window, ControlCommand())
    assert feats.shape == (CAV_INPUT_DIM,)
    assert np.all(feats == 0.0)


def test_featurize_cav_candidate_occupies_last_three():
    window = HistoryWindow(constant_velocity_rows(), zero_controls())
    a = featurize_cav(window, ControlCommand(throttle=0.3, steering=0.1))
    b = featurize_cav(window, ControlCommand(brake=0.5, steering=-0.2))
    assert np.array_equal(a[:45], b[:45])
    assert not np.array_equal(a[45:], b[45:])
    assert a[45:] == pytest.approx([0.3, 0.1, 0.0])
    assert b[45:] == pytest.approx([0.0, -0.2, 0.5])


def test_featurize_cav_throttle_ramp_layout():
    # throttle ramps 0.0 -> 0.8 in 0.2 steps; those values must land at
    # positions 30, 33, 36, 39, 42 of the flattened vector
    controls = zero_controls()
    controls[:, 0] = [0.0, 0.2, 0.4, 0.6, 0.8]
    window = HistoryWindow(constant_velocity_rows(), controls)
    feats = featurize_cav(window, ControlCommand())
    assert feats[[30, 33, 36, 39, 42]] == pytest.approx([0.0, 0.2, 0.4, 0.6, 0.8])


def test_window_validation():
    with pytest.raises(ValueError):
        HistoryWindow(np.zeros((4, 6)))
    with pytest.raises(ValueError):
        HistoryWindow(np.full((5, 6), np.nan))
    with pytest.raises(ValueError):
        featurize_cav(HistoryWindow(np.zeros((5, 6))), ControlCommand())


# --- predict -----------------------------------------------------------------


def make_linear(w, b, input_dim):
    return Predictor(
        kind="linear",
        input_dim=input_dim,
        weights=(w,),
        biases=(b,),
        mu=np.zeros(input_dim),
        scale=np.ones(input_dim),
        trained=True,
    )


def test_predict_with_analytic_constant_velocity_map():
    # last row sits at indices 24..29; the exact extrapolation map reads its
    # velocity: dx = vx * dt, dy = vy * dt, next velocity unchanged
    w = np.zeros((6, HDV_INPUT_DIM))
    w[0, 26] = DT
    w[1, 27] = DT
    w[2, 26] = 1.0
    w[3, 27] = 1.0
    model = make_linear(w, np.zeros(6), HDV_INPUT_DIM)
    rows = constant_velocity_rows(x0=77.0, vx=12.0, vy=-3.0)
    delta = predict(model, featurize_hdv(HistoryWindow(rows)))
    assert delta.x == pytest.approx(12.0 * DT, abs=1e-12)
    assert delta.y == pytest.approx(-3.0 * DT, abs=1e-12)
    assert delta.vx == pytest.approx(12.0)
    assert delta.vy == pytest.approx(-3.0)
    assert delta.ax == 0.0 and delta.ay == 0.0
    # absolute reconstruction
    nxt = model.predict_row(rows)
    assert nxt[0] == pytest.approx(rows[-1, 0] + 12.0 * DT)
    assert nxt[1] == pytest.approx(rows[-1, 1] - 3.0 * DT)


def test_predict_zero_model_and_zero_output_layer():
    zero = make_linear(np.zeros((6, HDV_INPUT_DIM)), np.zeros(6), HDV_INPUT_DIM)
    out = predict(zero, np.ones(HDV_INPUT_DIM))
    assert out.as_array() == pytest.approx(np.zeros(6))

    rng = np.random.default_rng(0)
    mlp = init_predictor("mlp3", HDV_INPUT_DIM, rng)
    silenced = Predictor(
        kind="mlp3",
        input_dim=mlp.input_dim,
        weights=(mlp.weights[0], mlp.weights[1], np.zeros_like(mlp.weights[2])),
        biases=(mlp.biases[0], mlp.biases[1], np.zeros(6)),
        mu=mlp.mu,
        scale=mlp.scale,
    )
    out = predict(silenced, rng.normal(size=HDV_INPUT_DIM))
    assert out.as_array() == pytest.approx(np.zeros(6))


def test_predict_translation_invariance_end_to_end():
    rng = np.random.default_rng(9)
    model = init_predictor("mlp3", HDV_INPUT_DIM, rng)
    rows = rng.normal(size=(5, 6))
    shifted = rows.copy()
    shifted[:, 0] += 321.0
    shifted[:, 1] += 42.0
    a = predict(model, featurize_hdv(HistoryWindow(rows)))
    b = predict(model, featurize_hdv(HistoryWindow(shifted)))
    # identical up to float rounding of the position subtraction
    assert np.allclose(a.as_array(), b.as_array(), atol=1e-9)


def test_predict_rejects_dimension_mismatch():
    model = make_linear(np.zeros((6, HDV_INPUT_DIM)), np.zeros(6), HDV_INPUT_DIM)
    with pytest.raises(ValueError):
        predict(model, np.zeros(CAV_INPUT_DIM))


# --- loss ----------------------------------------------------------------------


def test_mse_loss_cases():
    a = np.zeros((1, 6))
    assert mse_loss(a, a) == 0.0
    b = a.copy()
    b[0, 2] = 1.0
    assert mse_loss(b, a) == 1.0
    # two pairs with squared-norm errors 2.0 and 4.0 average to 3.0
    pred = np.zeros((2, 6))
    true = np.zeros((2, 6))
    pred[0, :2] = 1.0          # squared error 2.0
    pred[1, 0] = 2.0           # squared error 4.0
    assert mse_loss(pred, true) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        mse_loss(np.zeros((0, 6)), np.zeros((0, 6)))
    with pytest.raises(ValueError):
        mse_loss(np.zeros((2, 6)), np.zeros((3, 6)))


def test_mse_loss_accepts_state_rows():
    rows = [StateRow(1, 0, 0, 0, 0, 0)]
    truth = [StateRow(0, 0, 0, 0, 0, 0)]
    assert mse_loss(rows, truth) == 1.0


# --- closed-form fit -------------------------------------------------------------


def planted_dataset(rng, n=400, d=HDV_INPUT_DIM):
    w_true = rng.normal(size=(6, d))
    b_true = rng.normal(size=6)
    x = rng.normal(size=(n, d))
    y = x @ w_true.T + b_true
    return x, y, w_true, b_true


def test_fit_recovers_planted_affine_map():
    rng = np.random.default_rng(21)
    x, y, w_true, b_true = planted_dataset(rng)
    model = fit_linear_matrices(x, y, regularization=0.0)
    pred = model.forward(x)
    assert np.max(np.abs(pred - y)) < 1e-8 * max(1.0, np.max(np.abs(y)))
    # recovered map agrees with the generator on fresh inputs
    x2 = rng.normal(size=(50, x.shape[1]))
    assert np.allclose(model.forward(x2), x2 @ w_true.T + b_true, rtol=1e-8, atol=1e-8)


def test_fit_ridge_limit_predicts_target_mean():
    rng = np.random.default_rng(22)
    x = rng.normal(size=(300, 10))
    y = rng.normal(size=(300, 6))
    model = fit_linear_matrices(x, y, regularization=1e12)
    assert np.max(np.abs(model.weights[0])) < 1e-9
    assert model.biases[0] == pytest.approx(y.mean(axis=0))


def test_fit_invariant_to_sample_duplication():
    rng = np.random.default_rng(23)
    x = rng.normal(size=(100, 8))
    y = rng.normal(size=(100, 6))
    once = fit_linear_matrices(x, y, 1e-6)
    twice = fit_linear_matrices(np.vstack([x, x]), np.vstack([y, y]), 1e-6)
    assert np.allclose(once.weights[0], twice.weights[0])
    assert np.allclose(once.biases[0], twice.biases[0])


def test_fit_errors():
    rng = np.random.default_rng(24)
    with pytest.raises(ValueError):
        fit_linear_matrices(rng.normal(size=(5, 10)), rng.normal(size=(5, 6)))
    # a rank-deficient feature matrix is singular without regularization
    x = np.zeros((50, 4))
    x[:, 0] = rng.normal(size=50)
    x[:, 1] = 2.0 * x[:, 0]
    x[:, 2] = rng.normal(size=50)
    x[:, 3] = x[:, 2] - x[:, 0]
    y = rng.normal(size=(50, 6))
    with pytest.raises(ValueError):
        fit_linear_matrices(x, y, regularization=0.0)


def test_fit_closed_form_beats_gradient_descent():
    rng = np.random.default_rng(25)
    x = rng.normal(size=(300, 12))
    w = rng.normal(size=(6, 12))
    y = x @ w.T + rng.normal(size=(300, 6)) * 0.3
    fitted = fit_linear_closed_form_like(x, y)
    gd = init_predictor("linear", 12, rng)
    from dataclasses import replace

    from ttcshield.prediction import normalization_from

    mu, scale = normalization_from(x)
    gd = replace(gd, mu=mu, scale=scale)
    for _ in range(10_000):
        gd, _ = train_step(gd, (x, y), 0.05)
    assert mse_loss(fitted.forward(x), y) <= mse_loss(gd.forward(x), y) + 1e-9


def fit_linear_closed_form_like(x, y):
    return fit_linear_matrices(x, y, 1e-6)


def test_fit_from_memory_object():
    rng = np.random.default_rng(26)
    memory = ReplayMemory(1000)
    for _ in range(200):
        rows = constant_velocity_rows(
            x0=rng.uniform(-50, 50), y0=rng.uniform(-5, 5),
            vx=rng.uniform(5, 25), vy=rng.uniform(-2, 2),
        )
        window = HistoryWindow(rows)
        nxt = StateRow(
            rows[-1, 0] + rows[-1, 2] * DT,
            rows[-1, 1] + rows[-1, 3] * DT,
            rows[-1, 2], rows[-1, 3], 0.0, 0.0,
        )
        memory.push(TransitionHDV(window, nxt))
    model = fit_linear_closed_form(memory, 1e-9)
    x, y = memory_matrices(memory)
    assert mse_loss(model.forward(x), y) < 1e-12


# --- gradient training --------------------------------------------------------


def test_train_step_zero_lr_reports_loss_only():
    rng = np.random.default_rng(31)
    model = init_predictor("mlp3", 10, rng, hidden=(8, 8))
    x = rng.normal(size=(16, 10))
    y = rng.normal(size=(16, 6))
    before = mse_loss(model.forward(x), y)
    stepped, loss = train_step(model, (x, y), 0.0)
    assert loss == pytest.approx(before)
    for w0, w1 in zip(model.weights, stepped.weights):
        assert np.array_equal(w0, w1)


def test_train_step_descends_on_convex_quadratic():
    rng = np.random.default_rng(32)
    model = init_predictor("linear", 6, rng)
    x = rng.normal(size=(1, 6))
    y = rng.normal(size=(1, 6))
    prev = mse_loss(model.forward(x), y)
    for _ in range(5):
        model, loss = train_step(model, (x, y), 0.01)
        now = mse_loss(model.forward(x), y)
        assert now < loss
        assert loss <= prev + 1e-12
        prev = now


def test_backprop_matches_central_finite_differences():
    rng = np.random.default_rng(33)
    model = init_predictor("mlp3", 7, rng, hidden=(5, 4))
    x = rng.normal(size=(9, 7))
    y = rng.normal(size=(9, 6))
    _, grads_w, grads_b = backprop_gradients(model, x, y)
    eps = 1e-5

    def loss_at(weights, biases):
        probe = Predictor(
            kind="mlp3", input_dim=7, weights=weights, biases=biases,
            mu=model.mu, scale=model.scale,
        )
        return mse_loss(probe.forward(x), y)

    worst = 0.0
    for li in range(3):
        for grad, params, is_weight in ((grads_w[li], model.weights, True), (grads_b[li], model.biases, False)):
            flat = params[li].ravel()
            for k in range(flat.size):
                bumped_plus = [p.copy() for p in params]
                bumped_minus = [p.copy() for p in params]
                bumped_plus[li].ravel()[k] += eps
                bumped_minus[li].ravel()[k] -= eps
                if is_weight:
                    lp = loss_at(tuple(bumped_plus), model.biases)
                    lm = loss_at(tuple(bumped_minus), model.biases)
                else:
                    lp = loss_at(model.weights, tuple(bumped_plus))
                    lm = loss_at(model.weights, tuple(bumped_minus))
                fd = (lp - lm) / (2 * eps)
                bp = grad.ravel()[k]
                rel = abs(fd - bp) / max(abs(fd), abs(bp), 1e-8)
                worst = max(worst, rel)
    assert worst < 1e-4


def test_train_step_validates_inputs():
    rng = np.random.default_rng(34)
    model = init_predictor("linear", 6, rng)
    with pytest.raises(ValueError):
        train_step(model, (np.zeros((2, 7)), np.zeros((2, 6))), 0.1)
    with pytest.raises(ValueError):
        train_step(model, (np.zeros((0, 6)), np.zeros((0, 6))), 0.1)


# --- replay memory ---------------------------------------------------------------


def hdv_transition(tag: float) -> TransitionHDV:
    rows = np.full((5, 6), tag)
    return TransitionHDV(HistoryWindow(rows), StateRow(tag, 0, 0, 0, 0, 0))


def test_memory_fifo_eviction():
    mem = ReplayMemory(2)
    for tag in (1.0, 2.0, 3.0):
        mem.push(hdv_transition(tag))
    kept = [t.next.x for t in mem]
    assert kept == [2.0, 3.0]


def test_memory_sampling_is_deterministic_and_exhaustive():
    mem = ReplayMemory(10)
    for tag in range(6):
        mem.push(hdv_transition(float(tag)))
    a = np.random.default_rng(5)
    b = np.random.default_rng(5)
    sample_a = [t.next.x for t in mem.sample(4, a)]
    sample_b = [t.next.x for t in mem.sample(4, b)]
    assert sample_a == sample_b
    full = [t.next.x for t in mem.sample(6, np.random.default_rng(0))]
    assert sorted(full) == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
    # without replacement within one batch
    assert len(set(full)) == 6
    with pytest.raises(ValueError):
        mem.sample(7, np.random.default_rng(0))


# --- checkpoints ------------------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(40)
    model = init_predictor("mlp3", CAV_INPUT_DIM, rng)
    from dataclasses import replace

    model = replace(
        model,
        mu=rng.normal(size=CAV_INPUT_DIM),
        scale=np.abs(rng.normal(size=CAV_INPUT_DIM)) + 0.1,
        trained=True,
    )
    path = tmp_path / "model.json"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.kind == model.kind
    assert loaded.trained == model.trained
    assert np.array_equal(loaded.mu, model.mu)
    assert np.array_equal(loaded.scale, model.scale)
    for a, b in zip(loaded.weights, model.weights):
        assert np.array_equal(a, b)
    for a, b in zip(loaded.biases, model.biases):
        assert np.array_equal(a, b)
    # and the file itself is reproducible
    path2 = tmp_path / "model2.json"
    save_checkpoint(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_unknown_format(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "something-else"}')
    with pytest.raises(ValueError):
        load_checkpoint(path)


# --- transition plumbing -----------------------------------------------------------


def test_memory_matrices_builds_delta_targets():
    rows = constant_velocity_rows(x0=10.0, vx=4.0)
    window = HistoryWindow(rows)
    nxt = StateRow(rows[-1, 0] + 0.2, rows[-1, 1] - 0.1, 4.0, 0.0, 0.0, 0.0)
    mem = ReplayMemory(4)
    mem.push(TransitionHDV(window, nxt))
    x, y = memory_matrices(mem)
    assert x.shape == (1, HDV_INPUT_DIM)
    assert y[0, 0] == pytest.approx(0.2)
    assert y[0, 1] == pytest.approx(-0.1)
    assert y[0, 2] == pytest.approx(4.0)


def test_memory_matrices_cav_includes_applied_command():
    rows = constant_velocity_rows()
    window = HistoryWindow(rows, zero_controls())
    cmd = ControlCommand(throttle=0.8, steering=-0.1)
    mem = ReplayMemory(4)
    mem.push(TransitionCAV(window, cmd, StateRow(*rows[-1])))
    x, _ = memory_matrices(mem)
    assert x.shape == (1, CAV_INPUT_DIM)
    assert x[0, 45:] == pytest.approx([0.8, -0.1, 0.0])
