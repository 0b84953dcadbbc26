import numpy as np
import pytest

from speedwagon_clickgraph import diff_engine as de
from speedwagon_clickgraph.exceptions import ShapeError

TOLERANCE = 1e-5


@pytest.fixture
def store():
    return de.ParamStore(np.float64, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(11)


class TestGradients:
    def test_matmul_sigmoid(self, store, rng):
        x = de.constant(rng.normal(size=(3, 4)))
        w = store.uniform("w", (4, 2))
        b = store.zeros("b", (2,))

        def function():
            return de.tensor_sum(de.sigmoid(x @ w + b))

        assert de.check_gradients(function, [w, b]) < TOLERANCE

    def test_softmax_weighted_sum(self, store, rng):
        logits = store.normal("logits", (2, 5), std=1.0)
        weights = rng.normal(size=(2, 5))

        def function():
            return de.tensor_sum(de.mul(de.softmax(logits), weights))

        assert de.check_gradients(function, [logits]) < TOLERANCE

    def test_gru_cell(self, store, rng):
        params = store.gru("gru", 3, 4)
        x = store.normal("x", (2, 3), std=1.0)
        hidden = store.normal("h", (2, 4), std=0.5)
        weights = rng.normal(size=(2, 4))

        def function():
            return de.tensor_sum(
                de.mul(de.gru_cell(x, hidden, params), weights)
            )

        tensors = [
            x, hidden, params.input_weights, params.hidden_weights,
            params.bias
        ]
        assert de.check_gradients(function, tensors) < TOLERANCE

    def test_bce_loss_with_mask(self, store, rng):
        logits = store.normal("logits", (2, 3), std=1.0)
        clicks = np.array([[1, 0, 0], [0, 1, 1]])
        mask = np.array([[1, 1, 0], [1, 1, 1]])

        def function():
            return de.bce_loss(de.sigmoid(logits), clicks, mask)

        assert de.check_gradients(function, [logits]) < TOLERANCE

    def test_embedding_lookup_repeats_rows(self, store, rng):
        table = store.normal("table", (5, 3), std=1.0)
        indices = np.array([[0, 2], [2, 4]])
        weights = rng.normal(size=(2, 2, 3))

        def function():
            return de.tensor_sum(
                de.mul(de.embedding_lookup(table, indices), weights)
            )

        assert de.check_gradients(function, [table]) < TOLERANCE

    def test_concat_stack_and_index(self, store, rng):
        a = store.normal("a", (2, 3), std=1.0)
        b = store.normal("b", (2, 2), std=1.0)
        weights = rng.normal(size=(2, 2, 5))

        def function():
            joined = de.concat([a, b], axis=-1)
            stacked = de.stack([joined, de.tanh(joined)], axis=0)
            picked = stacked[:, 1]
            return de.tensor_sum(
                de.mul(de.leaky_relu(stacked), weights)
            ) + de.tensor_sum(picked)

        assert de.check_gradients(function, [a, b]) < TOLERANCE

    def test_exp_log_and_mean(self, store):
        w = store.add("w", [[0.5, 1.5], [2.0, 0.25]])

        def function():
            return de.mean(de.log(de.exp(w) + 1.0), axis=0)[1]

        assert de.check_gradients(function, [w]) < TOLERANCE

    def test_masked_select(self, store):
        w = store.add("w", [[0.5, -1.0], [2.0, 3.0]])
        mask = np.array([[True, False], [False, True]])

        def function():
            return de.tensor_sum(
                de.mul(de.masked_select(w, mask), np.array([2.0, -3.0]))
            )

        assert de.check_gradients(function, [w]) < TOLERANCE


def test_clamp_blocks_gradient_outside_range(store):
    w = store.add("w", [-2.0, 0.5, 2.0])
    de.tensor_sum(de.clamp(w, 0.0, 1.0)).backward()
    np.testing.assert_array_equal(w.grad, [0.0, 1.0, 0.0])


def test_backward_requires_scalar(store):
    w = store.add("w", [1.0, 2.0])
    with pytest.raises(ValueError):
        de.mul(w, 2.0).backward()


@pytest.mark.parametrize(
    "operation",
    [
        lambda: de.matmul(de.constant(np.ones((2, 3))),
                          de.constant(np.ones((2, 3)))),
        lambda: de.add(de.constant(np.ones((2, 3))),
                       de.constant(np.ones((4,)))),
        lambda: de.concat([de.constant(np.ones((2, 3))),
                           de.constant(np.ones((3, 3)))]),
        lambda: de.bce_loss(de.constant(np.full((2,), 0.5)),
                            np.ones((3,))),
    ],
    ids=["matmul", "add", "concat", "bce"]
)
def test_shape_errors_name_both_shapes(operation):
    with pytest.raises(ShapeError) as error:
        operation()
    assert error.value.left != error.value.right


def test_embedding_lookup_out_of_range(store):
    table = store.zeros("table", (3, 2))
    with pytest.raises(IndexError):
        de.embedding_lookup(table, np.array([3]))


class TestDropout:
    def test_identity_outside_training(self, store):
        w = store.add("w", np.ones((4, 4)))
        assert de.dropout(w, 0.5, train=False) is w

    def test_inverted_scaling(self, store):
        w = store.add("w", np.ones((200, 200)))
        dropped = de.dropout(w, 0.5, True, np.random.default_rng(0))
        kept = dropped.value[dropped.value > 0]
        np.testing.assert_allclose(kept, 2.0)
        assert dropped.value.mean() == pytest.approx(1.0, abs=0.05)

    def test_rate_must_be_below_one(self, store):
        w = store.add("w", np.ones(2))
        with pytest.raises(ValueError):
            de.dropout(w, 1.0, True)


class TestParamStore:
    def test_duplicate_names_are_rejected(self, store):
        store.zeros("w", (2,))
        with pytest.raises(KeyError):
            store.zeros("w", (2,))

    def test_parameter_count(self, store):
        store.zeros("a", (2, 3))
        store.gru("g", 2, 4)
        assert store.parameter_count == 6 + 2 * 12 + 4 * 12 + 12

    def test_state_dict_is_a_copy(self, store):
        w = store.zeros("w", (2,))
        state = store.state_dict()
        state["w"][0] = 5.0
        assert w.value[0] == 0.0

    def test_load_state_dict(self, store):
        store.zeros("w", (2,))
        store.load_state_dict({"w": np.array([1, 2], dtype=np.int64)})
        assert store["w"].dtype == np.float64
        np.testing.assert_array_equal(store["w"].value, [1.0, 2.0])

    def test_load_state_dict_rejects_wrong_names(self, store):
        store.zeros("w", (2,))
        with pytest.raises(KeyError):
            store.load_state_dict({"v": np.zeros(2)})

    def test_load_state_dict_rejects_wrong_shape(self, store):
        store.zeros("w", (2,))
        with pytest.raises(ShapeError):
            store.load_state_dict({"w": np.zeros(3)})

    def test_l2_penalty(self, store):
        store.add("a", [1.0, 2.0])
        store.add("b", [[3.0]])
        assert store.l2_penalty().item() == pytest.approx(14.0)

    def test_initial_values_depend_on_name_only(self, store):
        other = de.ParamStore(np.float64, seed=7)
        other.normal("before", (4,))
        other.gru("g", 2, 3)
        store.gru("g", 2, 3)
        for name in ("g.input_weights", "g.hidden_weights", "g.bias"):
            np.testing.assert_array_equal(
                store[name].value, other[name].value
            )
        assert not np.array_equal(
            store.uniform("a", (5,)).value, store.uniform("b", (5,)).value
        )

    def test_seed_changes_initial_values(self, store):
        other = de.ParamStore(np.float64, seed=8)
        assert not np.array_equal(
            store.normal("w", (5,)).value, other.normal("w", (5,)).value
        )


class TestAdam:
    def test_minimizes_quadratic(self, store):
        w = store.add("w", [3.0, -2.0])
        for _ in range(500):
            store.zero_grad()
            de.tensor_sum(de.mul(w, w)).backward()
            de.adam_step(store, lr=0.05)
        np.testing.assert_allclose(w.value, 0.0, atol=0.05)

    def test_first_step_moves_by_learning_rate(self, store):
        w = store.add("w", [1.0])
        de.tensor_sum(de.mul(w, 4.0)).backward()
        de.adam_step(store, lr=0.1)
        assert w.value[0] == pytest.approx(0.9, abs=1e-6)
        assert store.adam["w"].step == 1

    def test_weight_decay_without_gradient(self, store):
        w = store.add("w", [1.0])
        de.adam_step(store, lr=0.1, weight_decay=0.5)
        assert w.value[0] < 1.0

    def test_learning_rate_must_be_positive(self, store):
        store.zeros("w", (1,))
        with pytest.raises(ValueError):
            de.adam_step(store, lr=0.0)
