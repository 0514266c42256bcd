import logging

import numpy as np
import pytest
from builders import bn_chain, corrupted_sets, with_random_statistics

from bnrectify.core import adaptation
from bnrectify.core.adaptation import AdaptationPolicy
from bnrectify.core.errors import SemanticError, ShapeError
from bnrectify.core.metrics import evaluate
from bnrectify.core.model import Mode, build_preset, forward, layer_input, model_digest
from bnrectify.core.normalization import StatsScope, compute_batch_stats
from bnrectify.core.rng import generator


def _policy(scope=StatsScope.BOTH, layers="all", count=8):
    return AdaptationPolicy(scope, layers, count)


class TestPolicy:

    def test_parse_short_forms(self):
        policy = AdaptationPolicy.parse("mean", "end", 8)
        assert policy == AdaptationPolicy(StatsScope.MEAN_ONLY, "end_third", 8)
        assert policy.label == "mean_only/end_third/n8"

    def test_parse_layer_names(self):
        policy = AdaptationPolicy.parse("var", "bn1, bn3", 4)
        assert policy.layer_scope == ("bn1", "bn3")
        assert policy.label == "variance_only/bn1+bn3/n4"

    def test_parse_unknown_stats(self):
        with pytest.raises(SemanticError, match="statistics scope"):
            AdaptationPolicy.parse("median")

    @pytest.mark.parametrize("kwargs", [
        {"layer_scope": "outer_third"},
        {"layer_scope": ()},
        {"sample_count": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(SemanticError):
            AdaptationPolicy(**kwargs)

    def test_explicit_layers_resolve_in_depth_order(self, toy_model):
        assert _policy(layers=("bn3", "bn1")).resolve_layers(toy_model) == ("bn1", "bn3")

    def test_unknown_layer_name(self, toy_model):
        with pytest.raises(SemanticError, match="unknown layer 'bn9'"):
            _policy(layers=("bn9",)).resolve_layers(toy_model)

    def test_non_bn_layer_name(self, toy_model):
        with pytest.raises(SemanticError, match="not a batch normalization layer"):
            _policy(layers=("conv2",)).resolve_layers(toy_model)

    @pytest.mark.parametrize("preset", ["tiny-cnn-gn", "tiny-cnn-in"])
    def test_model_without_bn_is_rejected(self, preset):
        model = build_preset(preset, input_shape=(3, 8, 8))
        with pytest.raises(SemanticError, match="no batch normalization layers"):
            adaptation.rectify(model, np.zeros((8, 3, 8, 8), np.float32), _policy())


class TestPartition:

    @pytest.mark.parametrize("count,sizes", [
        (9, (3, 3, 3)),
        (10, (3, 3, 4)),
        (2, (0, 1, 1)),
        (1, (0, 0, 1)),
    ])
    def test_thirds(self, count, sizes):
        parts = adaptation.partition_bn_layers(bn_chain(count))
        assert tuple(len(p) for p in parts) == sizes
        assert sum(parts, ()) == bn_chain(count).bn_layers()

    def test_end_third_of_ten_layers(self):
        model = bn_chain(10)
        assert _policy(layers="end_third").resolve_layers(model) == (
            "bn7", "bn8", "bn9", "bn10"
        )


class TestRectify:

    def test_source_model_is_untouched(self, toy_model, toy_batch):
        before = model_digest(toy_model)
        adaptation.rectify(toy_model, toy_batch, _policy())
        assert model_digest(toy_model) == before

    def test_weights_are_unchanged(self, toy_model, toy_batch):
        adapted = adaptation.rectify(toy_model, toy_batch, _policy())
        assert model_digest(adapted, include_statistics=False) == model_digest(
            toy_model, include_statistics=False
        )
        assert model_digest(adapted) != model_digest(toy_model)

    def test_statistics_are_those_of_the_batch(self, toy_model, toy_batch):
        adapted = adaptation.rectify(toy_model, toy_batch, _policy())
        for name in adapted.bn_layers():
            stats = compute_batch_stats(layer_input(adapted, toy_batch, name))
            state = adapted.bn_state(name)
            np.testing.assert_allclose(state.pop_mean, stats.mean, atol=1e-5)
            np.testing.assert_allclose(state.pop_var, stats.variance, atol=1e-5)

    @pytest.mark.parametrize("scope", list(StatsScope))
    @pytest.mark.parametrize("layers", ["all", "end_third"])
    def test_eval_reproduces_the_adapt_pass(self, toy_model, toy_batch, scope, layers):
        names = [layer.name for layer in toy_model.layers]
        policy = _policy(scope, layers)
        adapt_pass = forward(toy_model, toy_batch, Mode.ADAPT, taps=names, policy=policy)
        replay = forward(adapt_pass.model, toy_batch, taps=names)
        for name in names:
            assert np.array_equal(adapt_pass.tap(name), replay.tap(name)), name
        assert np.array_equal(adapt_pass.logits, replay.logits)

    def test_rectifying_twice_changes_nothing(self, toy_model, toy_batch):
        once = adaptation.rectify(toy_model, toy_batch, _policy())
        twice = adaptation.rectify(once, toy_batch, _policy())
        assert model_digest(once) == model_digest(twice)

    def test_mean_only_keeps_variance(self, toy_model, toy_batch):
        adapted = adaptation.rectify(toy_model, toy_batch, _policy(StatsScope.MEAN_ONLY))
        for name in toy_model.bn_layers():
            assert np.array_equal(adapted.params[f"{name}.pop_var"],
                                  toy_model.params[f"{name}.pop_var"])
            assert not np.array_equal(adapted.params[f"{name}.pop_mean"],
                                      toy_model.params[f"{name}.pop_mean"])

    def test_variance_only_keeps_mean(self, toy_model, toy_batch):
        adapted = adaptation.rectify(toy_model, toy_batch, _policy(StatsScope.VARIANCE_ONLY))
        for name in toy_model.bn_layers():
            assert np.array_equal(adapted.params[f"{name}.pop_mean"],
                                  toy_model.params[f"{name}.pop_mean"])

    def test_layer_scope_is_exact(self, toy_model, toy_batch):
        adapted = adaptation.rectify(toy_model, toy_batch, _policy(layers="end_third"))
        for name in ("bn1", "bn2"):
            for stat in ("pop_mean", "pop_var"):
                key = f"{name}.{stat}"
                assert np.array_equal(adapted.params[key], toy_model.params[key])
        assert not np.array_equal(adapted.params["bn3.pop_mean"], toy_model.params["bn3.pop_mean"])

    def test_batch_must_hold_sample_count(self, toy_model, toy_batch):
        with pytest.raises(ShapeError):
            adaptation.rectify(toy_model, toy_batch, _policy(count=4))

    def test_single_sample_warns(self, toy_model, toy_batch, caplog):
        with caplog.at_level(logging.WARNING, logger="bnrectify"):
            adapted = adaptation.rectify(toy_model, toy_batch[:1], _policy(count=1))
        assert "degenerate" in caplog.text
        assert np.all(np.isfinite(forward(adapted, toy_batch).logits))

    def test_large_clean_batch_recovers_population_statistics(self):
        model = bn_chain(3, seed=5)
        rng = generator(77)

        def draw(count):
            brightness = rng.uniform(0.2, 0.8, (count, 1, 1, 1))
            return (brightness + rng.normal(0.0, 0.2, (count, 1, 4, 4))).astype(np.float32)

        population = adaptation.rectify(model, draw(32768), _policy(count=32768))
        draws = [adaptation.rectify(population, draw(512), _policy(count=512))
                 for _ in range(100)]
        for name in model.bn_layers():
            for stat in ("pop_mean", "pop_var"):
                key = f"{name}.{stat}"
                values = np.stack([d.params[key] for d in draws]).astype(np.float64)
                standard_error = values.std(axis=0, ddof=1)
                within = np.abs(values - population.params[key]) <= 3 * standard_error
                assert np.all(within.mean(axis=0) >= 0.95), key

    def test_different_batches_give_different_statistics(self, toy_model, toy_batch):
        first = adaptation.rectify(toy_model, toy_batch[:4], _policy(count=4))
        second = adaptation.rectify(toy_model, toy_batch[4:], _policy(count=4))
        assert model_digest(first) != model_digest(second)


class TestRepresentation:

    def test_draw_is_deterministic_and_without_replacement(self, small_dataset):
        first = adaptation.draw_representation(small_dataset, 16, seed=3, label="contrast-3")
        second = adaptation.draw_representation(small_dataset, 16, seed=3, label="contrast-3")
        assert np.array_equal(first, second)
        assert len(np.unique(first)) == 16
        assert first.min() >= 0 and first.max() < len(small_dataset)

    def test_draw_depends_on_seed_and_label(self, small_dataset):
        base = adaptation.draw_representation(small_dataset, 16, seed=3, label="a")
        assert not np.array_equal(
            base, adaptation.draw_representation(small_dataset, 16, seed=4, label="a")
        )
        assert not np.array_equal(
            base, adaptation.draw_representation(small_dataset, 16, seed=3, label="b")
        )

    def test_draw_too_many(self, small_dataset):
        with pytest.raises(SemanticError, match="cannot draw 41"):
            adaptation.draw_representation(small_dataset, 41, seed=0)

    def test_adapt_to_dataset(self, small_dataset):
        model = with_random_statistics(build_preset("tiny-cnn-bn", input_shape=(3, 8, 8)))
        policy = _policy()
        adapted, indices = adaptation.adapt_to_dataset(model, small_dataset, policy, 5, "x")
        assert np.array_equal(
            indices, adaptation.draw_representation(small_dataset, 8, 5, "x")
        )
        expected = adaptation.rectify(model, small_dataset.pixels(indices), policy)
        assert model_digest(adapted) == model_digest(expected)


@pytest.fixture
def bn_model():
    return with_random_statistics(build_preset("tiny-cnn-bn", input_shape=(3, 8, 8), seed=2))


@pytest.fixture
def sets(small_dataset):
    return corrupted_sets(small_dataset)


class TestEvaluateAdapted:

    def test_one_cell_per_set(self, bn_model, sets):
        table = adaptation.evaluate_adapted(bn_model, sets, _policy(), seed=0)
        assert table.adapted
        assert table.policy == "both/all/n8"
        assert [(c.kind, c.severity, c.n_samples) for c in table.cells] == [
            ("contrast", 3, 40), ("gaussian_noise", 2, 40)
        ]

    def test_deterministic(self, bn_model, sets):
        first = adaptation.evaluate_adapted(bn_model, sets, _policy(), seed=1)
        assert first == adaptation.evaluate_adapted(bn_model, sets, _policy(), seed=1)

    def test_exclude_representation(self, bn_model, sets):
        table = adaptation.evaluate_adapted(
            bn_model, sets, _policy(), seed=0, exclude_representation=True
        )
        assert all(c.n_samples == 32 for c in table.cells)

    def test_gn_model_is_rejected(self, sets):
        model = build_preset("tiny-cnn-gn", input_shape=(3, 8, 8))
        with pytest.raises(SemanticError):
            adaptation.evaluate_adapted(model, sets, _policy(), seed=0)


class TestAblations:

    def test_sample_count_rows(self, bn_model, sets):
        rows = adaptation.ablate_sample_count(bn_model, sets, [2, 8], seed=0)
        assert [r.count for r in rows] == [0, 2, 8]
        assert rows[0].accuracy == pytest.approx(evaluate(bn_model, sets)[0].accuracy)
        assert all(r.ce is None for r in rows)

    def test_sample_count_is_deterministic(self, bn_model, sets):
        assert adaptation.ablate_sample_count(bn_model, sets, [4], seed=2) == (
            adaptation.ablate_sample_count(bn_model, sets, [4], seed=2)
        )

    def test_sample_count_against_itself_as_baseline(self, bn_model, sets):
        baseline = evaluate(bn_model, sets)[0]
        rows = adaptation.ablate_sample_count(bn_model, sets, [4], seed=0, baseline=baseline)
        assert rows[0].ce == pytest.approx(100.0)
        assert rows[1].ce is not None

    @pytest.mark.parametrize("count", [0, 41])
    def test_sample_count_range(self, bn_model, sets, count):
        with pytest.raises(SemanticError):
            adaptation.ablate_sample_count(bn_model, sets, [count], seed=0)

    def test_sample_count_table(self, tmp_path):
        rows = [adaptation.SampleCountRow(0, 0.5), adaptation.SampleCountRow(8, 0.625, 75.04)]
        adaptation.write_sample_count_table(tmp_path / "n.csv", rows)
        assert (tmp_path / "n.csv").read_text() == "n,Acc,CE\n0,50.0,\n8,62.5,75.0\n"

    def test_policy_ablation_names(self, bn_model, sets):
        tables = adaptation.ablate_policies(
            bn_model, sets, adaptation.location_policies(8), seed=0
        )
        assert list(tables) == ["Acc", "front_third", "middle_third", "end_third", "all"]
        assert not tables["Acc"].adapted
        assert tables["end_third"].policy == "both/end_third/n8"

    def test_stats_policies(self):
        policies = adaptation.stats_policies(16)
        assert [p.stats_scope for p in policies.values()] == list(StatsScope)
        assert list(policies) == ["Acc*", "Acc*_mean", "Acc*_var"]
