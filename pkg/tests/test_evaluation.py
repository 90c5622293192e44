"""Tests for per-class scoring, OCR noise and the robustness report."""

import json
from pathlib import Path

import numpy as np
import pytest

from fsdag.document import Document
from fsdag.evaluation.metrics import collect_predictions
from fsdag.evaluation.metrics import evaluate
from fsdag.evaluation.metrics import score_predictions
from fsdag.evaluation.metrics import write_report
from fsdag.evaluation.ocr_noise import ConfusionTable
from fsdag.evaluation.ocr_noise import load_confusion_table
from fsdag.evaluation.ocr_noise import perturb_corpus
from fsdag.evaluation.ocr_noise import perturb_document
from fsdag.evaluation.ocr_noise import perturb_text
from fsdag.evaluation.robustness import robustness_report
from fsdag.model.config import ModelConfig
from fsdag.model.params import ModelParams

from tests.helpers import LABELS
from tests.helpers import make_page

NAMES = ("other", "a", "b", "c")


class TestScorePredictions:
    """Precision, recall and F1 per class."""

    def test_one_hit_one_miss(self):
        """
        Given: two gold regions of class 1, one predicted correctly, the other as background
        When: scores are computed
        Then: P = 1, R = 1/2 and F1 = 2/3 for class 1
        """
        report = score_predictions(np.array([1, 1, 0]), np.array([1, 0, 0]), ("other", "a"))

        score = report.score("a")
        assert score.precision == 1.0
        assert score.recall == 0.5
        assert score.f1 == pytest.approx(2 / 3)
        assert report.macro_f1 == pytest.approx(2 / 3)

    def test_background_is_not_scored(self):
        report = score_predictions(np.array([0, 1]), np.array([0, 1]), ("other", "a"))
        assert [s.name for s in report.per_class] == ["a"]

    def test_undefined_ratios_are_zero(self):
        report = score_predictions(np.array([0, 0]), np.array([2, 0]), NAMES)
        b = report.score("b")
        assert (b.precision, b.recall, b.f1, b.support) == (0.0, 0.0, 0.0, 0)

    def test_macro_averages_supported_classes_only(self):
        y_true = np.array([1, 2, 2, 0])
        y_pred = np.array([1, 2, 0, 3])

        report = score_predictions(y_true, y_pred, NAMES)

        assert report.score("c").support == 0
        assert report.macro_f1 == pytest.approx((1.0 + 2 / 3) / 2)

    def test_no_supported_class(self):
        assert score_predictions(np.array([0]), np.array([0]), NAMES).macro_f1 == 0.0

    def test_unknown_class_name(self):
        with pytest.raises(KeyError):
            score_predictions(np.array([0]), np.array([0]), NAMES).score("zzz")


class TestEvaluate:
    """Whole-corpus evaluation with a model."""

    def test_threads_do_not_change_predictions(self, tiny_config: ModelConfig, three_node_page: Document):
        params = ModelParams.initialize(tiny_config, LABELS.names, seed=0)
        docs = [three_node_page, make_page([(1, 1, 9, 9), (20, 20, 40, 30)], ["x", "y"], [1, 3], name="p2")]

        single = collect_predictions(params, docs, threads=1)
        pooled = collect_predictions(params, docs, threads=4)

        assert np.array_equal(single[1], pooled[1])
        assert single[0].tolist() == [0, 1, 2, 1, 3]

    def test_empty_corpus(self, tiny_config: ModelConfig):
        with pytest.raises(ValueError):
            evaluate(ModelParams.initialize(tiny_config, LABELS.names, seed=0), [])

    def test_label_set_mismatch(self, tiny_config: ModelConfig, three_node_page: Document):
        params = ModelParams.initialize(tiny_config, ("other", "x", "y", "z"), seed=0)
        with pytest.raises(ValueError):
            evaluate(params, [three_node_page])

    def test_report_file(self, tiny_config: ModelConfig, three_node_page: Document, tmp_path: Path):
        report = evaluate(ModelParams.initialize(tiny_config, LABELS.names, seed=0), [three_node_page])
        data = json.loads(write_report(report, tmp_path / "report.json").read_text())
        assert [c["name"] for c in data["per_class"]] == ["date", "total", "vendor"]
        assert "drop" not in data


class TestPerturbText:
    """Character confusions."""

    def test_always_perturb(self):
        assert perturb_text("ate 5 chocolates", 1.0, ConfusionTable(), np.random.default_rng(0)) == "ate S chocoIates"

    def test_never_perturb(self):
        assert perturb_text("1,5", 0.0, ConfusionTable(), np.random.default_rng(0)) == "1,5"

    def test_multiple_replacements_are_drawn_from_the_list(self):
        for seed in range(10):
            assert perturb_text("1", 1.0, ConfusionTable(), np.random.default_rng(seed)) in {"l", "I"}

    @pytest.mark.parametrize("p", [-0.1, 1.5])
    def test_probability_out_of_range(self, p: float):
        with pytest.raises(ValueError):
            perturb_text("x", p, ConfusionTable(), np.random.default_rng(0))

    def test_rate_matches_probability(self):
        """
        Given: p = 0.3 and 2000 independent words that all contain a confusable character
        When: each is perturbed from its own stream
        Then: the changed fraction is within 0.05 of p
        """
        changed = sum(
            perturb_text("55", 0.3, ConfusionTable(), np.random.default_rng(seed)) != "55" for seed in range(2000)
        )
        assert abs(changed / 2000 - 0.3) < 0.05


class TestConfusionTable:
    """Loading and validating confusion tables."""

    def test_load(self, tmp_path: Path):
        path = tmp_path / "conf.json"
        path.write_text('{"0": ["O", "D"], "8": ["B"]}')

        table = load_confusion_table(path)

        assert "0" in table
        assert table.replacements("0") == ("O", "D")

    def test_multi_character_key(self):
        with pytest.raises(ValueError):
            ConfusionTable({"rn": ("m",)})

    def test_empty_replacements(self):
        with pytest.raises(ValueError):
            ConfusionTable({"o": ()})

    def test_not_an_object(self, tmp_path: Path):
        path = tmp_path / "conf.json"
        path.write_text('["a"]')
        with pytest.raises(ValueError):
            load_confusion_table(path)


class TestPerturbDocument:
    """Document-level noise."""

    def test_only_texts_change(self, three_node_page: Document):
        noisy = perturb_document(three_node_page, 1.0, ConfusionTable(), seed=0)

        assert [r.bbox for r in noisy.by_id()] == [r.bbox for r in three_node_page.by_id()]
        assert [r.label for r in noisy.by_id()] == [0, 1, 2]
        assert np.array_equal(noisy.raster, three_node_page.raster)
        assert noisy.region(2).text == "TotaI 42.00"

    def test_independent_of_corpus_order(self, three_node_page: Document):
        other = make_page([(1, 1, 9, 9), (20, 20, 40, 30)], ["1l1", "5,5"], [1, 3], name="p2")
        table = ConfusionTable()

        forward_order = perturb_corpus([three_node_page, other], 0.5, table, seed=3)
        reverse_order = perturb_corpus([other, three_node_page], 0.5, table, seed=3)

        assert forward_order[0] == reverse_order[1]
        assert forward_order[1] == reverse_order[0]


class TestRobustnessReport:
    """Clean versus perturbed macro F1."""

    def test_zero_noise_has_zero_drop(self, tiny_config: ModelConfig, three_node_page: Document):
        params = ModelParams.initialize(tiny_config, LABELS.names, seed=0)

        report = robustness_report(params, [three_node_page], p=0.0, seed=1)

        assert report.drop == 0.0
        assert report.clean_macro_f1 == report.macro_f1
        assert report.p == 0.0
        assert report.seed == 1

    def test_drop_is_clean_minus_perturbed(self, tiny_config: ModelConfig, three_node_page: Document):
        params = ModelParams.initialize(tiny_config, LABELS.names, seed=2)
        report = robustness_report(params, [three_node_page], p=1.0)
        assert report.drop == report.clean_macro_f1 - report.macro_f1
        assert "drop" in report.to_dict()
