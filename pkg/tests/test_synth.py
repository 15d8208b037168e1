import numpy as np

from xlingqa.synth import BenchmarkSettings, build_toy_world, run_toy_benchmark


class TestBuildToyWorld:
    def test_deterministic(self):
        a = build_toy_world(seed=3, n_questions=10, distractor_articles=2)
        b = build_toy_world(seed=3, n_questions=10, distractor_articles=2)
        assert [p.text for p in a.passages] == [p.text for p in b.passages]
        assert a.cross_question_ids == b.cross_question_ids

    def test_cross_answers_absent_from_english(self):
        world = build_toy_world(seed=0, n_questions=20, cross_fraction=0.5,
                                distractor_articles=3)
        en_text = " ".join(p.text for p in world.passages if p.lang == "en")
        for qid in world.cross_question_ids:
            answers = world.answer_sets[qid]
            for answer in answers.target("en"):
                assert answer not in en_text
            # and the linked-language answer is planted somewhere
            xx_text = " ".join(p.text for p in world.passages if p.lang == "xx")
            assert all(a in xx_text for a in answers.target("xx"))

    def test_easy_answers_present_in_english(self):
        world = build_toy_world(seed=0, n_questions=20, cross_fraction=0.5,
                                distractor_articles=3)
        cross = set(world.cross_question_ids)
        en_text = " ".join(p.text for p in world.passages if p.lang == "en")
        for instance in world.instances:
            if instance.question.question_id in cross:
                continue
            assert any(a in en_text for a in instance.answers)

    def test_cross_fraction_respected(self):
        world = build_toy_world(seed=1, n_questions=50, cross_fraction=0.4,
                                distractor_articles=0)
        assert len(world.cross_question_ids) == 20

    def test_gold_passages_resolvable(self):
        world = build_toy_world(seed=2, n_questions=15, distractor_articles=2)
        for instance in world.instances:
            for pid in instance.gold_passage_ids:
                assert world.store.get(pid) is not None

    def test_link_table_covers_subjects_and_answers(self):
        world = build_toy_world(seed=0, n_questions=5, distractor_articles=0)
        for instance in world.instances:
            answer = instance.answers[0]
            entity = world.link_table.entity_for_title("en", answer)
            assert entity is not None
            assert world.link_table.title(entity, "xx") is not None

    def test_three_language_world(self):
        world = build_toy_world(seed=4, n_questions=8, langs=("en", "xx", "yy"),
                                distractor_articles=2)
        langs = {p.lang for p in world.passages}
        assert langs == {"en", "xx", "yy"}


class TestRunToyBenchmark:
    def test_small_run_improves(self):
        settings = BenchmarkSettings(seed=0, n_questions=24, cross_fraction=0.5,
                                     distractor_articles=6, dim=64, epochs=20)
        report = run_toy_benchmark(settings)
        assert len(report["iterations"]) == 2
        assert report["improvement_r_multi"] > 0.0
        assert report["iterations"][0]["training_records"] == 24

    def test_report_structure(self):
        settings = BenchmarkSettings(seed=1, n_questions=10, distractor_articles=2,
                                     dim=16, epochs=4)
        report = run_toy_benchmark(settings)
        for row in report["iterations"]:
            assert 0.0 <= row["r_multi_at_k"] <= 1.0
            assert 0.0 <= row["r_target_at_k"] <= 1.0
        assert report["mining_ledger"][0]["iteration"] == 1
