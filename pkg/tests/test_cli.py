import shutil

import pytest

from smallarea.cli import main
from smallarea.fixture import generate_example

MINI_CONFIG = """
schema:
  constraint_variables:
    - name: sex
      categories: [M, F]
    - name: age
      categories: [Y, O]
  income_field: income
paths:
  constraints: constraints.csv
  survey: survey.csv
  output_dir: out
seed: 11
"""

MINI_CONSTRAINTS = """zone_id,variable,category,count
Z1,sex,M,60
Z1,sex,F,40
Z1,age,Y,30
Z1,age,O,70
Z2,sex,M,10
Z2,sex,F,30
Z2,age,Y,25
Z2,age,O,15
"""

MINI_SURVEY = """record_id,household_id,sex,age,income
r1,h1,M,Y,100
r2,h2,M,O,250
r3,h3,F,Y,80
r4,h4,F,O,400
"""


def write_mini(tmp_path, constraints=MINI_CONSTRAINTS):
    (tmp_path / "config.yaml").write_text(MINI_CONFIG)
    (tmp_path / "constraints.csv").write_text(constraints)
    (tmp_path / "survey.csv").write_text(MINI_SURVEY)
    return tmp_path / "config.yaml"


@pytest.fixture(scope="module")
def example_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("example")
    config = generate_example(d, n_zones=8, survey_size=400, mean_zone_pop=600)
    return d, config


class TestCheck:
    def test_consistent_exits_clean(self, tmp_path):
        config = write_mini(tmp_path)
        assert main(["check", "--config", str(config)]) == 0

    def test_disagreement_exits_2(self, tmp_path):
        bad = MINI_CONSTRAINTS.replace("Z1,age,O,70", "Z1,age,O,68")
        config = write_mini(tmp_path, constraints=bad)
        assert main(["check", "--config", str(config)]) == 2
        report = (tmp_path / "out" / "consistency_report.csv").read_text()
        assert "zone_total_disagreement" in report

    def test_malformed_csv_exits_1(self, tmp_path, capsys):
        bad = MINI_CONSTRAINTS.replace("Z1,sex,M,60", "Z1,sex,M,sixty")
        config = write_mini(tmp_path, constraints=bad)
        assert main(["check", "--config", str(config)]) == 1
        assert "line" in capsys.readouterr().err

    def test_large_disagreement_blocks_pipeline(self, tmp_path):
        bad = MINI_CONSTRAINTS.replace("Z1,age,O,70", "Z1,age,O,30")
        config = write_mini(tmp_path, constraints=bad)
        assert main(["pipeline", "--config", str(config)]) == 1
        assert (
            main(["pipeline", "--config", str(config), "--allow-inconsistent"]) == 2
        )


class TestSynthesize:
    def test_same_seed_byte_identical(self, tmp_path):
        config = write_mini(tmp_path)
        main(["synthesize", "--config", str(config), "--out", str(tmp_path / "a")])
        main(["synthesize", "--config", str(config), "--out", str(tmp_path / "b")])
        a = (tmp_path / "a" / "population.csv").read_bytes()
        b = (tmp_path / "b" / "population.csv").read_bytes()
        assert a == b

    def test_different_seed_same_totals(self, tmp_path):
        config = write_mini(tmp_path)
        main(["synthesize", "--config", str(config), "--out", str(tmp_path / "a")])
        main(
            [
                "synthesize",
                "--config",
                str(config),
                "--out",
                str(tmp_path / "b"),
                "--seed",
                "999",
            ]
        )

        def totals(path):
            out = {}
            for line in path.read_text().splitlines()[1:]:
                zone, _, count = line.split(",")
                out[zone] = out.get(zone, 0) + int(count)
            return out

        assert totals(tmp_path / "a" / "population.csv") == totals(
            tmp_path / "b" / "population.csv"
        )

    def test_forced_truncation_flags_nonconvergence(self, example_dir, tmp_path):
        d, config = example_dir
        code = main(
            [
                "synthesize",
                "--config",
                str(config),
                "--out",
                str(tmp_path / "out"),
                "--max-iters",
                "1",
            ]
        )
        assert code == 2
        strict = main(
            [
                "synthesize",
                "--config",
                str(config),
                "--out",
                str(tmp_path / "strict"),
                "--max-iters",
                "1",
                "--strict",
            ]
        )
        assert strict == 1

    def test_dump_weights(self, tmp_path):
        config = write_mini(tmp_path)
        main(["synthesize", "--config", str(config), "--dump-weights"])
        weights = (tmp_path / "out" / "weights.csv").read_text().splitlines()
        assert weights[0] == "record_id,zone_id,weight"
        assert len(weights) == 1 + 4 * 2


class TestPipeline:
    def test_outputs_and_manifest(self, example_dir):
        d, config = example_dir
        assert main(["pipeline", "--config", str(config)]) == 0
        out = d / "out"
        for name in (
            "population.csv",
            "convergence.csv",
            "validation_internal.csv",
            "validation_shares.csv",
            "indicators.csv",
            "manifest.txt",
        ):
            assert (out / name).exists(), name
        manifest = (out / "manifest.txt").read_text()
        assert "output.population.csv.sha256=" in manifest
        assert "seed=" in manifest

    def test_rerun_identical_digests(self, example_dir, tmp_path):
        d, config = example_dir
        main(["pipeline", "--config", str(config), "--out", str(tmp_path / "r1")])
        main(["pipeline", "--config", str(config), "--out", str(tmp_path / "r2")])
        for name in ("population.csv", "indicators.csv", "validation_internal.csv"):
            assert (tmp_path / "r1" / name).read_bytes() == (
                tmp_path / "r2" / name
            ).read_bytes()

    def test_compare_mode(self, example_dir, tmp_path):
        d, config = example_dir
        earlier = tmp_path / "earlier"
        main(["pipeline", "--config", str(config), "--out", str(earlier)])
        later = tmp_path / "later"
        assert (
            main(
                [
                    "pipeline",
                    "--config",
                    str(config),
                    "--out",
                    str(later),
                    "--seed",
                    "77",
                    "--compare",
                    str(earlier),
                ]
            )
            == 0
        )
        diff = (later / "indicators_diff.csv").read_text().splitlines()
        assert diff[0] == "zone_id,metric,earlier,later,pct_change"
        assert len(diff) > 1

    def test_validate_without_population_fails(self, tmp_path):
        config = write_mini(tmp_path)
        assert main(["validate", "--config", str(config)]) == 1

    def test_indicators_after_synthesize(self, tmp_path):
        config = write_mini(tmp_path)
        assert main(["synthesize", "--config", str(config)]) == 0
        assert main(["indicators", "--config", str(config)]) == 0
        text = (tmp_path / "out" / "indicators.csv").read_text().splitlines()
        assert text[0].startswith("zone_id,mean_income")
        assert text[-1].startswith("METRO,")


class TestExample:
    def test_example_command(self, tmp_path):
        code = main(
            [
                "example",
                "--out",
                str(tmp_path),
                "--zones",
                "4",
                "--survey-size",
                "200",
            ]
        )
        assert code == 0
        assert (tmp_path / "config.yaml").exists()
