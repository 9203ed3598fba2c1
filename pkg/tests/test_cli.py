import csv
import json
from pathlib import Path

import numpy as np
import pytest

from histoftree.cli import build_parser, main

TOY = Path(__file__).parent / "data" / "toy.csv"


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestParsing:
    def test_version_is_machine_readable(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert capsys.readouterr().out.strip() == "0.1.0"

    def test_unknown_flag_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["audit", "--mechanism", "paired-rr", "--eps", "2", "--bogus"])
        assert exc.value.code == 1

    def test_unknown_fig_id_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["figures-data", "--in", "x.csv", "--fig-id", "nope", "--out", "y.csv"])
        assert exc.value.code == 1

    def test_help_documents_every_flag(self, capsys):
        parser = build_parser()
        for sub, flags in {
            "simulate": ["--fig", "--n", "--eps", "--sstar", "--gamma", "--reps", "--seed", "--out", "--threads"],
            "bench": ["--csv", "--label-col", "--mask-mode", "--eps", "--reps", "--quick", "--out"],
            "audit": ["--mechanism", "--eps", "--support-size"],
            "fit": ["--csv", "--label-col", "--eps", "--rho", "--s", "--p", "--t", "--rule", "--mechanism", "--out"],
            "predict": ["--model", "--csv", "--out"],
            "figures-data": ["--in", "--fig-id", "--out"],
            "select-params": ["--n", "--d", "--eps", "--gamma", "--sstar", "--mask-csv"],
        }.items():
            with pytest.raises(SystemExit):
                parser.parse_args([sub, "--help"])
            text = capsys.readouterr().out
            for flag in flags:
                assert flag in text, (sub, flag)


class TestAudit:
    def test_pass_at_two(self, capsys):
        code, out, _ = run(["audit", "--mechanism", "paired-rr", "--eps", "2"], capsys)
        assert code == 0
        assert "PASS" in out

    def test_generalized_large_support(self, capsys):
        code, out, _ = run(
            ["audit", "--mechanism", "generalized-rr", "--eps", "1", "--support-size", "16"], capsys
        )
        assert code == 0
        assert "PASS" in out

    def test_zero_eps_is_usage_error(self, capsys):
        code, _, err = run(["audit", "--mechanism", "paired-rr", "--eps", "0"], capsys)
        assert code == 1
        assert "positive" in err


class TestSelectParams:
    def test_emits_json(self, capsys):
        code, out, _ = run(
            ["select-params", "--n", "500", "--d", "4", "--eps", "2", "--gamma", "1.0"], capsys
        )
        assert code == 0
        doc = json.loads(out)
        assert set(doc) == {"s", "p", "t", "tail_exponent", "objective"}
        assert 0 <= doc["s"] <= 3

    def test_requires_exactly_one_mask_source(self, capsys):
        code, _, err = run(
            ["select-params", "--n", "500", "--d", "4", "--eps", "2", "--gamma", "1.0", "--sstar", "2"],
            capsys,
        )
        assert code == 1

    def test_mask_csv_input(self, tmp_path, capsys):
        mask = tmp_path / "mask.csv"
        np.savetxt(mask, np.eye(4, dtype=int), fmt="%d", delimiter=",")
        code, out, _ = run(
            ["select-params", "--n", "4", "--d", "4", "--eps", "2", "--mask-csv", str(mask)], capsys
        )
        assert code == 0


class TestSimulate:
    def test_zero_reps_usage_error(self, tmp_path, capsys):
        code, _, err = run(
            ["simulate", "--fig", "trade-off", "--reps", "0", "--out", str(tmp_path / "o.csv")],
            capsys,
        )
        assert code == 1

    def test_conflicting_mask_flags(self, tmp_path, capsys):
        code, _, err = run(
            ["simulate", "--fig", "trade-off", "--sstar", "1", "--gamma", "1.0",
             "--out", str(tmp_path / "o.csv")],
            capsys,
        )
        assert code == 1
        assert "mutually exclusive" in err

    def test_trade_off_schema_and_determinism(self, tmp_path, capsys):
        args = ["simulate", "--fig", "trade-off", "--n", "250", "--reps", "2",
                "--eps", "1,4", "--sstar", "1,2", "--seed", "9", "--threads", "1"]
        outs = []
        for name in ("a.csv", "b.csv"):
            path = tmp_path / name
            code, _, _ = run(args + ["--out", str(path)], capsys)
            assert code == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]
        with open(tmp_path / "a.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["method"] for r in rows} == {"hist_of_tree"}
        assert {(r["sstar"], r["eps"]) for r in rows} == {
            ("1", "1.0"), ("1", "4.0"), ("2", "1.0"), ("2", "4.0")
        }

    def test_select_s_includes_adaptive_rows(self, tmp_path, capsys):
        path = tmp_path / "sel.csv"
        code, _, _ = run(
            ["simulate", "--fig", "select-s", "--n", "250", "--reps", "1", "--gamma", "0.5,2",
             "--s-list", "0,1", "--seed", "3", "--out", str(path)],
            capsys,
        )
        assert code == 0
        with open(path) as fh:
            labels = {r["label"] for r in csv.DictReader(fh)}
        assert labels == {"adaptive", "s=0", "s=1"}


class TestFiguresData:
    def make_aggregate(self, tmp_path, capsys):
        path = tmp_path / "agg.csv"
        run(
            ["simulate", "--fig", "trade-off", "--n", "250", "--reps", "1", "--eps", "2",
             "--sstar", "1", "--seed", "1", "--out", str(path)],
            capsys,
        )
        return path

    def test_reshape_preserves_row_count(self, tmp_path, capsys):
        agg = self.make_aggregate(tmp_path, capsys)
        tidy = tmp_path / "tidy.csv"
        code, _, _ = run(["figures-data", "--in", str(agg), "--fig-id", "trade-off", "--out", str(tidy)], capsys)
        assert code == 0
        assert sum(1 for _ in open(agg)) == sum(1 for _ in open(tidy))

    def test_idempotent_on_tidy_output(self, tmp_path, capsys):
        agg = self.make_aggregate(tmp_path, capsys)
        tidy1, tidy2 = tmp_path / "t1.csv", tmp_path / "t2.csv"
        run(["figures-data", "--in", str(agg), "--fig-id", "trade-off", "--out", str(tidy1)], capsys)
        run(["figures-data", "--in", str(tidy1), "--fig-id", "trade-off", "--out", str(tidy2)], capsys)
        assert tidy1.read_bytes() == tidy2.read_bytes()

    def test_wrong_schema_is_data_error(self, tmp_path, capsys):
        agg = self.make_aggregate(tmp_path, capsys)
        code, _, err = run(
            ["figures-data", "--in", str(agg), "--fig-id", "parameter", "--out", str(tmp_path / "x.csv")],
            capsys,
        )
        assert code == 2
        assert "missing columns" in err

    def test_missing_input_is_data_error(self, tmp_path, capsys):
        code, _, _ = run(
            ["figures-data", "--in", str(tmp_path / "nope.csv"), "--fig-id", "trade-off",
             "--out", str(tmp_path / "x.csv")],
            capsys,
        )
        assert code == 2


class TestBench:
    def test_missing_file_is_data_error(self, tmp_path, capsys):
        code, _, err = run(
            ["bench", "--csv", str(tmp_path / "nope.csv"), "--label-col", "y",
             "--out", str(tmp_path / "b")],
            capsys,
        )
        assert code == 2

    def test_unknown_label_column_is_data_error(self, tmp_path, capsys):
        code, _, err = run(
            ["bench", "--csv", str(TOY), "--label-col", "wrong", "--out", str(tmp_path / "b")],
            capsys,
        )
        assert code == 2
        assert "label column" in err

    def test_quick_bench_end_to_end(self, tmp_path, capsys):
        code, _, _ = run(
            ["bench", "--csv", str(TOY), "--label-col", "target", "--eps", "2", "--reps", "2",
             "--quick", "--seed", "4", "--threads", "1", "--out", str(tmp_path / "b")],
            capsys,
        )
        assert code == 0
        with open(tmp_path / "b_results.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows and all(r["error"] == "" for r in rows)
        methods = {r["method"] for r in rows}
        assert {"hist_of_tree_me", "hist_of_tree_cart", "ad_hist_of_tree_me",
                "ad_hist_of_tree_cart", "hist", "krr", "par_dt", "label_dt", "dt"} <= methods
        agg = json.loads((tmp_path / "b_aggregate.json").read_text())
        assert agg["methods"]["dt"]["inf"]["ratio_vs_dt"] == 1.0
        assert "rank_sums" in agg and "wilcoxon" in agg

    def test_bench_aggregate_deterministic(self, tmp_path, capsys):
        outs = []
        for name in ("r1", "r2"):
            run(
                ["bench", "--csv", str(TOY), "--label-col", "target", "--eps", "2", "--reps", "2",
                 "--quick", "--seed", "4", "--threads", "1", "--out", str(tmp_path / name)],
                capsys,
            )
            outs.append((tmp_path / f"{name}_aggregate.json").read_bytes())
        assert outs[0] == outs[1]

    def test_personalized_mask_mode(self, tmp_path, capsys):
        code, _, _ = run(
            ["bench", "--csv", str(TOY), "--label-col", "target", "--mask-mode", "personalized",
             "--eps", "2", "--reps", "1", "--quick", "--seed", "4", "--threads", "1",
             "--out", str(tmp_path / "p")],
            capsys,
        )
        assert code == 0
        with open(tmp_path / "p_results.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert all(r["error"] == "" for r in rows)


class TestFitPredict:
    def test_round_trip(self, tmp_path, capsys):
        model_path = tmp_path / "model.json"
        code, _, _ = run(
            ["fit", "--csv", str(TOY), "--label-col", "target", "--eps", "2", "--s", "2",
             "--p", "2", "--t", "2", "--seed", "11", "--out", str(model_path)],
            capsys,
        )
        assert code == 0
        # build a feature file in [0,1]
        feats = tmp_path / "features.csv"
        rng = np.random.default_rng(0)
        with open(feats, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["f1", "f2", "f3", "f4", "f5"])
            for row in rng.random((20, 5)):
                w.writerow([f"{v:.6f}" for v in row])
        preds_path = tmp_path / "preds.csv"
        code, _, _ = run(
            ["predict", "--model", str(model_path), "--csv", str(feats), "--out", str(preds_path)],
            capsys,
        )
        assert code == 0
        with open(preds_path) as fh:
            preds = [float(r["prediction"]) for r in csv.DictReader(fh)]
        assert len(preds) == 20
        doc = json.loads(model_path.read_text())
        m = doc["metadata"]["m_bound"]
        assert all(abs(p) <= m for p in preds)
        assert doc["metadata"]["epsilon"] == 2.0
        assert doc["metadata"]["s"] == 2

    def test_out_of_domain_features_are_data_error(self, tmp_path, capsys):
        model_path = tmp_path / "model.json"
        run(
            ["fit", "--csv", str(TOY), "--label-col", "target", "--eps", "2", "--s", "1",
             "--p", "1", "--t", "1", "--out", str(model_path)],
            capsys,
        )
        feats = tmp_path / "bad.csv"
        feats.write_text("f1,f2,f3,f4,f5\n2.0,0.1,0.1,0.1,0.1\n")
        code, _, _ = run(
            ["predict", "--model", str(model_path), "--csv", str(feats), "--out", str(tmp_path / "p.csv")],
            capsys,
        )
        assert code == 2

    def test_fit_deterministic(self, tmp_path, capsys):
        outs = []
        for name in ("m1.json", "m2.json"):
            path = tmp_path / name
            run(
                ["fit", "--csv", str(TOY), "--label-col", "target", "--eps", "2", "--s", "1",
                 "--p", "2", "--t", "2", "--seed", "5", "--out", str(path)],
                capsys,
            )
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]
