import json
import os

import numpy as np
import pytest
import yaml

from grfpred.cli import main
from helpers import make_dataset


def write_dataset_csvs(tmp_path, n=24, p=5, m1=4, m2=6, seed=0):
    data = make_dataset(n, p, m1, m2, n_sub=3, seed=seed)
    gpath = tmp_path / "geno.csv"
    lines = ["line_id," + ",".join(data.genotypes.marker_ids)]
    seen = set()
    for lid, row in zip(data.genotypes.line_ids, data.genotypes.values):
        if lid in seen:
            continue
        seen.add(lid)
        lines.append(lid + "," + ",".join(str(int(v)) for v in row))
    gpath.write_text("\n".join(lines) + "\n")

    ppath = tmp_path / "pheno.csv"
    rows = ["obs_id,line_id,value"]
    for i in range(n):
        rows.append(f"o{i},{data.genotype_group[i]},{float(data.y[i])!r}")
    ppath.write_text("\n".join(rows) + "\n")

    lpath = tmp_path / "layout.csv"
    rows = ["obs_id,row,col"]
    for i in range(n):
        rows.append(f"o{i},{data.layout.rows[i]},{data.layout.cols[i]}")
    lpath.write_text("\n".join(rows) + "\n")

    spath = tmp_path / "subpop.csv"
    rows = ["obs_id,subpop_label"]
    for i in range(n):
        rows.append(f"o{i},{data.subpop[i]}")
    spath.write_text("\n".join(rows) + "\n")
    return dict(genotype=str(gpath), phenotype=str(ppath), layout=str(lpath),
                subpop=str(spath))


def base_config(paths, out_dir, **extra):
    cfg = {
        "seed": 7,
        "threads": 1,
        "output_dir": str(out_dir),
        "data": dict(paths),
        "model": {
            "components": ["genotype", "subpop", "spatial"],
            "beta00": 0.001,
            "starts": 1,
            "max_evals": 80,
            "tol": 1e-6,
        },
    }
    cfg.update(extra)
    return cfg


def run_cli(tmp_path, command, cfg, extra_args=()):
    cfg_path = tmp_path / f"{command.replace('-', '_')}_config.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg))
    return main([command, "--config", str(cfg_path), *extra_args])


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture
def paths(tmp_path):
    return write_dataset_csvs(tmp_path)


class TestFitCommand:
    def test_smoke_and_determinism(self, tmp_path, paths):
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        cfg = base_config(paths, out1)
        assert run_cli(tmp_path, "fit", cfg) == 0
        doc = json.loads((out1 / "fit.json").read_text())
        assert np.isfinite(doc["loglik"])
        assert doc["gamma_hat"] >= 0.0
        assert set(doc["params"]) == {
            "sigma_g", "sigma_b", "sigma_s", "sigma_eps", "tau", "theta", "mu"
        }
        # rerun into another directory: identical bytes
        assert run_cli(tmp_path, "fit", cfg, ("--output-dir", str(out2))) == 0
        assert read_bytes(out1 / "fit.json") == read_bytes(out2 / "fit.json")

    def test_schema_error_exit_2(self, tmp_path, paths):
        cfg = base_config(paths, tmp_path / "o")
        cfg["fit"] = {"train_fraction": 0.8}
        assert run_cli(tmp_path, "fit", cfg) == 2

    def test_missing_data_file_exit_4(self, tmp_path, paths):
        cfg = base_config(dict(paths, phenotype=str(tmp_path / "nope.csv")), tmp_path / "o")
        assert run_cli(tmp_path, "fit", cfg) == 4

    def test_kernel_dump(self, tmp_path, paths):
        out = tmp_path / "odump"
        cfg = base_config(paths, out, fit={"dump_kernels": True})
        assert run_cli(tmp_path, "fit", cfg) == 0
        assert (out / "kernel_genotype.csv").exists()
        assert (out / "kernel_spatial.csv").exists()


class TestPredictCommand:
    def test_round_trip(self, tmp_path, paths):
        out = tmp_path / "fit_out"
        cfg = base_config(paths, out)
        assert run_cli(tmp_path, "fit", cfg) == 0
        qg = tmp_path / "query_geno.csv"
        qg.write_text("line_id,M000,M001,M002,M003,M004\nq1,0,1,0,1,0\nq2,1,1,0,0,1\n")
        ql = tmp_path / "query_layout.csv"
        ql.write_text("obs_id,row,col\nq1,1,1\nq2,2,3\n")
        qs = tmp_path / "query_subpop.csv"
        qs.write_text("obs_id,subpop_label\nq1,S0\nq2,S1\n")
        pcfg = base_config(
            paths, tmp_path / "pred_out",
            predict={
                "fit_json": str(out / "fit.json"),
                "genotype": str(qg),
                "layout": str(ql),
                "subpop": str(qs),
                "target": "phenotype",
            },
        )
        assert run_cli(tmp_path, "predict", pcfg) == 0
        rows = (tmp_path / "pred_out" / "predictions.csv").read_text().splitlines()
        assert rows[0].startswith("#")
        assert "q1" in rows[3] or "q1" in rows[2]

    def test_genetic_target_flag_override(self, tmp_path, paths):
        out = tmp_path / "fit_out2"
        cfg = base_config(paths, out)
        run_cli(tmp_path, "fit", cfg)
        qg = tmp_path / "qg.csv"
        qg.write_text("line_id,M000,M001,M002,M003,M004\nq1,0,1,0,1,0\nq2,1,0,1,0,1\n")
        pcfg = base_config(
            paths, tmp_path / "pred_out2",
            predict={
                "fit_json": str(out / "fit.json"),
                "genotype": str(qg),
                "subpop": None,
                "layout": None,
                "target": "phenotype",
            },
        )
        # genetic_value needs no plot coordinates for the query points
        assert run_cli(tmp_path, "predict", pcfg, ("--target", "genetic_value")) == 0
        content = (tmp_path / "pred_out2" / "predictions.csv").read_text()
        assert "genetic_value" in content


class TestAdjustCommand:
    @pytest.mark.parametrize("method", ["rc", "mvng"])
    def test_writes_adjusted_csv(self, tmp_path, paths, method):
        out = tmp_path / f"adj_{method}"
        cfg = base_config(paths, out, adjust={"method": method})
        assert run_cli(tmp_path, "adjust", cfg) == 0
        lines = (out / f"adjusted_{method}.csv").read_text().splitlines()
        assert lines[2] == "obs_id,y,y_hat,method"
        assert len(lines) == 3 + 24

    def test_method_flag_override(self, tmp_path, paths):
        out = tmp_path / "adj_flag"
        cfg = base_config(paths, out, adjust={"method": "rc"})
        assert run_cli(tmp_path, "adjust", cfg, ("--method", "mvng")) == 0
        assert (out / "adjusted_mvng.csv").exists()


class TestCvCommand:
    def test_five_replications(self, tmp_path, paths):
        out = tmp_path / "cv_out"
        cfg = base_config(
            paths, out,
            cv={
                "methods": ["grf_minus_bs", "mvng_rr"],
                "mode": "random",
                "train_fraction": 0.75,
                "replications": 5,
            },
        )
        assert run_cli(tmp_path, "cv", cfg) == 0
        rows = [l for l in (out / "cv_metrics.csv").read_text().splitlines()
                if l and not l.startswith("#")]
        assert len(rows) == 1 + 5 * 2  # header + reps x methods
        agg = [l for l in (out / "cv_aggregate.csv").read_text().splitlines()
               if l and not l.startswith("#")]
        assert len(agg) == 3
        meta = json.loads((out / "cv_meta.json").read_text())
        assert meta["replications"] == 5

    def test_grouped_without_labels_exit_2(self, tmp_path, paths):
        cfg = base_config(
            paths, tmp_path / "cv_bad",
            cv={"methods": ["grf_minus_bs"], "mode": "grouped", "group_by": "none",
                "replications": 2},
        )
        assert run_cli(tmp_path, "cv", cfg) == 2

    def test_determinism(self, tmp_path, paths):
        cfg_base = dict(
            cv={
                "methods": ["grf_minus_bs"],
                "mode": "random",
                "train_fraction": 0.75,
                "replications": 3,
            }
        )
        out1, out2 = tmp_path / "cv1", tmp_path / "cv2"
        assert run_cli(tmp_path, "cv", base_config(paths, out1, **cfg_base)) == 0
        assert run_cli(tmp_path, "cv", base_config(paths, out2, **cfg_base)) == 0
        assert read_bytes(out1 / "cv_metrics.csv") == read_bytes(out2 / "cv_metrics.csv")
        assert read_bytes(out1 / "cv_aggregate.csv") == read_bytes(out2 / "cv_aggregate.csv")

    def test_unknown_method_exit_2(self, tmp_path, paths):
        cfg = base_config(paths, tmp_path / "cv_u",
                          cv={"methods": ["kriging"], "replications": 1})
        assert run_cli(tmp_path, "cv", cfg) == 2

    def test_ib_requires_design_file(self, tmp_path, paths):
        cfg = base_config(paths, tmp_path / "cv_ib0",
                          cv={"methods": ["ib"], "replications": 1})
        assert run_cli(tmp_path, "cv", cfg) == 2
        design = tmp_path / "design.csv"
        rows = ["obs_id,rep,block"]
        for i in range(24):
            rows.append(f"o{i},r{i // 12},b{(i // 6) % 2}")
        design.write_text("\n".join(rows) + "\n")
        out = tmp_path / "cv_ib1"
        cfg = base_config(paths, out,
                          cv={"methods": ["ib"], "replications": 2,
                              "design": str(design)})
        assert run_cli(tmp_path, "cv", cfg) == 0
        lines = [l for l in (out / "cv_metrics.csv").read_text().splitlines()
                 if l and not l.startswith("#")]
        assert len(lines) == 1 + 2


class TestSimulateCommand:
    def _sim_cfg(self, paths, out, **over):
        sim = {
            "inline_fit": True,
            "c": 1.0,
            "replications": 3,
            "l_max": 10,
            "methods": ["grf", "grf_minus_s"],
        }
        sim.update(over)
        return base_config(paths, out, simulate=sim)

    def test_curve_rows(self, tmp_path, paths):
        out = tmp_path / "sim_out"
        assert run_cli(tmp_path, "simulate", self._sim_cfg(paths, out)) == 0
        rows = [l for l in (out / "sim_topl.csv").read_text().splitlines()
                if l and not l.startswith("#")]
        assert len(rows) == 1 + 10 * 2  # header + l rows per method
        metrics = [l for l in (out / "sim_metrics.csv").read_text().splitlines()
                   if l and not l.startswith("#")]
        assert len(metrics) == 1 + 3 * 2

    def test_missing_fit_json_exit_2(self, tmp_path, paths):
        cfg = self._sim_cfg(paths, tmp_path / "sim_bad", inline_fit=False, fit_json=None)
        assert run_cli(tmp_path, "simulate", cfg) == 2

    def test_fit_json_input(self, tmp_path, paths):
        fit_out = tmp_path / "fit_for_sim"
        assert run_cli(tmp_path, "fit", base_config(paths, fit_out)) == 0
        out = tmp_path / "sim_from_fit"
        cfg = self._sim_cfg(paths, out, inline_fit=False,
                            fit_json=str(fit_out / "fit.json"))
        assert run_cli(tmp_path, "simulate", cfg) == 0
        assert (out / "sim_topl.csv").exists()

    def test_determinism(self, tmp_path, paths):
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        assert run_cli(tmp_path, "simulate", self._sim_cfg(paths, out1)) == 0
        assert run_cli(tmp_path, "simulate", self._sim_cfg(paths, out2)) == 0
        for name in ("sim_metrics.csv", "sim_topl.csv"):
            assert read_bytes(out1 / name) == read_bytes(out2 / name)


class TestRankReportCommand:
    def _make_sim_outputs(self, tmp_path, paths):
        out = tmp_path / "sim_for_report"
        cfg = base_config(
            paths, out,
            simulate={
                "inline_fit": True,
                "c": 1.0,
                "replications": 2,
                "l_max": 10,
                "methods": ["grf", "grf_minus_s"],
            },
        )
        assert run_cli(tmp_path, "simulate", cfg) == 0
        return out

    def test_renders_figures_and_summary(self, tmp_path, paths):
        sim_out = self._make_sim_outputs(tmp_path, paths)
        out = tmp_path / "report_out"
        cfg = {
            "seed": 7,
            "threads": 1,
            "output_dir": str(out),
            "report": {
                "curves": [str(sim_out / "sim_topl.csv")],
                "metrics": [str(sim_out / "sim_metrics.csv")],
                "formats": ["png"],
            },
        }
        assert run_cli(tmp_path, "rank-report", cfg) == 0
        assert (out / "rank_topl.png").stat().st_size > 0
        assert (out / "rank_accuracy.png").stat().st_size > 0
        summary = (out / "rank_summary.csv").read_text().splitlines()
        assert summary[2].startswith("method,")

    def test_byte_reproducible(self, tmp_path, paths):
        sim_out = self._make_sim_outputs(tmp_path, paths)
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            cfg = {
                "seed": 7,
                "threads": 1,
                "output_dir": str(out),
                "report": {"curves": [str(sim_out / "sim_topl.csv")],
                           "metrics": [str(sim_out / "sim_metrics.csv")],
                           "formats": ["png"]},
            }
            assert run_cli(tmp_path, "rank-report", cfg) == 0
            outs.append(out)
        for name in ("rank_topl.png", "rank_accuracy.png", "rank_summary.csv"):
            assert read_bytes(outs[0] / name) == read_bytes(outs[1] / name)


def test_config_hash_stable_across_output_dir(tmp_path, paths):
    from grfpred.config import validate_config
    from grfpred.output import config_hash

    cfg1 = validate_config(base_config(paths, tmp_path / "a"), "fit")
    cfg2 = validate_config(base_config(paths, tmp_path / "b"), "fit")
    assert config_hash(cfg1) == config_hash(cfg2)
    cfg3 = validate_config(dict(base_config(paths, tmp_path / "a"), seed=99), "fit")
    assert config_hash(cfg1) != config_hash(cfg3)


def test_unknown_top_level_key_exit_2(tmp_path, paths):
    cfg = base_config(paths, tmp_path / "o")
    cfg["bogus"] = 1
    assert run_cli(tmp_path, "fit", cfg) == 2


def test_one_document_drives_multiple_commands(tmp_path, paths):
    # sibling command sections coexist; each command reads its own
    out = tmp_path / "multi"
    cfg = base_config(
        paths, out,
        adjust={"method": "mvng"},
        simulate={"inline_fit": True, "c": 1.0, "replications": 2,
                  "l_max": 5, "methods": ["grf_minus_bs"]},
    )
    assert run_cli(tmp_path, "fit", cfg) == 0
    assert run_cli(tmp_path, "adjust", cfg) == 0
    assert run_cli(tmp_path, "simulate", cfg) == 0
    assert (out / "fit.json").exists()
    assert (out / "adjusted_mvng.csv").exists()
    assert (out / "sim_topl.csv").exists()


def test_inputs_never_mutated(tmp_path, paths):
    before = {k: read_bytes(v) for k, v in paths.items()}
    cfg = base_config(paths, tmp_path / "im")
    assert run_cli(tmp_path, "fit", cfg) == 0
    after = {k: read_bytes(v) for k, v in paths.items()}
    assert before == after
