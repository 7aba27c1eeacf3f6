import json
import os

import numpy as np
import pytest

from tograsp.datagen import DatasetConfig, build_dataset, load_mesh_bundle, load_split
from tograsp.evalcli import (
    EvalReport,
    MissingModel,
    RunConfig,
    evaluate,
    layer_probes,
    model_probes,
    pair_reports,
    run_inference,
)
from tograsp.evalcli.cli import main
from tograsp.models import (
    IncompatibleTask,
    NoValidGrasp,
    TogTModel,
)
from tograsp.voxelgrid import PointCloud, load_point_cloud


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("ds"))
    cfg = DatasetConfig(categories=("bottle", "knife", "spoon"), n_train=6,
                        n_test=4, n_heldout=2, n_train_meshes=2,
                        n_test_meshes=1, seed=3)
    build_dataset(root, cfg)
    return root


@pytest.fixture(scope="module")
def zero_togt():
    model = TogTModel(seed=0, grid=50, channels=(2,), hidden=8)
    for net in (model.trunk, model.head):
        for k in net.params:
            net.params[k][...] = 0.0
    model.trained = True
    return model


@pytest.fixture(scope="module")
def knife_cloud(dataset):
    return load_point_cloud(os.path.join(dataset, "meshes", "knife_000.xyz"))


# ---------------------------------------------------------------------------
# report types
# ---------------------------------------------------------------------------


def test_run_config_validation_and_roundtrip():
    cfg = RunConfig(seed=4, dataset="d", categories=["knife"],
                    workspace=(0, 0, 0, 1, 1, 1))
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        RunConfig(suit_threshold=0.0)
    with pytest.raises(ValueError):
        RunConfig(stab_threshold=1.0)
    with pytest.raises(ValueError):
        RunConfig(workspace=(1, 2, 3))


def test_report_averages_recomputed():
    rep = EvalReport(rows={
        "bottle": {"obj_pos_mae": 2.0, "f1": 1.0},
        "knife": {"obj_pos_mae": 4.0, "f1": 0.5},
    })
    assert rep.averages() == {"obj_pos_mae": 3.0, "f1": 0.75}
    rep.rows["knife"]["obj_pos_mae"] = 8.0
    assert rep.averages()["obj_pos_mae"] == 5.0
    d = rep.to_dict()
    assert d["avg"]["obj_pos_mae"] == 5.0


def test_report_text_table_layout():
    rep = EvalReport(rows={
        "bottle": {"obj_pos_mae": 2.0},
        "knife": {"obj_pos_mae": 10.123456},
    })
    text = rep.to_text()
    lines = text.strip("\n").split("\n")
    assert len(lines) == 4
    assert lines[0].split() == ["category", "obj_pos_mae"]
    assert lines[-1].split()[0] == "avg"
    assert len({len(l) for l in lines}) == 1
    assert "10.123" in lines[2]


def test_report_save_writes_json_and_text(tmp_path):
    rep = EvalReport(rows={"knife": {"obj_pos_mae": 1.0}}, meta={"split": "test"})
    rep.save(str(tmp_path))
    loaded = json.load(open(tmp_path / "report.json"))
    assert loaded["rows"]["knife"]["obj_pos_mae"] == 1.0
    assert loaded["meta"]["split"] == "test"
    assert (tmp_path / "report.txt").read_text().startswith("category")


def test_pair_reports_direction_signs():
    a = EvalReport(rows={"knife": {"obj_pos_mae": 1.0, "f1": 0.5, "top1": 0.5}})
    b = EvalReport(rows={"knife": {"obj_pos_mae": 2.0, "f1": 0.5, "top1": 0.25}})
    pairs = pair_reports(a, b)
    assert pairs["obj_pos_mae"]["direction"] == -1
    assert pairs["f1"]["direction"] == 0
    assert pairs["top1"]["direction"] == 1
    assert pairs["obj_pos_mae"]["with"] == 1.0
    assert pairs["obj_pos_mae"]["without"] == 2.0


def test_evaluate_rejects_bad_inputs(dataset):
    data = load_split(dataset, "test")
    with pytest.raises(MissingModel):
        evaluate({}, data)
    with pytest.raises(MissingModel):
        evaluate({"detector": "oracle"}, data)
    with pytest.raises(ValueError):
        evaluate({"hand": "oracle"}, {})
    with pytest.raises(ValueError):
        evaluate({"hand": "oracle"}, data, hand_conditioning="noisy")
    with pytest.raises(MissingModel):
        evaluate({"object": {}}, data)


def test_oracle_evaluation_is_exactly_zero(dataset):
    data = load_split(dataset, "test")
    bundle = load_mesh_bundle(dataset)
    rep = evaluate({"hand": "oracle", "object": "oracle", "siamese": "oracle"},
                   data, mesh_bundle=bundle)
    assert set(rep.rows) == {"bottle", "knife", "spoon"}
    for row in rep.rows.values():
        assert row["obj_pos_mae"] == 0.0
        assert row["obj_rot_mae"] == 0.0
        assert row["obj_rot_mae_naive"] == 0.0
        assert row["hand_pos_mae"] == 0.0
        assert row["hand_rot_mae"] == 0.0
        assert row["joint_mae"] == 0.0
        assert row["hp_error"] == 0.0
        assert row["f1"] == 1.0
        assert row["top1"] == 1.0
    assert rep.meta["n_per_category"] == {"bottle": 4, "knife": 4, "spoon": 4}


def test_retrieval_oracle_requires_bundle(dataset):
    data = load_split(dataset, "test", ("knife",))
    with pytest.raises(ValueError):
        evaluate({"siamese": "oracle"}, data, mesh_bundle=None)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def test_inference_checks_task_before_anything(zero_togt):
    tiny = PointCloud(points=np.zeros((3, 3)))
    with pytest.raises(IncompatibleTask):
        run_inference(tiny, "knife", "pour", zero_togt)


def test_inference_needs_enough_points(zero_togt):
    small = PointCloud(points=np.random.default_rng(0).normal(size=(49, 3)))
    with pytest.raises(ValueError):
        run_inference(small, "knife", "cut", zero_togt)


def test_inference_on_knife_cloud(zero_togt, knife_cloud):
    res = run_inference(knife_cloud, "knife", "cut", zero_togt,
                        n_candidates=40, seed=5)
    assert len(res["grasps"]) == 40
    # zero weights: every suitability is exactly 0.5
    assert np.all(res["suitability"] == 0.5)
    assert res["stability"].shape == (40,)
    chosen = res["chosen"]
    assert np.array_equal(chosen.anchor, res["grasps"][res["chosen_index"]].anchor)
    assert res["stability"][res["chosen_index"]] >= 0.5
    # all candidates pass the suitability bar, so the top of the ranking
    # is the selected grasp
    assert res["order"][0] == res["chosen_index"]
    assert res["stability"][res["chosen_index"]] == res["stability"].max()


def test_inference_deterministic(zero_togt, knife_cloud):
    a = run_inference(knife_cloud, "knife", "cut", zero_togt, n_candidates=25, seed=9)
    b = run_inference(knife_cloud, "knife", "cut", zero_togt, n_candidates=25, seed=9)
    assert np.array_equal(a["anchor_indices"], b["anchor_indices"])
    assert np.array_equal(a["suitability"], b["suitability"])
    assert np.array_equal(a["stability"], b["stability"])
    assert np.array_equal(a["order"], b["order"])
    assert a["chosen_index"] == b["chosen_index"]


def test_inference_accepts_path_and_estimates_normals(zero_togt, dataset, knife_cloud):
    path = os.path.join(dataset, "meshes", "knife_000.xyz")
    res_a = run_inference(path, "knife", "cut", zero_togt, n_candidates=10, seed=1)
    bare = PointCloud(points=knife_cloud.points)
    res_b = run_inference(bare, "knife", "cut", zero_togt, n_candidates=10, seed=1)
    assert len(res_a["grasps"]) == len(res_b["grasps"]) == 10
    for g in res_b["grasps"]:
        assert np.isfinite(g.normal).all()


def test_inference_workspace_filter(zero_togt, knife_cloud):
    pts = knife_cloud.points
    box = (pts[:, 0].min() - 1, pts[:, 1].min() - 1, pts[:, 2].min() - 1,
           pts[:, 0].min() + 30.0, pts[:, 1].max() + 1, pts[:, 2].max() + 1)
    res = run_inference(knife_cloud, "knife", "cut", zero_togt,
                        n_candidates=20, seed=2, workspace=box)
    for g in res["grasps"]:
        assert g.anchor[0] <= pts[:, 0].min() + 30.0
    far = (1000.0, 1000.0, 1000.0, 1001.0, 1001.0, 1001.0)
    with pytest.raises(NoValidGrasp):
        run_inference(knife_cloud, "knife", "cut", zero_togt,
                      n_candidates=20, seed=2, workspace=far)


# ---------------------------------------------------------------------------
# gradient probes
# ---------------------------------------------------------------------------


def test_probe_coverage():
    layers = layer_probes()
    assert set(layers) == {"dense", "conv2d", "conv3d", "relu", "sigmoid",
                           "flatten", "concat", "dropout"}
    heads = model_probes()
    assert set(heads) == {
        "hand_pos_initial", "hand_pos_refined",
        "hand_pose_initial", "hand_pose_refined",
        "object_pos", "object_rot",
        "siamese_image", "siamese_mesh",
        "togt_trunk", "togt_head",
    }
    for net, inputs, out_id in {**layers, **heads}.values():
        out = net.forward(inputs)
        assert out_id in out


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def cli_tree(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    d = str(root / "d")
    m = str(root / "m")
    rc = main(["gen-data", "--out", d, "--seed", "7", "--n", "6", "--n-test", "3",
               "--train-meshes", "2", "--test-meshes", "1"])
    assert rc == 0
    for extra in ([], ["--no-object"]):
        rc = main(["train-hand", "--dataset", d, "--out", m, "--steps", "8",
                   "--refine-steps", "5", "--seed", "1"] + extra)
        assert rc == 0
    for cond in ("hpc", "none"):
        for cat in ("bottle", "knife", "spoon"):
            rc = main(["train-object", "--dataset", d, "--out", m, "--category",
                       cat, "--cond", cond, "--steps", "8", "--seed", "1"])
            assert rc == 0
    rc = main(["train-embed", "--dataset", d, "--out", m, "--steps", "6",
               "--seed", "1"])
    assert rc == 0
    rc = main(["train-togt", "--dataset", d, "--out", m, "--steps", "4",
               "--grasps-per-mesh", "10", "--seed", "1"])
    assert rc == 0
    return d, m, str(root)


def test_cli_gen_data_record_count(cli_tree):
    d, m, root = cli_tree
    lines = open(os.path.join(d, "manifest.jsonl")).read().splitlines()
    assert len(lines) == 3 * (6 + 3)
    run = json.load(open(os.path.join(d, "run.json")))
    assert run["command"] == "gen-data"
    assert run["seed"] == 7
    assert run["config"]["n"] == 6
    assert set(run["versions"]) == {"python", "numpy", "tograsp"}


def test_cli_model_store_layout(cli_tree):
    d, m, root = cli_tree
    for name in ("hand", "hand_noobj", "object_knife_hpc", "object_knife_none",
                 "siamese", "togt"):
        assert os.path.isdir(os.path.join(m, name)), name
        assert os.path.exists(os.path.join(m, name, "manifest.json"))
    assert os.path.exists(os.path.join(m, "store.npz"))


def test_cli_eval_writes_report(cli_tree, tmp_path):
    d, m, root = cli_tree
    out = str(tmp_path / "e")
    rc = main(["eval", "--dataset", d, "--models", m, "--out", out,
               "--split", "test"])
    assert rc == 0
    rep = json.load(open(os.path.join(out, "report.json")))
    assert set(rep["rows"]) == {"bottle", "knife", "spoon"}
    row = rep["rows"]["knife"]
    for key in ("obj_pos_mae", "obj_rot_mae", "obj_rot_mae_naive",
                "hand_pos_mae", "hand_rot_mae", "joint_mae", "hp_error",
                "f1", "top1"):
        assert key in row
        assert np.isfinite(row[key])
    assert os.path.exists(os.path.join(out, "report.txt"))
    assert os.path.exists(os.path.join(out, "run.json"))


def test_cli_eval_oracle_zero(cli_tree, tmp_path):
    d, m, root = cli_tree
    out = str(tmp_path / "eo")
    rc = main(["eval", "--dataset", d, "--out", out, "--oracle",
               "--split", "train"])
    assert rc == 0
    rep = json.load(open(os.path.join(out, "report.json")))
    for k, v in rep["avg"].items():
        assert v == (1.0 if k in ("f1", "top1") else 0.0), (k, v)


def test_cli_eval_ablation_pair(cli_tree, tmp_path):
    d, m, root = cli_tree
    out = str(tmp_path / "ab")
    rc = main(["eval", "--dataset", d, "--models", m, "--out", out,
               "--split", "test", "--ablation", "hand"])
    assert rc == 0
    blob = json.load(open(os.path.join(out, "ablation.json")))
    assert blob["ablation"] == "hand"
    for metric, pair in blob["pairs"].items():
        assert pair["direction"] in (-1, 0, 1)
        assert {"with", "without", "direction"} <= set(pair)
    assert os.path.exists(os.path.join(out, "report_with.json"))
    assert os.path.exists(os.path.join(out, "report_without.txt"))


def test_cli_eval_object_ablation(cli_tree, tmp_path):
    d, m, root = cli_tree
    out = str(tmp_path / "abo")
    rc = main(["eval", "--dataset", d, "--models", m, "--out", out,
               "--split", "test", "--category", "knife",
               "--ablation", "object"])
    assert rc == 0
    blob = json.load(open(os.path.join(out, "ablation.json")))
    assert set(blob["pairs"]) == {"obj_pos_mae", "obj_rot_mae", "obj_rot_mae_naive"}


def test_cli_infer_writes_grasps(cli_tree, tmp_path):
    d, m, root = cli_tree
    out = str(tmp_path / "i")
    rc = main(["infer", "--cloud", os.path.join(d, "meshes", "knife_000.xyz"),
               "--category", "knife", "--task", "cut", "--models", m,
               "--out", out, "--candidates", "30", "--seed", "5"])
    if rc == 0:
        blob = json.load(open(os.path.join(out, "grasps.json")))
        assert len(blob["grasps"]) == 30
        assert 0 <= blob["chosen_index"] < 30
        chosen = blob["grasps"][blob["chosen_index"]]
        assert chosen["stability"] >= 0.5
    else:
        # a barely trained net may mark nothing suitable; that must
        # surface as the runtime exit code, not a crash
        assert rc == 2


def test_cli_infer_incompatible_task(cli_tree, tmp_path, capsys):
    d, m, root = cli_tree
    rc = main(["infer", "--cloud", os.path.join(d, "meshes", "knife_000.xyz"),
               "--category", "knife", "--task", "pour", "--models", m,
               "--out", str(tmp_path / "i2")])
    assert rc == 2
    assert "pour" in capsys.readouterr().err


def test_cli_usage_errors(capsys):
    assert main(["gen-data", "--bogus", "x", "--out", "y"]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err
    assert main([]) == 1
    assert main(["no-such-command"]) == 1


def test_cli_eval_without_models_is_runtime_error(cli_tree, tmp_path, capsys):
    d, m, root = cli_tree
    rc = main(["eval", "--dataset", d, "--models", str(tmp_path / "nothing"),
               "--out", str(tmp_path / "e2")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_cli_missing_required_flag(capsys):
    assert main(["train-hand", "--out", "x"]) == 1
    assert "usage:" in capsys.readouterr().err
