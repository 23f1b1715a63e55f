import json

import numpy as np
import pytest

from navseg.cli import main
from navseg.costmap import CostGrid, load_path_csv
from navseg.grouping import load_group_map
from navseg.io import read_gtsr, read_pgm, write_gtsr, write_pgm

GM = load_group_map()


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("trained")
    (root / "cfg.json").write_text(json.dumps({
        "max_iters": 2, "image_size": 32, "crop_size": 32, "n_train": 2, "batch_size": 2,
        "head_width": 8, "out_channels": 16}))
    assert main(["train", "--config", str(root / "cfg.json"), "--out", str(root / "run")]) == 0
    return root / "run"


def test_train_outputs(trained):
    lines = (trained / "history.jsonl").read_text().splitlines()
    assert [json.loads(line)["iter"] for line in lines] == [0, 1]
    assert (trained / "checkpoint" / "manifest.json").exists()
    assert json.loads((trained / "summary.json").read_text())["iterations"] == 2


def test_synth_infer_eval_round_trip(tmp_path, capsys, trained):
    assert run(capsys, "synth", "--seed", 1, "--n", 2, "--hw", "32,32", "--out", tmp_path / "ds")[0] == 0
    images = sorted((tmp_path / "ds" / "images").iterdir())
    assert len(images) == 2
    preds = tmp_path / "preds"
    preds.mkdir()
    for img in images:
        code, _, _ = run(capsys, "infer", "--ckpt", trained / "checkpoint", "--image", img,
                         "--out", preds / (img.stem + ".pgm"), "--probs", tmp_path / (img.stem + ".gtsr"))
        assert code == 0
    probs = read_gtsr(tmp_path / (images[0].stem + ".gtsr"))
    assert probs.shape == (6, 32, 32)
    np.testing.assert_allclose(probs.sum(axis=0), 1.0, atol=1e-5)
    np.testing.assert_array_equal(read_pgm(preds / (images[0].stem + ".pgm")), probs.argmax(axis=0))

    # predictions scored against themselves give a perfect report
    code, out, _ = run(capsys, "eval", "--pred", preds, "--gt", preds, "--json", "--out", tmp_path / "r.json")
    assert code == 0
    rep = json.loads(out)
    assert rep["miou"] == 1.0 and rep["aacc"] == 1.0
    assert json.loads((tmp_path / "r.json").read_text()) == rep
    code, out, _ = run(capsys, "eval", "--pred", preds, "--gt", tmp_path / "ds" / "labels")
    assert code == 0 and "miou" in out


def test_regroup_all_concrete(tmp_path, capsys):
    concrete = GM.class_names.index("concrete")
    write_pgm(tmp_path / "fine.pgm", np.full((4, 6), concrete))
    assert run(capsys, "regroup", "--in", tmp_path / "fine.pgm", "--out", tmp_path / "g.pgm")[0] == 0
    assert np.all(read_pgm(tmp_path / "g.pgm") == 0)


def test_groupeffect(tmp_path, capsys):
    for d in ("p", "g"):
        (tmp_path / d).mkdir()
    grass, dirt = GM.class_names.index("grass"), GM.class_names.index("dirt")
    write_pgm(tmp_path / "g" / "a.pgm", np.array([[grass, dirt]]))
    write_pgm(tmp_path / "p" / "a.pgm", np.array([[dirt, grass]]))
    code, out, _ = run(capsys, "groupeffect", "--pred", tmp_path / "p", "--gt", tmp_path / "g", "--json")
    rough = json.loads(out)[1]
    assert code == 0 and rough["fine_acc"] == 0.0 and rough["group_acc"] == 1.0


def test_flops_ratio(capsys):
    code, out, _ = run(capsys, "flops", "--hw", "64,64")
    rows = [line.split() for line in out.splitlines()[1:]]
    col = out.splitlines()[0].split().index("attention")
    att = {int(r[0]): int(r[col]) for r in rows}
    assert code == 0 and att[8] == 16 * att[16] == 256 * att[32]


def test_costmap_and_plan(tmp_path, capsys):
    labels = np.zeros((32, 32), dtype=np.uint8)
    labels[:, 12:20] = 3      # forbidden strip
    labels[28:, :] = 0        # smooth crossing at the bottom
    write_pgm(tmp_path / "pred.pgm", labels)
    write_gtsr(tmp_path / "elev.gtsr", np.zeros((8, 8)))
    (tmp_path / "hom.json").write_text(json.dumps({"matrix": [0.25, 0, 0, 0, 0.25, 0, 0, 0, 1]}))
    (tmp_path / "costs.json").write_text(json.dumps(
        {"smooth": 0, "rough": 2, "bumpy": 5, "forbidden": "obstacle", "obstacle": "obstacle",
         "background": 8, "unknown": 8}))
    code, out, _ = run(capsys, "costmap", "--pred", tmp_path / "pred.pgm", "--hom", tmp_path / "hom.json",
                       "--elev", tmp_path / "elev.gtsr", "--costs", tmp_path / "costs.json",
                       "--out", tmp_path / "grid")
    assert code == 0 and json.loads(out)["blocked_cells"] == 14
    grid = CostGrid.load(tmp_path / "grid")
    assert grid.blocked()[:7, 3:5].all() and not grid.blocked()[7].any()

    code, out, _ = run(capsys, "plan", "--grid", tmp_path / "grid", "--start", "0,0", "--goal", "0,7",
                       "--out", tmp_path / "path.csv")
    rep = json.loads(out)
    path = load_path_csv(tmp_path / "path.csv")
    assert code == 0 and rep["found"] and path[0] == (0, 0) and path[-1] == (0, 7)
    assert rep["roughness_m"] == 0.0 and rep["selection_pct"] == 100.0
    assert not any(grid.blocked()[c] for c in path)


def test_plan_no_path_exit_code(tmp_path, capsys):
    costs = np.zeros((3, 3))
    costs[:, 1] = 1e6
    from navseg.costmap import GridSpec
    CostGrid(costs, GridSpec(3, 3)).save(tmp_path / "g")
    code, out, _ = run(capsys, "plan", "--grid", tmp_path / "g", "--start", "0,0", "--goal", "0,2",
                       "--out", tmp_path / "p.csv")
    assert code == 3 and json.loads(out) == {"found": False}
    assert not (tmp_path / "p.csv").exists()


@pytest.mark.parametrize("argv", [
    ["infer", "--ckpt", "{t}/none", "--image", "{t}/x.ppm", "--out", "{t}/out.pgm"],
    ["regroup", "--in", "{t}/bad.pgm", "--out", "{t}/out.pgm"],
    ["eval", "--pred", "{t}/none", "--gt", "{t}/none"],
    ["train", "--config", "{t}/bad.json", "--out", "{t}/out"],
    ["costmap", "--pred", "{t}/bad.pgm", "--hom", "{t}/bad.json", "--elev", "{t}/e", "--out", "{t}/out"],
    ["plan", "--grid", "{t}/none", "--start", "0,0", "--goal", "1,1", "--out", "{t}/out.csv"],
    ["plan", "--grid", "{t}/none", "--start", "0", "--goal", "1,1", "--out", "{t}/out.csv"],
    ["flops", "--hw", "60,64"],
])
def test_errors_are_single_line_without_outputs(tmp_path, capsys, argv):
    (tmp_path / "bad.pgm").write_bytes(b"P5\n2 2\n255\n\x00")
    (tmp_path / "bad.json").write_text("{oops")
    before = set(tmp_path.iterdir())
    code, _, err = run(capsys, *(a.format(t=tmp_path) for a in argv))
    assert code != 0
    assert len(err.strip().splitlines()) == 1 and "error" in err
    assert set(tmp_path.iterdir()) == before


def test_failed_train_leaves_no_directory(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps({"max_iters": 1, "crop_size": 48}))
    code, _, err = run(capsys, "train", "--config", tmp_path / "cfg.json", "--out", tmp_path / "run")
    assert code == 2 and "crop_size" in err
    assert list(tmp_path.iterdir()) == [tmp_path / "cfg.json"]


def test_synth_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        run(capsys, "synth", "--seed", 5, "--n", 2, "--hw", "32,64", "--out", tmp_path / name)
    for sub in ("images/0000.ppm", "labels/0001.pgm"):
        assert (tmp_path / "a" / sub).read_bytes() == (tmp_path / "b" / sub).read_bytes()


def test_gradcheck_command(capsys):
    code, out, _ = run(capsys, "gradcheck", "--coords", 3)
    assert code == 0 and out.splitlines()[-1].startswith("PASS")
