import json

import pytest

from fitnms import cli
from fitnms.formats import load_detections, load_groundtruth


@pytest.fixture(scope="module")
def synth_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    prefix = d / "s"
    assert cli.main(["synth", "--images", "8", "-o", str(prefix)]) == 0
    return d / "s_dets.json", d / "s_gts.json"


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestCommands:
    def test_synth_round_trip(self, synth_files):
        dets, gts = synth_files
        images = load_detections(dets)
        truth = load_groundtruth(gts)
        assert [i for i, _ in images] == list(truth.images)
        assert all(r.class_id is None for _, recs in images for r in recs)

    def test_nms_then_eval(self, synth_files, tmp_path, capsys):
        dets, gts = synth_files
        kept = tmp_path / "kept.json"
        assert run(["nms", dets, "--variant", "joint", "-o", kept], capsys)[0] == 0
        recs = load_detections(kept)
        assert all(r.class_id == 0 and r.score is not None for _, rs in recs for r in rs)
        code, out, _ = run(["eval", kept, gts, "-o", tmp_path / "rep"], capsys)
        assert code == 0
        report = json.loads((tmp_path / "rep.json").read_text())
        assert 0.0 <= report["map_range"] <= 1.0
        assert (tmp_path / "rep.csv").read_text().startswith("variant,omega,recall,map")

    def test_soft_nms(self, synth_files, capsys):
        code, out, _ = run(["soft-nms", synth_files[0], "--sigma", "0.5"], capsys)
        assert code == 0
        assert json.loads(out)["images"]

    def test_sweep(self, synth_files, capsys):
        dets, gts = synth_files
        code, out, _ = run(["sweep", "--detections", dets, "--groundtruth", gts, "--omegas", "0.5,0.9"], capsys)
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == ",".join(cli.SWEEP_COLUMNS)
        assert lines[1].startswith("without_nms")

    def test_loss_curve_and_grad_check(self, capsys):
        code, out, _ = run(["loss-curve", "--steps", "11"], capsys)
        assert code == 0 and out.startswith("curve,ratio")
        code, out, _ = run(["grad-check", "--points", "5"], capsys)
        assert code == 0
        assert len(out.strip().splitlines()) == 1 + 4 * 5

    def test_grad_check_fails_on_tight_tolerance(self, capsys):
        assert run(["grad-check", "--points", "3", "--tolerance", "1e-15"], capsys)[0] == 1

    def test_corner_cluster(self, tmp_path, capsys):
        probs = [[[0.0] * 4 for _ in range(4)] for _ in range(4)]
        probs[0][0][0] = 0.9
        probs[3][3][3] = 0.8
        grid = tmp_path / "g.json"
        grid.write_text(json.dumps({"probs": probs}))
        code, out, _ = run(["corner-cluster", grid, "--max-rois", "5"], capsys)
        assert code == 0
        body = json.loads(out)
        assert [c["type"] for c in body["corners"]] == ["top_left", "bottom_right"]
        assert body["rois"][0]["box"] == [1.5, 1.5, 3.0, 3.0]


class TestExitCodes:
    def test_malformed_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"images": [')
        code, _, err = run(["nms", bad], capsys)
        assert code == 2
        assert "line 1" in err

    def test_schema_violation_names_field(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"images": [{"id": "a", "detections": [{"box": [0, 0, 1], "class_probs": [0.5]}]}]}))
        code, _, err = run(["nms", bad], capsys)
        assert code == 2
        assert "/images/0/detections/0/box" in err

    def test_soft_settings_on_hard_run(self, synth_files, capsys):
        assert run(["nms", synth_files[0], "--sigma", "0.5"], capsys)[0] == 3

    def test_lambda_on_soft_run(self, synth_files, capsys):
        assert run(["soft-nms", synth_files[0], "--lambda-nms", "0.5"], capsys)[0] == 3

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["loss-curve", "--nope"])
        assert exc.value.code == 3

    def test_mismatched_images(self, synth_files, tmp_path, capsys):
        dets, _ = synth_files
        other = tmp_path / "g.json"
        other.write_text(json.dumps({"images": [{"id": "zzz", "instances": []}]}))
        kept = tmp_path / "k.json"
        run(["nms", dets, "-o", kept], capsys)
        code, _, err = run(["eval", kept, other], capsys)
        assert code == 4
        assert "zzz" in err

    def test_eval_needs_scores(self, synth_files, capsys):
        assert run(["eval", *synth_files], capsys)[0] == 2

    def test_bad_config_file(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"nms": {"bogus": 1}}))
        assert run(["--config", cfg, "loss-curve"], capsys)[0] == 3

    def test_config_values_used(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"loss_curve": {"steps": 3, "dx_min": 0.0, "dx_max": 0.2}}))
        code, out, _ = run(["--config", cfg, "loss-curve"], capsys)
        assert code == 0
        positions = [l for l in out.splitlines() if l.startswith("position")]
        assert len(positions) == 4  # 0, 0.1, 0.2 and the 1/6 anchor

    def test_workers_env(self, monkeypatch, capsys):
        monkeypatch.setenv(cli.WORKERS_ENV, "zero")
        assert run(["loss-curve", "--steps", "3"], capsys)[0] == 3
