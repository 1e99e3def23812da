import json

import pytest

from timesuite.cli import main


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


@pytest.fixture
def grounding_files(tmp_path):
    # ten items; predictions shift a (0, 10) ground truth so IoUs are known
    gts, preds = [], []
    pred_spans = [(0, 10), (1, 10), (2, 10), (3, 10), (4, 10), (5, 10), (6, 10), (7, 10), None, (20, 30)]
    for i, p in enumerate(pred_spans):
        gts.append({"id": f"q{i}", "video_id": "v", "query": "q", "start": 0, "end": 10})
        if p is None:
            preds.append({"id": f"q{i}", "video_id": "v", "query": "q", "response_text": "not sure"})
        elif i % 2:
            preds.append({"id": f"q{i}", "video_id": "v", "query": "q", "pred_start": p[0], "pred_end": p[1]})
        else:
            preds.append({"id": f"q{i}", "video_id": "v", "query": "q", "response_text": f"from {p[0]} to {p[1]} seconds"})
    return write_jsonl(tmp_path / "pred.jsonl", preds), write_jsonl(tmp_path / "gt.jsonl", gts)


def test_eval_grounding_fixture(grounding_files, tmp_path, capsys):
    pred, gt = grounding_files
    out = tmp_path / "report.json"
    assert main(["eval-grounding", "--pred", str(pred), "--gt", str(gt), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    # IoUs: 1.0, .9, .8, .7, .6, .5, .4, .3, 0 (unparsed), 0 (disjoint)
    assert report["r1_03"] == 8 / 10
    assert report["r1_05"] == 6 / 10
    assert report["r1_07"] == 4 / 10
    assert report["n_items"] == 10 and report["n_unparsed"] == 1
    assert set(report) >= {"r1_03", "r1_05", "r1_07", "map", "hit1", "n_items", "n_unparsed"}
    assert "r1_05" in capsys.readouterr().out


def test_eval_grounding_perfect_and_empty(tmp_path):
    gts = [{"id": str(i), "video_id": "v", "query": "q", "start": i, "end": i + 3} for i in range(4)]
    preds = [{"id": str(i), "pred_start": i, "pred_end": i + 3} for i in range(4)]
    out = tmp_path / "r.json"
    args = ["eval-grounding", "--pred", str(write_jsonl(tmp_path / "p.jsonl", preds)),
            "--gt", str(write_jsonl(tmp_path / "g.jsonl", gts)), "--out", str(out)]
    assert main(args) == 0
    rep = json.loads(out.read_text())
    assert rep["r1_03"] == rep["r1_05"] == rep["r1_07"] == 1.0
    (tmp_path / "empty.jsonl").write_text("")
    assert main(["eval-grounding", "--pred", str(tmp_path / "p.jsonl"), "--gt", str(tmp_path / "empty.jsonl")]) == 1


def test_eval_grounding_reports_bad_line(tmp_path, capsys):
    gt = tmp_path / "g.jsonl"
    gt.write_text('{"id": "a", "start": 0, "end": 1}\n{not json}\n')
    assert main(["eval-grounding", "--pred", str(gt), "--gt", str(gt)]) == 1
    assert ":2:" in capsys.readouterr().err


def test_eval_highlight(tmp_path):
    rows = [
        {"id": "a", "clip_duration_s": 2, "pred_scores": [0.9, 0.1], "gt_saliency": [4.0, 1.0]},
        {"id": "b", "clip_duration_s": 2, "pred_scores": [0.1, 0.9], "gt_saliency": [4.0, 1.0]},
    ]
    out = tmp_path / "h.json"
    assert main(["eval-highlight", "--file", str(write_jsonl(tmp_path / "h.jsonl", rows)), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["map"] == 0.75 and rep["hit1"] == 0.5
    allpos = [{"id": "c", "pred_scores": [0.3, 0.1, 0.2], "gt_saliency": [4.0, 5.0, 4.5]}]
    assert main(["eval-highlight", "--file", str(write_jsonl(tmp_path / "p.jsonl", allpos)), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["map"] == 1.0


def test_eval_highlight_malformed(tmp_path, capsys):
    rows = [{"id": "a", "pred_scores": [0.9], "gt_saliency": [4.0]},
            {"id": "b", "pred_scores": [0.9, 0.2], "gt_saliency": [4.0]}]
    assert main(["eval-highlight", "--file", str(write_jsonl(tmp_path / "h.jsonl", rows))]) == 1
    assert ":2:" in capsys.readouterr().err


def test_tgc_build(tgc_fixture_path, tmp_path, capsys):
    outs = []
    for run in range(2):
        out, rep = tmp_path / f"o{run}.jsonl", tmp_path / f"r{run}.json"
        code = main(["tgc", "build", "--input", str(tgc_fixture_path), "--out", str(out),
                     "--report", str(rep), "--seed", "4"])
        assert code == 0
        outs.append((out.read_bytes(), rep.read_bytes()))
    assert outs[0] == outs[1]
    report = json.loads(outs[0][1])
    assert [s["n_out"] for s in report["stages"]] == [13, 12, 10, 10]
    assert report["config"]["seed"] == 4
    assert len(outs[0][0].decode().splitlines()) == 10
    assert "duration_filter" in capsys.readouterr().out


def test_tgc_build_empty_input(tmp_path):
    (tmp_path / "in.jsonl").write_text("")
    out, rep = tmp_path / "o.jsonl", tmp_path / "r.json"
    assert main(["tgc", "build", "--input", str(tmp_path / "in.jsonl"), "--out", str(out), "--report", str(rep)]) == 0
    assert out.read_text() == ""
    assert all(s["n_in"] == 0 and s["n_out"] == 0 for s in json.loads(rep.read_text())["stages"])


def test_tgc_build_quarantine_overflow(tmp_path):
    rows = [{"video_id": "v", "start": i * 10, "end": i * 10 + 8, "caption": "short caption here", "video_duration_s": 100}
            for i in range(3)]
    args = ["tgc", "build", "--input", str(write_jsonl(tmp_path / "in.jsonl", rows)), "--out", str(tmp_path / "o")]
    assert main(args) == 2


def test_demo_shapes(tmp_path, capsys):
    out = tmp_path / "trace.json"
    small = ["--set", "tape.input_dim=16", "--set", "tape.output_dim=24", "--set", "tape.mid_dim=8"]
    assert main(["demo", "--out", str(out)] + small) == 0
    trace = json.loads(out.read_text())
    assert trace["output_tokens"] == 384 and trace["max_abs_v_t"] == 0.0
    assert capsys.readouterr().out.strip().splitlines()[-1] == "tokens to language model: 384 × 24"
    assert main(["demo", "--frames", "192", "--out", str(out)] + small) == 0
    assert json.loads(out.read_text())["output_tokens"] == 576


def test_demo_default_dims(capsys):
    assert main(["demo"]) == 0
    assert capsys.readouterr().out.strip().splitlines()[-1] == "tokens to language model: 384 × 4096"


def test_demo_validation_error_before_compute(capsys):
    assert main(["demo", "--set", "tape.sample_rate=5"]) == 1
    assert "multiple" in capsys.readouterr().err
    assert main(["demo", "--set", "tape.merge_len=5"]) == 1


def test_demo_manifest_and_ablations(tmp_path, capsys):
    manifest = write_jsonl(tmp_path / "m.jsonl", [{"video_id": "short", "total_frames": 40, "duration_s": 4}])
    small = ["--set", "tape.input_dim=8", "--set", "tape.output_dim=8", "--set", "tape.mid_dim=4"]
    assert main(["demo", "--manifest", str(manifest)] + small) == 0
    assert "video short: 40 frames" in capsys.readouterr().out
    for ablation in ("no-tape", "pooling", "no-init"):
        out = tmp_path / f"{ablation}.json"
        assert main(["demo", "--ablate", ablation, "--out", str(out)] + small) == 0
        trace = json.loads(out.read_text())
        assert trace["output_tokens"] == 384
    assert json.loads((tmp_path / "no-tape.json").read_text())["max_abs_v_t"] is None


def test_demo_seed_reproducible(tmp_path):
    small = ["--set", "tape.input_dim=8", "--set", "tape.output_dim=8", "--set", "tape.mid_dim=4", "--seed", "9"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["demo", "--out", str(a)] + small)
    main(["demo", "--out", str(b)] + small)
    assert a.read_bytes() == b.read_bytes()


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["check", "--ablate", "bogus"])
    assert exc.value.code == 1


def test_check_report(tmp_path, monkeypatch):
    from timesuite import checks

    report = tmp_path / "check.json"
    monkeypatch.setattr(checks, "CHECKS", [c for c in checks.CHECKS if c[0] != "tape_gradient"])
    assert main(["check", "--report", str(report)]) == 0
    results = json.loads(report.read_text())["results"]
    assert all(r["status"] == "PASS" for r in results)


def test_check_failure_exit_2(monkeypatch):
    from timesuite import checks

    def failing():
        raise AssertionError("nope")

    monkeypatch.setattr(checks, "CHECKS", [("always_fails", failing, "core")])
    assert main(["check"]) == 2
