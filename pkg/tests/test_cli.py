import json
import subprocess
import sys

import numpy as np
import pytest

from cnet_dst import cli
from cnet_dst.corpus import build_vocab, synthetic_split
from cnet_dst.model import DstModel, ModelConfig, load_checkpoint
from cnet_dst.ontology import Ontology


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    records = [json.loads(l) for l in out.splitlines() if l.startswith("{")]
    return code, records, err


def tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# -- usage ---------------------------------------------------------------------

def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["no-such-command"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["train"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["stats", "--synthetic", "huge"])
    assert exc.value.code == 1


def test_config_error_exit_1(capsys, tmp_path):
    code, _, err = run(capsys, "stats", "--synthetic", "small", "--prune-threshold", "1.5")
    assert code == 1 and "prune-threshold" in err
    code, _, _ = run(capsys, "gen-synth", "--out", tmp_path, "--p-swap", "2")
    assert code == 1


def test_data_error_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "stats", "--corpus", tmp_path / "missing")
    assert code == 2 and err.startswith("error:")
    code, _, _ = run(capsys, "eval", "--synthetic", "small", "--model", tmp_path)
    assert code == 2


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "cnet_dst.cli", "gen-synth", "--out", str(tmp_path),
                          "--dialogs", "2"], capture_output=True, text=True, check=True)
    rec = json.loads(out.stdout)
    assert rec["schema"] == "cnet-dst/gen-synth/1" and rec["dialogs"] == 2


# -- gen-synth / stats / prune ---------------------------------------------------

def test_gen_synth_counts_and_determinism(capsys, tmp_path):
    code, (rec,), _ = run(capsys, "gen-synth", "--out", tmp_path / "a", "--dialogs", 20, "--turns", 4, "--seed", 7)
    assert code == 0 and rec["dialogs"] == 20 and rec["turns"] == 80
    dirs = [p for p in (tmp_path / "a" / "train").iterdir() if p.is_dir()]
    assert len(dirs) == 20
    labels = sum(len((d / "labels.jsonl").read_text().splitlines()) for d in dirs)
    assert labels == 80
    run(capsys, "gen-synth", "--out", tmp_path / "b", "--dialogs", 20, "--turns", 4, "--seed", 7)
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_stats_noise_free_full_coverage(capsys, tmp_path):
    run(capsys, "gen-synth", "--out", tmp_path, "--p-swap", 0, "--p-confuse", 0, "--split", "dev")
    code, recs, _ = run(capsys, "stats", "--corpus", tmp_path, "--split", "dev")
    assert code == 0
    by_view = {r["view"]: r for r in recs}
    assert set(by_view) == {"1best", "cnet", "pruned"}
    assert by_view["1best"]["all_words_pct"] == 100.0
    assert all(r["schema"] == "cnet-dst/stats/1" for r in recs)


def test_stats_degenerate_cnets_agree(capsys, tmp_path):
    run(capsys, "gen-synth", "--out", tmp_path, "--p-swap", 0, "--p-confuse", 0, "--p-interj", 0)
    _, recs, _ = run(capsys, "stats", "--corpus", tmp_path, "--split", "train")
    by_view = {r["view"]: r for r in recs}
    for key in ("all_words_pct", "slot_value_words_pct", "avg_timesteps", "avg_k"):
        assert by_view["1best"][key] == by_view["cnet"][key]


def test_stats_noisy_cnet_beats_one_best(capsys):
    _, recs, _ = run(capsys, "stats", "--synthetic", "small")
    by_view = {r["view"]: r for r in recs}
    assert by_view["cnet"]["all_words_pct"] > by_view["1best"]["all_words_pct"]


def test_stats_fixture_corpus(capsys, fixtures_dir):
    code, recs, _ = run(capsys, "stats", "--corpus", fixtures_dir / "corpus", "--split", "train",
                          "--ontology", "dstc2")
    assert code == 0 and all(r["utterance_count"] == 6 for r in recs)


def test_prune_command(capsys, tmp_path, fixtures_dir):
    out = tmp_path / "pruned.txt"
    code, (rec,), _ = run(capsys, "prune", fixtures_dir / "sample_cnet.txt", "-o", out)
    assert code == 0 and rec["utterances"] == 1
    from cnet_dst import DEFAULT_INTERJECTIONS, parse_cnet, prune_cnet
    original = parse_cnet((fixtures_dir / "sample_cnet.txt").read_text())
    assert parse_cnet(out.read_text()) == prune_cnet(original, DEFAULT_INTERJECTIONS, 0.001)
    assert rec["avg_timesteps_before"] == 40


def test_import_dstc2_command(capsys, tmp_path, fixtures_dir):
    code, (rec,), _ = run(capsys, "import-dstc2", "--data-root", fixtures_dir / "dstc2", "--flist",
                          fixtures_dir / "dstc2" / "flist.txt", "--out", tmp_path, "--split", "dev")
    assert code == 0 and rec["dialogs"] == 1 and rec["turns"] == 2
    code, recs, _ = run(capsys, "stats", "--corpus", tmp_path, "--split", "dev", "--ontology", "dstc2")
    assert code == 0 and len(recs) == 3


# -- train / eval -------------------------------------------------------------------

SMALL_DIMS = ["--embed-dim", 8, "--dense-units", 8, "--gru-units", 6, "--combine-dim", 4]


def test_train_smoke(capsys, tmp_path):
    code, recs, _ = run(capsys, "train", "--synthetic", "small", "--seeds", 1, "--epochs", 5,
                        "--out", tmp_path, *SMALL_DIMS)
    assert code == 0
    ckpts = sorted(p.name for p in (tmp_path / "seed1").glob("*.ckpt"))
    assert ckpts == ["area.ckpt", "food.ckpt", "pricerange.ckpt", "requests.ckpt"]
    (rec,) = recs
    assert all(np.isfinite(v) for v in rec["final_loss"].values())
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,head_group,seed,loss" and len(lines) == 1 + 4 * 5
    assert all(np.isfinite(float(l.split(",")[3])) for l in lines[1:])


def test_train_epochs_zero_is_initialization(capsys, tmp_path):
    code, _, _ = run(capsys, "train", "--synthetic", "small", "--seeds", 4, "--epochs", 0,
                     "--out", tmp_path, *SMALL_DIMS)
    assert code == 0
    onto = Ontology.load("synthetic")
    vocab = build_vocab(synthetic_split("small", "train"))
    cfg = ModelConfig(embed_dim=8, dense_units=8, gru_units=6, combine_dim=4)
    for group in ("area", "food", "pricerange", "requests"):
        loaded = load_checkpoint(tmp_path / "seed4" / f"{group}.ckpt")
        fresh = DstModel(vocab, onto, cfg, heads=[group], seed=4)
        for n, p in fresh.params.items():
            assert loaded.params[n].data.tobytes() == p.data.tobytes()


def test_train_group_epochs_and_errors(capsys, tmp_path):
    code, recs, _ = run(capsys, "train", "--synthetic", "small", "--seeds", 2, "--epochs", 1,
                        "--group-epochs", "food=2", "--out", tmp_path, *SMALL_DIMS)
    assert code == 0 and recs[0]["epochs"] == {"requests": 1, "area": 1, "pricerange": 1, "food": 2}
    code, _, _ = run(capsys, "train", "--synthetic", "small", "--group-epochs", "colour=2", "--out", tmp_path)
    assert code == 1


def test_train_eval_deterministic_and_summary(capsys, tmp_path):
    args = ["--synthetic", "small", "--seeds", 1, 2, 3, "--epochs", 2, *SMALL_DIMS]
    run(capsys, "train", *args, "--out", tmp_path / "a")
    run(capsys, "train", *args, "--out", tmp_path / "b")
    assert tree(tmp_path / "a") == tree(tmp_path / "b")

    code, recs, _ = run(capsys, "eval", "--synthetic", "small", "--split", "test", "--model", tmp_path / "a",
                        "--ensemble")
    assert code == 0
    seeds = [r for r in recs if r["kind"] == "seed"]
    (summary,) = [r for r in recs if r["kind"] == "summary"]
    (ens,) = [r for r in recs if r["kind"] == "ensemble"]
    assert [r["seed"] for r in seeds] == [1, 2, 3]
    for key in ("joint_goals", "joint_requests"):
        vals = [r[key] for r in seeds]
        assert summary[key] == {"avg": pytest.approx(sum(vals) / 3), "min": min(vals), "max": max(vals)}
    assert 0.0 <= ens["joint_goals"] <= 100.0
    _, again, _ = run(capsys, "eval", "--synthetic", "small", "--split", "test", "--model", tmp_path / "b",
                      "--ensemble")
    assert again == recs

    _, one, _ = run(capsys, "eval", "--synthetic", "small", "--split", "test", "--model", tmp_path / "a",
                    "--seeds", 2, "--ensemble")
    seed2 = [r for r in one if r["kind"] == "seed"][0]
    ens2 = [r for r in one if r["kind"] == "ensemble"][0]
    assert (seed2["joint_goals"], seed2["joint_requests"]) == (ens2["joint_goals"], ens2["joint_requests"])


def test_eval_missing_checkpoint(capsys, tmp_path):
    run(capsys, "train", "--synthetic", "small", "--seeds", 1, "--epochs", 0, "--out", tmp_path, *SMALL_DIMS)
    (tmp_path / "seed1" / "food.ckpt").unlink()
    code, _, err = run(capsys, "eval", "--synthetic", "small", "--model", tmp_path)
    assert code == 2 and "food.ckpt" in err
    code, _, _ = run(capsys, "eval", "--synthetic", "small", "--model", tmp_path, "--seeds", 9)
    assert code == 2


def test_parallel_training_matches_serial(capsys, tmp_path, monkeypatch):
    args = ["--synthetic", "small", "--seeds", 1, 2, "--epochs", 1, *SMALL_DIMS]
    run(capsys, "train", *args, "--out", tmp_path / "serial")
    monkeypatch.setenv("CNET_DST_THREADS", "2")
    run(capsys, "train", *args, "--out", tmp_path / "parallel")
    assert tree(tmp_path / "serial") == tree(tmp_path / "parallel")
    monkeypatch.setenv("CNET_DST_THREADS", "zero")
    assert run(capsys, "train", *args, "--out", tmp_path / "x")[0] == 1


# -- gradcheck ----------------------------------------------------------------------

def test_gradcheck_small_dims_and_negative_control(capsys):
    dims = ["--embed-dim", 4, "--dense-units", 4, "--gru-units", 3, "--combine-dim", 3]
    code, recs, _ = run(capsys, "gradcheck", *dims)
    groups = [r for r in recs if "group" in r]
    summary = recs[-1]
    assert {r["group"] for r in groups} >= {"embedding", "dense", "gru", "combine"}
    assert summary["schema"] == "cnet-dst/gradcheck/1"
    assert code == (0 if summary["max_rel_error"] < 1e-4 else 3)
    assert summary["max_resolved_rel_error"] < 1e-4
    _, again, _ = run(capsys, "gradcheck", *dims)
    assert again == recs

    code, bad, err = run(capsys, "gradcheck", *dims, "--corrupt-backward")
    assert code == 3 and "gru" in bad[-1]["failed"] and "gru" in err
    gru = [r for r in bad if r.get("group") == "gru"][0]
    assert gru["resolved_rel_error"] > 1e-2
