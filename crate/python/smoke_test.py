"""End-to-end check of the headcount_py extension module.

Build the module first, then run this script with the repo's Python:

    cargo build -p headcount-py
    python3 python/smoke_test.py
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        REPO / "target" / "release" / "libheadcount_py.so",
        REPO / "target" / "debug" / "libheadcount_py.so",
    ]
    built = [p for p in candidates if p.exists()]
    if not built:
        sys.exit("libheadcount_py.so not found; run `cargo build -p headcount-py` first")
    newest = max(built, key=lambda p: p.stat().st_mtime)
    stage = Path(tempfile.mkdtemp(prefix="headcount_py_"))
    shutil.copy2(newest, stage / "headcount_py.so")
    sys.path.insert(0, str(stage))
    import headcount_py

    return headcount_py


def check_kernels(hp):
    probs = hp.softmax([1.0, 2.0, 3.0])
    assert abs(sum(probs) - 1.0) < 1e-12, probs
    assert probs[0] < probs[1] < probs[2], probs

    assert abs(hp.entropy([0.5, 0.5]) - math.log(2)) < 1e-12
    assert hp.entropy([1.0, 0.0]) == 0.0

    assert abs(hp.variance([1.0, 1.0, 1.0])) < 1e-15
    assert abs(hp.variance([0.0, 1.0]) - 0.25) < 1e-15

    r, degenerate = hp.pearson([1.0, 2.0, 3.0], [2.0, 4.0, 6.0])
    assert abs(r - 1.0) < 1e-12 and not degenerate, (r, degenerate)
    r, degenerate = hp.pearson([1.0, 1.0, 1.0], [2.0, 4.0, 6.0])
    assert r == 0.0 and degenerate, (r, degenerate)

    assert hp.majority_vote([1, 0, 1]) == 1
    assert hp.majority_vote([1, 0]) == 1, "ties go to the positive class"
    assert hp.majority_vote([0, 0, 1]) == 0
    print("ok: math kernels")


def check_datasets(hp):
    ds = hp.Dataset.synthetic(50, 7)
    assert len(ds) == 50
    assert ds.split == "train"
    assert ds.annotators == [f"a{i:02d}" for i in range(6)]
    assert ds.n_pairs == 300, "dense crowd labels every instance"

    again = hp.Dataset.synthetic(50, 7)
    assert ds.record(0) == again.record(0), "same seed, same records"
    other = hp.Dataset.synthetic(50, 8)
    assert ds.record(0) != other.record(0), "different seed, different records"

    rec = ds.record(3)
    assert set(rec) == {"id", "text", "annotations"}
    labels = [label for _, label in rec["annotations"]]
    assert ds.majority_label(3) == (1 if sum(labels) * 2 >= len(labels) else 0)
    mean = sum(labels) / len(labels)
    assert abs(ds.disagreement(3) - mean * (1 - mean)) < 1e-12

    sparse = hp.Dataset.synthetic(40, 3, per_instance=2, n_annotators=10)
    assert sparse.n_pairs == 80

    with tempfile.TemporaryDirectory() as tmp:
        path = str(Path(tmp) / "train.jsonl")
        ds.save_jsonl(path)
        back = hp.Dataset.load_jsonl(path, "train")
        assert len(back) == 50 and back.record(0) == ds.record(0)
    print("ok: synthetic generation and jsonl round-trip")


def tiny_run(hp, **overrides):
    params = dict(
        n_train=24,
        n_dev=8,
        n_test=10,
        data_seed=0,
        hash_dim=128,
        hidden_dim=8,
        peak_lr=0.01,
        max_epochs=2,
        patience=1,
        seed_budget=10,
        round_budget=10,
        n_rounds=3,
        seeds=[0, 1],
    )
    params.update(overrides)
    return hp.run_experiment(**params)


def check_experiment(hp):
    result = tiny_run(hp)
    assert result["method"] == "rand_mh"
    assert result["policy"] == "pairwise"
    assert [s["seed"] for s in result["seeds"]] == [0, 1]
    for seed in result["seeds"]:
        costs = [r["cost"] for r in seed["rounds"]]
        assert costs == [10, 20, 30], costs
        for r in seed["rounds"]:
            assert 0.0 <= r["majority_f1"] <= 1.0
            assert -1.0 <= r["uncertainty_pearson"] <= 1.0
    assert len(result["aggregate"]) == 3
    assert result["aggregate"][0]["cost"] == 10

    assert tiny_run(hp) == result, "identical config, identical results"

    single = tiny_run(hp, model="single_majority", method="rand_sh", seeds=[0])
    assert single["policy"] == "label_div"
    print("ok: experiment runs are shaped right and deterministic")


def main():
    hp = load_module()
    check_kernels(hp)
    check_datasets(hp)
    check_experiment(hp)
    print("smoke test passed")


if __name__ == "__main__":
    main()
