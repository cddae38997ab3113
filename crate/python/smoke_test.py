"""Smoke test for the `lsl_probe` extension module.

Build the module first:

    cargo build --release -p lsl-py --features extension-module

then run `python3 python/smoke_test.py`. If `lsl_probe` is not importable
the script loads the freshly built library from `target/release`.
"""

import importlib.util
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    try:
        import lsl_probe

        return lsl_probe
    except ImportError:
        pass
    for name in ("liblsl_probe.so", "liblsl_probe.dylib", "lsl_probe.dll"):
        built = ROOT / "target" / "release" / name
        if built.exists():
            break
    else:
        sys.exit("lsl_probe not built; run: cargo build --release -p lsl-py --features extension-module")
    staged = pathlib.Path(tempfile.mkdtemp()) / ("lsl_probe" + (".pyd" if name.endswith(".dll") else ".so"))
    shutil.copy(built, staged)
    spec = importlib.util.spec_from_file_location("lsl_probe", staged)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def main():
    lp = load_module()

    p, r, f = lp.b_cubed(["A", "A", "B", "B", "B"], [1, 1, 1, 2, 2])
    assert close(p, 11 / 15) and close(r, 11 / 15) and close(f, 11 / 15), (p, r, f)

    labels, npmi = lp.npmi_matrix(["x", "x", "y", "y"], [0, 0, 1, 1])
    assert labels == ["x", "y"] and close(npmi[0][1], -1.0)

    assert close(lp.diversity([0, 0, 0]), 1.0)
    assert close(lp.uncertainty([[0.5, 0.5]]), 2.0)
    assert lp.select_consistent([[0, 0, 1], [0, 0, 1], [1, 0, 0]])[0] == 0
    assert lp.choose_hidden_size([(8, 0.80), (16, 0.95), (32, 0.96)], 0.97) == 16

    post = lp.posterior([0.0, 0.0])
    assert post["hard_class"] == 0 and close(post["binary_logit"], math.log(2.0))
    loss = lp.batch_loss([[1.0, -1.0], [-1.0, 1.0]], [True, True])
    assert close(loss["mutual_information"], math.log(2) - loss["batch_entropy"] - loss["instance_entropy"], 1e-9)

    with tempfile.TemporaryDirectory() as tmp:
        emb, train, dev, manifest = lp.generate_synth(tmp, positives=600, seed=1)
        assert len(emb) == 1200 and len(train) + len(dev) == 1200
        assert manifest["oracle_accuracy"] > 0.95
        reloaded = lp.Embeddings.load(pathlib.Path(tmp) / "embeddings.bin")
        assert reloaded.layers_and_dim() == (1, 16)
        dev2 = lp.Task.load(pathlib.Path(tmp) / "synth.dev.jsonl", reloaded)
        assert dev2.labels == dev.labels and dev2.split == "dev"

        run = lp.train(train, dev, emb, {"max_epochs": 15, "batch_size": 128, "seed": 3})
        assert run.dev_accuracy > 0.9, run.dev_accuracy
        scores = run.scores()
        assert 1.0 <= scores["diversity"] <= 32.0
        assert len(run.hard_classes) == len(dev)
        run.save(pathlib.Path(tmp) / "run")
        assert (pathlib.Path(tmp) / "run" / "assignments.tsv").exists()

        runs, chosen, consistency = lp.train_and_select(train, dev, emb, {"max_epochs": 2}, runs=2)
        assert len(runs) == 2 and chosen in (0, 1) and len(consistency) == 2
        assert [r.seed for r in runs] == [0, 1]

    print("lsl_probe smoke test passed")


if __name__ == "__main__":
    main()
