"""Acceptance suite: one test per criterion, each printed as PASS/FAIL.

Numbered to match the project's exit criteria.  The heavy desk-scale pieces
(criteria 4 and 7) train real models on the synthetic cue dataset and are
budgeted; everything else is exact or property-based.  Run with
``pytest tests/test_acceptance.py -v`` for the per-criterion lines.
"""

import time

import numpy as np
import pytest

from helpers import ConstantClassifier, HashClassifier, max_rel_error, numeric_gradients
from patchcert.cache import CachedClassifier
from patchcert.cli import main as cli_main
from patchcert.data import (
    CIFAR_RECORD_BYTES,
    DatasetFormatError,
    SynthSpec,
    generate_synth,
    load_cifar10_binary,
)
from patchcert.defense import certify, evaluate
from patchcert.masks import (
    apply_masks,
    build_mask_set,
    build_nesting_map,
    verify_r_covering,
)
from patchcert.models import cross_entropy, mlp_backward, mlp_init
from patchcert.oracle import (
    attack_simulate,
    build_patch_dictionary,
    covering_mutation_check,
    exhaustive_worst_pair,
)
from patchcert.strategies import greedy_cutout, grid_search, multisize_greedy
from patchcert.training import TrainConfig, train

DESK = dict(side=32, classes=4, patch=5, hidden=32, train_n=512, test_n=128,
            grid=13, epochs=10, lr=0.05, batch=16)


def report(criterion, elapsed, budget):
    # the one-line PASS/FAIL announcement itself comes from the conftest
    # logreport hook, which pytest's capture cannot swallow
    print(f"criterion {criterion}: {elapsed:.1f}s of {budget:.0f}s budget")
    assert elapsed < budget, f"criterion exceeded budget: {elapsed:.1f}s >= {budget}s"


def desk_dataset(seed):
    spec = SynthSpec(side=DESK["side"], classes=DESK["classes"], seed=seed,
                     grid=DESK["grid"])
    return generate_synth(spec, DESK["train_n"] + DESK["test_n"]).split(DESK["train_n"])


def desk_train(seed, strategy):
    train_ds, test_ds = desk_dataset(seed)
    model = mlp_init(DESK["side"], DESK["side"], 1, hidden=DESK["hidden"],
                     classes=DESK["classes"], seed=seed)
    cfg = TrainConfig(epochs=DESK["epochs"], lr=DESK["lr"], batch_size=DESK["batch"],
                      seed=seed, strategy=strategy, patch_side=DESK["patch"])
    return train(model, train_ds, cfg).model, test_ds


@pytest.fixture(scope="module")
def strategy_comparison():
    """Criterion 7 experiment: 5 seeds x {multisize greedy, random cutout}."""
    t0 = time.perf_counter()
    mask_set = build_mask_set(DESK["side"], DESK["patch"], 3)
    rows = []
    reports = []
    for seed in range(5):
        per_seed = {}
        for strategy in ("multisize", "random"):
            model, test_ds = desk_train(seed, strategy)
            rep = evaluate(list(test_ds.images), [int(v) for v in test_ds.labels],
                           model, mask_set)
            per_seed[strategy] = rep.certified_robust_accuracy
            reports.append(rep)
        rows.append((seed, per_seed["multisize"], per_seed["random"]))
    return rows, reports, time.perf_counter() - t0


def test_criterion_01_mask_geometry_exact():
    t0 = time.perf_counter()
    m3 = build_mask_set(224, 39, 3)
    assert (m3.m, m3.s) == (100, 62)
    assert m3.positions == (0, 62, 124)
    assert len(m3) == 9
    m6 = build_mask_set(224, 39, 6)
    assert (m6.m, m6.s) == (69, 31)
    assert m6.positions == (0, 31, 62, 93, 124, 155)
    assert len(m6) == 36
    report("1 mask-geometry-exact", time.perf_counter() - t0, 1.0)


def test_criterion_02_combinatorics_exact():
    t0 = time.perf_counter()
    img32 = np.random.default_rng(0).random((32, 32, 1))
    for k, greedy_n, grid_n in ((3, 17, 45), (6, 71, 666)):
        ms = build_mask_set(32, 5, k)
        cache = CachedClassifier(HashClassifier(salt=k))
        gid = cache.register(img32)
        out = greedy_cutout(cache, gid, 0, ms)
        assert out.unique_evaluations == greedy_n

        cache = CachedClassifier(HashClassifier(salt=k))
        gid = cache.register(img32)
        out = grid_search(cache, gid, 0, ms)
        assert out.unique_evaluations == grid_n

        cache = CachedClassifier(ConstantClassifier([1.0, 0.0]))
        gid = cache.register(img32)
        cert = certify(cache, gid, 0, ms)
        assert cert.certified and cert.combos_evaluated == grid_n
        assert cache.unique_evaluations == grid_n

    coarse = build_mask_set(224, 39, 3)
    fine = build_mask_set(224, 39, 6)
    nesting = build_nesting_map(coarse, fine)
    img224 = np.random.default_rng(1).random((224, 224, 1))
    reselected = 0
    for salt in range(8):
        cache = CachedClassifier(HashClassifier(salt=salt))
        gid = cache.register(img224)
        out = multisize_greedy(cache, gid, 0, coarse, fine, nesting)
        assert out.scheduled_evaluations == 26
        assert out.unique_evaluations <= 26
        if out.extras["coarse_second"] != out.extras["coarse_first"]:
            assert out.unique_evaluations == 25
            reselected += 1
    assert reselected >= 1
    report("2 combinatorics-exact", time.perf_counter() - t0, 1.0)


def test_criterion_03_covering_property_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    for _ in range(500):
        n = int(rng.integers(2, 129))
        p = int(rng.integers(1, n + 1))
        k = int(rng.integers(1, 9))
        ms = build_mask_set(n, p, k)
        ok, witness = verify_r_covering(ms, p)
        assert ok, f"(n={n}, p={p}, k={k}) uncovered at {witness}"
    mutation = covering_mutation_check()
    assert mutation.passed, mutation.details
    report("3 covering-property-suite", time.perf_counter() - t0, 30.0)


def test_criterion_04_soundness_end_to_end():
    t0 = time.perf_counter()
    model, test_ds = desk_train(0, "multisize")
    fills = build_patch_dictionary(DESK["patch"], channels=1)
    assert len(fills) == 11
    locations = (DESK["side"] - DESK["patch"] + 1) ** 2
    attacked = 0
    for k in (3, 6):
        ms = build_mask_set(DESK["side"], DESK["patch"], k)
        rep = evaluate(list(test_ds.images), [int(v) for v in test_ds.labels],
                       model, ms)
        certified = [i for i, c in enumerate(rep.certifications) if c.certified]
        assert len(certified) > 0, f"nothing certified at k={k}"
        for i in certified:
            attack = attack_simulate(test_ds.images[i], int(test_ds.labels[i]),
                                     model, ms, DESK["patch"], fills)
            assert attack.variants_checked == locations * 11
            assert attack.violations == [], (
                f"image {i} (k={k}): {len(attack.violations)} defended-prediction "
                f"violations, first {attack.violations[0]}"
            )
            assert attack.covered_prediction_mismatches == 0
            attacked += 1
    print(f"  attacked {attacked} certified images x {locations * 11} variants")
    report("4 soundness-end-to-end", time.perf_counter() - t0, 300.0)


def test_criterion_05_oracle_dominance():
    t0 = time.perf_counter()
    ms = build_mask_set(16, 5, 3)
    rng = np.random.default_rng(7)
    for trial in range(200):
        image = rng.random((16, 16, 1))
        label = int(rng.integers(4))
        clf = HashClassifier(class_count=4, salt=trial)

        cache = CachedClassifier(clf)
        gid = cache.register(image)
        greedy = greedy_cutout(cache, gid, label, ms)

        cache = CachedClassifier(clf)
        gid = cache.register(image)
        grid = grid_search(cache, gid, label, ms)

        first = greedy.mask_ids[0][0]
        best_partner = max(
            cross_entropy(
                clf.predict(apply_masks(image, [ms.masks[first], ms.masks[j]])),
                label,
            )
            for j in range(len(ms)) if j != first
        )
        assert greedy.losses[0] == best_partner
        assert grid.losses[0] >= greedy.losses[0]

        pair, loss, passes = exhaustive_worst_pair(image, label, clf, ms)
        assert pair == grid.extras["pair"]
        assert loss == grid.losses[0]
        assert passes == 45
    report("5 oracle-dominance", time.perf_counter() - t0, 60.0)


def test_criterion_06_gradient_check():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    worst = 0.0
    for trial in range(100):
        model = mlp_init(3, 4, 1, hidden=5, classes=3, seed=trial)
        image = rng.random((3, 4, 1))
        label = int(rng.integers(3))
        got = mlp_backward(model, image, label)
        want = numeric_gradients(model, image, label, step=1e-4)
        for name in ("w1", "b1", "w2", "b2"):
            worst = max(worst, max_rel_error(getattr(got, name), want[name]))
        worst = max(worst, max_rel_error(got.image, want["image"]))
    assert worst < 1e-4, f"max relative gradient error {worst:.2e}"
    print(f"  max relative error over 100 models: {worst:.2e}")
    report("6 gradient-check", time.perf_counter() - t0, 30.0)


def test_criterion_07_directional_training_benefit(strategy_comparison):
    rows, _, elapsed = strategy_comparison
    t0 = time.perf_counter()
    print("  seed  multisize-greedy  random-cutout  improvement")
    for seed, ours, baseline in rows:
        print(f"  {seed:4d}  {ours:16.3f}  {baseline:13.3f}  {ours - baseline:+11.3f}")
    mean_ours = float(np.mean([r[1] for r in rows]))
    mean_base = float(np.mean([r[2] for r in rows]))
    print(f"  mean  {mean_ours:16.3f}  {mean_base:13.3f}  {mean_ours - mean_base:+11.3f}")
    assert mean_ours >= mean_base
    assert mean_ours - mean_base > 0.0
    report("7 directional-training-benefit",
           elapsed + (time.perf_counter() - t0), 900.0)


def test_criterion_08_metric_consistency(strategy_comparison):
    t0 = time.perf_counter()
    _, reports, _ = strategy_comparison
    assert len(reports) == 10
    for rep in reports:
        assert rep.certified_robust_accuracy <= rep.clean_accuracy
        for inf, cert in zip(rep.inferences, rep.certifications):
            if cert.certified:
                assert inf.label == cert.label
    report("8 metric-consistency", time.perf_counter() - t0, 30.0)


def test_criterion_09_manifest_replay_determinism(tmp_path):
    t0 = time.perf_counter()
    model = tmp_path / "m.pcmlp"
    log = tmp_path / "train.csv"
    assert cli_main([
        "train", "--strategy", "rand3", "--epochs", "2", "--lr", "0.05",
        "--batch", "8", "--count", "32", "--patch-size", "5",
        "--synth-grid", "13", "--seed", "0", "--hidden", "16",
        "--out", str(model), "--log", str(log),
    ]) == 0

    outputs = {}
    for name, argv in {
        "cert.csv": ["certify", "--model", str(model), "--count", "8",
                     "--skip", "32", "--patch-size", "5", "--synth-grid", "13",
                     "--seed", "0", "--k", "3", "--threads", "1"],
        "attack.csv": ["attack-sim", "--model", str(model), "--count", "1",
                       "--skip", "32", "--patch-size", "5", "--synth-grid", "13",
                       "--seed", "0", "--k", "3", "--random-fills", "1",
                       "--threads", "1"],
    }.items():
        out = tmp_path / name
        code = cli_main(argv + ["--out", str(out)])
        assert code in (0, 1)
        outputs[name] = out.read_bytes()

    for name in outputs:
        for threads in ("1", "8"):
            replay_out = tmp_path / f"replay_{threads}_{name}"
            code = cli_main([
                "replay", "--manifest", str(tmp_path / f"{name}.manifest.json"),
                "--threads", threads, "--out", str(replay_out),
            ])
            assert code in (0, 1)
            assert replay_out.read_bytes() == outputs[name], (
                f"{name} replay with --threads {threads} changed bytes"
            )

    original_model = model.read_bytes()
    assert cli_main(["replay", "--manifest",
                     str(tmp_path / "m.pcmlp.manifest.json")]) == 0
    assert model.read_bytes() == original_model
    report("9 manifest-replay-determinism", time.perf_counter() - t0, 120.0)


def test_criterion_10_cifar10_loader(tmp_path):
    t0 = time.perf_counter()
    rec0 = bytes([3]) + bytes(i % 256 for i in range(3072))
    rec1 = bytes([9]) + bytes((7 * i + 1) % 256 for i in range(3072))
    path = tmp_path / "batch.bin"
    path.write_bytes(rec0 + rec1)
    ds = load_cifar10_binary(path)
    assert ds.labels.tolist() == [3, 9]
    raw0 = np.frombuffer(rec0[1:], dtype=np.uint8).reshape(3, 32, 32)
    raw1 = np.frombuffer(rec1[1:], dtype=np.uint8).reshape(3, 32, 32)
    assert np.array_equal(ds.images[0], raw0.transpose(1, 2, 0) / 255.0)
    assert np.array_equal(ds.images[1], raw1.transpose(1, 2, 0) / 255.0)

    bad = tmp_path / "bad.bin"
    bad.write_bytes(bytes(CIFAR_RECORD_BYTES + 1))
    with pytest.raises(DatasetFormatError) as err:
        load_cifar10_binary(bad)
    assert err.value.offset == CIFAR_RECORD_BYTES
    report("10 cifar10-loader", time.perf_counter() - t0, 10.0)
