"""Acceptance suite: one test per release criterion.

Each test prints a single PASS/FAIL line (bypassing capture) so a full
run reads as a checklist. Heavy artifacts (the reference model and the
200-seed attack corpus) build once and cache under tests/_cache.
"""

import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from noisecam.attack import AttackConfig
from noisecam.bench import (
    DetectionReport,
    EvalItem,
    build_attack_corpus,
    iter_corpus_items,
    load_manifest,
    run_eval,
)
from noisecam.cams import (
    gradcam_pp_core,
    gradcam_pp_weights,
    layercam_core,
    noisecam_core,
    upsample_bilinear,
)
from noisecam.clustering import dbscan
from noisecam.dataset import gen_dataset
from noisecam.deviation import behavior_deviation
from noisecam.layers import (
    conv_backward,
    conv_forward,
    dense_backward,
    dense_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
)
from noisecam.network import (
    build_default_model,
    load_weights,
    predict_batch,
    save_weights,
    train,
)
from noisecam.noise import extract_noise, pca_clean

CACHE = Path(__file__).parent / "_cache"

DATA_SEED = 42
HELDOUT_SEED = 43
MODEL_SEED = 7
TRAIN_SEED = 7
ATTACK_SEED = 9
EPOCHS = 2
LR = 0.05
BATCH = 32
STRENGTHS = (0.25, 0.5, 1.0, 2.0, 4.0)


def _report(capsys, num, name, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {num:>2}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"criterion {num} ({name}): {detail}"


# ---------------------------------------------------------------- fixtures


@pytest.fixture(scope="module")
def ref_model():
    """The reference trained model plus its training history."""
    CACHE.mkdir(exist_ok=True)
    weights = CACHE / "acc_weights.nwv"
    history_path = CACHE / "acc_history.json"
    if weights.exists() and history_path.exists():
        return load_weights(weights), json.loads(history_path.read_text())
    data = gen_dataset(300, DATA_SEED)
    model = build_default_model(seed=MODEL_SEED)
    model, history = train(
        model, data.images, data.labels, EPOCHS, LR, BATCH, TRAIN_SEED
    )
    save_weights(model, weights)
    history_path.write_text(json.dumps(history))
    return model, history


@pytest.fixture(scope="module")
def corpus(ref_model):
    """200-seed attack corpus on the reference model, built once."""
    model, _ = ref_model
    out = CACHE / "acc_corpus"
    if not (out / "manifest.json").exists():
        build_attack_corpus(
            model,
            gen_dataset(40, HELDOUT_SEED),
            AttackConfig(),
            seed=ATTACK_SEED,
            out_dir=out,
            max_seeds=200,
        )
    return out


def _cached_report(model, corpus_dir, method):
    cache_path = CACHE / f"acc_report_{method}.json"
    if cache_path.exists():
        rows = json.loads(cache_path.read_text())
        return DetectionReport(
            method, [EvalItem(r[0], r[1], r[2], bool(r[3]), {}) for r in rows]
        )
    report = run_eval(model, corpus_dir, method, rng_seed=ATTACK_SEED)
    cache_path.write_text(
        json.dumps(
            [
                [it.seed_id, it.kind, it.strength, int(it.adversarial_verdict)]
                for it in report.items
            ]
        )
    )
    return report


@pytest.fixture(scope="module")
def noisecam_report(ref_model, corpus):
    return _cached_report(ref_model[0], corpus, "noisecam")


@pytest.fixture(scope="module")
def deviation_report(ref_model, corpus):
    return _cached_report(ref_model[0], corpus, "deviation")


# ---------------------------------------------------------- criteria 1 - 4


def _fd_positions(rng, analytic, run, x, n_positions, h=1e-5):
    """Relative error of analytic vs central-difference gradients at
    randomly sampled tensor positions. Returns per-position pass flags."""
    flat = x.reshape(-1)
    grad = analytic.reshape(-1)
    oks = []
    for pos in rng.choice(flat.size, size=min(n_positions, flat.size), replace=False):
        keep = flat[pos]
        flat[pos] = keep + h
        up = run()
        flat[pos] = keep - h
        down = run()
        flat[pos] = keep
        fd = (up - down) / (2 * h)
        err = abs(grad[pos] - fd)
        oks.append(err <= 1e-3 * max(abs(grad[pos]), abs(fd)) or err < 1e-7)
    return oks


def test_criterion_01_gradient_correctness(capsys):
    rng = np.random.default_rng(100)
    oks = []
    for trial in range(50):
        cot_cache = {}

        def loss(out, key):
            if key not in cot_cache:
                cot_cache[key] = rng.standard_normal(out.shape)
            return float((out * cot_cache[key]).sum())

        # conv: input, kernel, and bias gradients
        x = rng.standard_normal((1, 6, 6, 2))
        k = rng.standard_normal((3, 3, 2, 3))
        b = rng.standard_normal(3)
        out, cache = conv_forward(x, k, b, 1, 1)
        dx, dk, db = conv_backward(cot_cache.setdefault("c", rng.standard_normal(out.shape)), cache, k)
        run = lambda: loss(conv_forward(x, k, b, 1, 1)[0], "c")
        oks += _fd_positions(rng, dx, run, x, 8)
        oks += _fd_positions(rng, dk, run, k, 8)
        oks += _fd_positions(rng, db, run, b, 4)

        # maxpool
        x = rng.standard_normal((1, 6, 6, 3))
        out, cache = maxpool_forward(x, 2, 2)
        dx = maxpool_backward(cot_cache.setdefault("p", rng.standard_normal(out.shape)), cache)
        oks += _fd_positions(rng, dx, lambda: loss(maxpool_forward(x, 2, 2)[0], "p"), x, 20)

        # relu
        x = rng.standard_normal((1, 5, 5, 2))
        out, cache = relu_forward(x)
        dx = relu_backward(cot_cache.setdefault("r", rng.standard_normal(out.shape)), cache)
        oks += _fd_positions(rng, dx, lambda: loss(relu_forward(x)[0], "r"), x, 20)

        # dense: input, weight, and bias gradients
        x = rng.standard_normal((2, 7))
        w = rng.standard_normal((7, 4))
        b = rng.standard_normal(4)
        out, _ = dense_forward(x, w, b)
        dx, dw, db = dense_backward(cot_cache.setdefault("d", rng.standard_normal(out.shape)), x, w)
        run = lambda: loss(dense_forward(x, w, b)[0], "d")
        oks += _fd_positions(rng, dx, run, x, 7)
        oks += _fd_positions(rng, dw, run, w, 7)
        oks += _fd_positions(rng, db, run, b, 4)

    rate = float(np.mean(oks))
    _report(
        capsys, 1, "gradient correctness", rate >= 0.95,
        f"{rate:.1%} of {len(oks)} finite-difference probes within 1e-3",
    )


def test_criterion_02_cam_hand_oracles(capsys):
    acts = np.ones((2, 2, 1))
    grads = np.ones((2, 2, 1))
    coeff, _, w = gradcam_pp_weights(acts, grads)
    ok = np.allclose(coeff, 1 / 6, atol=1e-6) and abs(w[0] - 2 / 3) < 1e-6

    raw_pp, _ = gradcam_pp_core(acts, grads)
    ok &= np.allclose(raw_pp, 2 / 3, atol=1e-6)

    # exact cancellation: uniform g = 1/2 makes the global and pixel
    # weights coincide, so the noise map must vanish
    raw_nc, weights = noisecam_core(acts, np.full((2, 2, 1), 0.5))
    ok &= np.allclose(weights.noise_weights, 0.0, atol=1e-6)
    ok &= np.allclose(raw_nc, 0.0, atol=1e-6)

    lc_acts = np.array([[1.0, -1.0], [2.0, 0.0]])[:, :, None]
    lc_grads = np.array([[1.0, 2.0], [-1.0, 1.0]])[:, :, None]
    raw_lc, _ = layercam_core(lc_acts, lc_grads)
    ok &= np.allclose(raw_lc, [[1.0, 0.0], [0.0, 0.0]], atol=1e-6)

    center = upsample_bilinear(np.array([[0.0, 1.0], [1.0, 0.0]]), (3, 3))[1, 1]
    ok &= abs(center - 0.5) < 1e-6
    _report(capsys, 2, "CAM hand oracles", bool(ok), "all worked micro-examples within 1e-6")


def test_criterion_03_dbscan_oracle(capsys):
    from test_clustering import dbscan_reference, partition_signature

    rng = np.random.default_rng(101)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(0, 301))
        points = np.unique(rng.integers(0, 40, size=(n, 2)).astype(np.float64), axis=0)
        eps = float(rng.uniform(1.0, 5.0))
        min_pts = int(rng.integers(2, 7))
        result = dbscan(points, eps, min_pts)
        ref_labels, ref_count = dbscan_reference(points, eps, min_pts)
        if result.n_clusters != ref_count or partition_signature(
            result.labels
        ) != partition_signature(ref_labels):
            mismatches += 1
    _report(
        capsys, 3, "DBSCAN oracle equivalence", mismatches == 0,
        f"{200 - mismatches}/200 random point sets partition-identical",
    )


def test_criterion_04_pca_contract(capsys):
    rng = np.random.default_rng(102)
    ok = True
    for _ in range(50):
        image = rng.random((32, 32), dtype=np.float32)
        x = image.astype(np.float64)
        centered = x - x.mean(axis=0)
        evals = np.linalg.eigvalsh(centered.T @ centered / x.shape[0])[::-1]
        ratio = np.cumsum(evals) / evals.sum()
        k = int(np.searchsorted(ratio, 0.99 - 1e-12)) + 1
        ok &= ratio[k - 1] >= 0.99 - 1e-9  # retained
        if k > 1:
            ok &= ratio[k - 2] < 0.99  # minimal
        cleaned = pca_clean(image, 0.99)
        residual = extract_noise(image, cleaned)
        ok &= bool(
            np.array_equal(cleaned.astype(np.float64) + residual, x)
        )  # bit-exact reassembly
    _report(
        capsys, 4, "PCA contract", bool(ok),
        "variance >= 0.99, minimal k, and bit-exact noise reassembly on 50 images",
    )


# --------------------------------------------------------- criteria 5 - 11


def test_criterion_05_attack_yield(capsys, corpus):
    manifest = load_manifest(corpus)
    ok = manifest["attempted"] == 200 and manifest["yield"] >= 0.40
    _report(
        capsys, 5, "attack yield", ok,
        f"{manifest['successes']}/{manifest['attempted']} seeds flipped "
        f"(yield {manifest['yield']:.1%}, need >= 40%)",
    )


def test_criterion_06_benign_noise_robustness(capsys, ref_model, corpus):
    model, _ = ref_model
    manifest = load_manifest(corpus)
    truth = {e["seed_id"]: e["label"] for e in manifest["seeds"]}
    flips = []
    for seed_id, kind, _, image in iter_corpus_items(corpus, strengths=(1.0,)):
        if kind == "gaussian":
            label = int(predict_batch(model, image[None])[0][0])
            flips.append(label != truth[seed_id])
    rate = float(np.mean(flips))
    _report(
        capsys, 6, "benign-noise robustness", rate <= 0.20,
        f"matched Gaussian at strength 1.0 flips {rate:.1%} of {len(flips)} seeds (cap 20%)",
    )


def test_criterion_07_trainability(capsys, ref_model):
    model, history = ref_model
    train_acc = history[-1]["accuracy"]
    heldout = gen_dataset(40, HELDOUT_SEED)
    labels, _ = predict_batch(model, heldout.images)
    heldout_acc = float(np.mean(labels == heldout.labels))
    ok = len(history) <= 30 and train_acc >= 0.90 and heldout_acc >= 0.85
    _report(
        capsys, 7, "trainability", ok,
        f"train {train_acc:.1%} (>=90%), held-out {heldout_acc:.1%} (>=85%) "
        f"in {len(history)} epochs",
    )


def test_criterion_08_deviation_ordering(capsys, ref_model, corpus):
    scipy_stats = pytest.importorskip("scipy.stats")
    model, _ = ref_model
    seeds, d_a, d_g = {}, [], []
    for seed_id, kind, _, image in iter_corpus_items(corpus, strengths=(1.0,)):
        if kind == "clean":
            seeds[seed_id] = image
            continue
        record = behavior_deviation(model, seeds[seed_id], image, "block3_conv1")
        (d_a if kind == "adversarial" else d_g).append(record.similarity)
    med_a, med_g = float(np.median(d_a)), float(np.median(d_g))
    p = scipy_stats.mannwhitneyu(d_a, d_g, alternative="less").pvalue
    ok = len(d_a) >= 100 and med_a < med_g and p < 0.05
    _report(
        capsys, 8, "deviation ordering", ok,
        f"median D_a {med_a:.4f} < D_g {med_g:.4f} over {len(d_a)} triples, "
        f"one-sided Mann-Whitney p = {p:.2e}",
    )


def test_criterion_09_detector_comparison(capsys, noisecam_report, deviation_report):
    acc_nc = noisecam_report.accuracy()
    acc_dev = deviation_report.accuracy()
    tnr_gauss = noisecam_report.tnr(kind="gaussian")
    ok = acc_nc >= acc_dev and tnr_gauss >= 0.7
    _report(
        capsys, 9, "detector comparison", ok,
        f"noisecam accuracy {acc_nc:.4f} vs deviation {acc_dev:.4f}; "
        f"noisecam Gaussian TNR {tnr_gauss:.3f} (>= 0.7)",
    )


def test_criterion_10_strength_insensitivity(capsys, noisecam_report):
    tprs = [noisecam_report.tpr(strength=s) for s in STRENGTHS]
    spread = max(tprs) - min(tprs)
    _report(
        capsys, 10, "strength insensitivity", spread <= 0.15,
        "noisecam TPR by strength "
        + ", ".join(f"{s}: {t:.3f}" for s, t in zip(STRENGTHS, tprs))
        + f" (spread {spread:.3f}, cap 0.15)",
    )


def test_criterion_11_reproducibility(capsys, tmp_path):
    from noisecam.cli import main

    def pipeline(root):
        root = Path(root)
        assert main(["--seed", "42", "--out", str(root / "data"), "gen-data",
                     "--n-per-class", "10"]) == 0
        assert main(["--seed", "7", "--out", str(root / "model"), "train",
                     "--data", str(root / "data"), "--epochs", "2"]) == 0
        assert main(["--seed", "9", "--out", str(root / "corpus"), "attack",
                     "--weights", str(root / "model" / "weights.nwv"),
                     "--data", str(root / "data"), "--max-seeds", "4"]) == 0
        assert main(["--seed", "9", "--out", str(root / "eval"), "eval",
                     "--weights", str(root / "model" / "weights.nwv"),
                     "--corpus", str(root / "corpus"), "--method", "noisecam"]) == 0

    pipeline(tmp_path / "a")
    pipeline(tmp_path / "b")
    targets = [
        "model/weights.nwv",
        "corpus/manifest.json",
        "eval/metrics_noisecam.csv",
        "eval/verdicts_noisecam.csv",
    ]
    identical = [
        rel
        for rel in targets
        if filecmp.cmp(tmp_path / "a" / rel, tmp_path / "b" / rel, shallow=False)
    ]
    ok = identical == targets
    _report(
        capsys, 11, "reproducibility", ok,
        f"{len(identical)}/{len(targets)} artifacts byte-identical across reruns",
    )
