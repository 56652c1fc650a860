"""Experiment harness: attack corpus, detector evaluation, figure tables.

A corpus directory holds, per successfully attacked seed, the seed image
and the adversarial / matched-Gaussian noise fields at every strength,
plus a manifest. Reports are CSV tables keyed by (kind, strength).
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import clustering, deviation
from .attack import AttackConfig, Perturbation, amplify, derive_perturbation
from .cams import gradcam_core, gradcam_pp, layercam, noisecam, normalize_map, upsample_bilinear, cosine_similarity
from .dataset import LabeledImages
from .deviation import DeviationRecord, compromise_profile, gradcam_maps_batch
from .fileio import load_ntf, save_ntf, save_pgm, save_ppm
from .network import forward, predict, predict_batch, score_gradients
from .noise import gaussian_blur, noise_stats, sample_matched_gaussian


class DataError(RuntimeError):
    """Missing or inconsistent run artifacts."""


@dataclass
class EvalItem:
    seed_id: str
    kind: str  # clean | gaussian | adversarial
    strength: float
    adversarial_verdict: bool
    evidence: dict


@dataclass
class DetectionReport:
    method: str
    items: list = field(default_factory=list)

    def _rate(self, selected):
        flags = [it.adversarial_verdict for it in selected]
        return float(np.mean(flags)) if flags else None

    def tpr(self, strength=None):
        sel = [
            it
            for it in self.items
            if it.kind == "adversarial"
            and (strength is None or it.strength == strength)
        ]
        return self._rate(sel)

    def tnr(self, kind=None):
        sel = [
            it
            for it in self.items
            if it.kind in ("clean", "gaussian") and (kind is None or it.kind == kind)
        ]
        r = self._rate(sel)
        return None if r is None else 1.0 - r

    def accuracy(self):
        correct = [
            it.adversarial_verdict == (it.kind == "adversarial") for it in self.items
        ]
        return float(np.mean(correct)) if correct else None


def write_manifest(directory, payload):
    path = Path(directory) / "manifest.json"
    for rel in payload.get("files", []):
        if not (Path(directory) / rel).exists():
            raise DataError(f"manifest references missing file {rel}")
    path.write_text(json.dumps(payload, sort_keys=True, indent=1))
    return path


def load_manifest(directory):
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise DataError(f"no manifest in {directory}")
    return json.loads(path.read_text())


def build_attack_corpus(model, dataset, cfg, seed, out_dir, max_seeds=200):
    """Attack correctly classified seeds; emit noise fields per strength.

    Returns the manifest dict (also written to out_dir/manifest.json).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels_pred, _ = predict_batch(model, dataset.images)
    correct = np.nonzero(labels_pred == dataset.labels)[0]
    if len(correct) == 0:
        raise DataError("model classifies no seed correctly; train it first")
    attempted = correct[:max_seeds]

    entries, files = [], []
    n_success = 0
    for order, idx in enumerate(attempted):
        image = dataset.images[idx]
        seed_id = f"seed_{order:03d}"
        result = derive_perturbation(
            model, image, cfg, true_label=int(dataset.labels[idx]), seed_id=seed_id
        )
        entry = {
            "seed_id": seed_id,
            "dataset_index": int(idx),
            "label": int(dataset.labels[idx]),
            "success": result.success,
            "iterations": result.iterations,
            "adversarial_label": result.adversarial_label,
            "coverage": result.coverage,
            "variants": [],
        }
        if result.success:
            n_success += 1
            seed_dir = out_dir / seed_id
            seed_dir.mkdir(exist_ok=True)
            rel = f"{seed_id}/seed.ntf"
            save_ntf(out_dir / rel, image)
            files.append(rel)
            stats = noise_stats(result.perturbation)
            gauss_base = sample_matched_gaussian(
                stats, rng_seed=seed * 100003 + order, seed_id=seed_id
            )
            for ratio in cfg.strengths:
                for base in (result.perturbation, gauss_base):
                    variant = amplify(base, ratio, image)
                    rel = f"{seed_id}/{variant.kind}_s{ratio}.ntf"
                    save_ntf(out_dir / rel, variant.noise)
                    files.append(rel)
                    vstats = noise_stats(variant)
                    entry["variants"].append(
                        {
                            "kind": variant.kind,
                            "strength": ratio,
                            "file": rel,
                            "mu": vstats.mu,
                            "sigma": vstats.sigma,
                        }
                    )
        entries.append(entry)

    manifest = {
        "run_id": f"attack-{seed}",
        "seed": seed,
        "config": {
            "delta": cfg.delta,
            "lambda": cfg.lam,
            "top_k": cfg.top_k,
            "n_neurons": cfg.n_neurons,
            "step_size": cfg.step_size,
            "max_iters": cfg.max_iters,
            "strengths": list(cfg.strengths),
        },
        "attempted": len(attempted),
        "successes": n_success,
        "yield": n_success / len(attempted),
        "seeds": entries,
        "files": files,
    }
    write_manifest(out_dir, manifest)
    return manifest


def iter_corpus_items(corpus_dir, max_seeds=None, strengths=None):
    """Yield (seed_id, kind, strength, image) for clean + all variants."""
    corpus_dir = Path(corpus_dir)
    manifest = load_manifest(corpus_dir)
    count = 0
    for entry in manifest["seeds"]:
        if not entry["success"]:
            continue
        if max_seeds is not None and count >= max_seeds:
            break
        count += 1
        seed_path = corpus_dir / entry["seed_id"] / "seed.ntf"
        if not seed_path.exists():
            raise DataError(f"missing corpus file {seed_path}")
        image = load_ntf(seed_path)
        yield entry["seed_id"], "clean", 0.0, image
        for variant in entry["variants"]:
            if strengths is not None and variant["strength"] not in strengths:
                continue
            noise = load_ntf(corpus_dir / variant["file"])
            perturbed = np.clip(image + noise, 0.0, 1.0)
            yield entry["seed_id"], variant["kind"], variant["strength"], perturbed


def run_eval(
    model,
    corpus_dir,
    method,
    probe_layer=None,
    rng_seed=0,
    max_seeds=None,
    n_samples=50,
    fraction=clustering.DEFAULT_FRACTION,
    eps=clustering.DEFAULT_EPS,
    min_pts=clustering.DEFAULT_MIN_PTS,
):
    """Run one detector over every corpus item. Returns a DetectionReport."""
    if method not in ("noisecam", "deviation"):
        raise ValueError(f"unknown detector {method!r}")
    if probe_layer is None:
        probe_layer = (
            clustering.DEFAULT_PROBE_LAYER
            if method == "noisecam"
            else deviation.DEFAULT_PROBE_LAYER
        )
    report = DetectionReport(method=method)
    for i, (seed_id, kind, strength, image) in enumerate(
        iter_corpus_items(corpus_dir, max_seeds)
    ):
        if method == "noisecam":
            v = clustering.detect_by_noisecam(
                model, image, probe_layer, fraction=fraction, eps=eps, min_pts=min_pts
            )
            evidence = {
                "n_clusters": v.n_clusters,
                "n_points": v.n_points,
                "cluster_sizes": v.cluster_sizes,
            }
            flag = v.adversarial
        else:
            v = deviation.detect_by_deviation(
                model,
                image,
                probe_layer,
                n_samples=n_samples,
                rng_seed=rng_seed * 1000003 + i,
            )
            evidence = {
                "similarity": v.similarity,
                "benign_median": v.benign_median,
                "benign_mad": v.benign_mad,
                "threshold": v.threshold,
            }
            flag = v.adversarial
        report.items.append(EvalItem(seed_id, kind, strength, flag, evidence))
    return report


def report_to_csv(report, out_dir, strengths):
    """verdicts.csv (per item) and metrics.csv (aggregates per strength)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    verdicts = out_dir / f"verdicts_{report.method}.csv"
    with open(verdicts, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["seed_id", "kind", "strength", "verdict"])
        for it in report.items:
            writer.writerow(
                [it.seed_id, it.kind, it.strength, int(it.adversarial_verdict)]
            )
    metrics = out_dir / f"metrics_{report.method}.csv"
    with open(metrics, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["metric", "strength", "value"])

        def cell(value):
            return "" if value is None else f"{value:.6f}"

        writer.writerow(["accuracy", "all", cell(report.accuracy())])
        writer.writerow(["tpr", "all", cell(report.tpr())])
        writer.writerow(["tnr", "all", cell(report.tnr())])
        writer.writerow(["tnr_gaussian", "all", cell(report.tnr(kind="gaussian"))])
        writer.writerow(["tnr_clean", "all", cell(report.tnr(kind="clean"))])
        for s in strengths:
            writer.writerow(["tpr", s, cell(report.tpr(strength=s))])
    return [verdicts, metrics]


def deviation_profile(model, seed_image, perturbed, kind, strength):
    """DeviationRecords at every conv layer from one forward/backward."""
    category, _ = predict(model, np.clip(seed_image, 0.0, 1.0))
    batch = np.stack([seed_image, perturbed]).astype(np.float32)
    _, tape = forward(model, batch)
    _, fields = score_gradients(model, tape, category)
    target = model.input_shape[:2]
    records = []
    for cid in model.conv_layer_ids():
        acts = tape.activation(model, cid)
        grads = fields[cid]
        maps = [
            normalize_map(upsample_bilinear(gradcam_core(acts[i], grads[i]), target))
            for i in (0, 1)
        ]
        records.append(
            DeviationRecord(cid, cosine_similarity(maps[0], maps[1]), kind, strength)
        )
    return records


def collect_deviation_records(model, corpus_dir, max_seeds=None, strengths=None):
    """All-layer deviation records for every variant in the corpus."""
    corpus_dir = Path(corpus_dir)
    seeds = {}
    records = []
    for seed_id, kind, strength, image in iter_corpus_items(
        corpus_dir, max_seeds, strengths
    ):
        if kind == "clean":
            seeds[seed_id] = image
            continue
        records.extend(
            deviation_profile(model, seeds[seed_id], image, kind, strength)
        )
    return records


def export_figures(model, corpus_dir, out_dir, max_seeds=20, n_panels=3):
    """CSV analogs of the deviation, compromise, and metric plots, plus
    per-sample image panels."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []

    records = collect_deviation_records(model, corpus_dir, max_seeds)
    strengths = sorted({r.strength for r in records})
    layer_ids = model.conv_layer_ids()

    with open(out_dir / "deviation_by_layer.csv", "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["layer_id", "strength", "median_adversarial", "median_gaussian"])
        for cid in layer_ids:
            for s in strengths:
                adv = [
                    r.similarity
                    for r in records
                    if r.layer_id == cid and r.strength == s and r.kind == "adversarial"
                ]
                gau = [
                    r.similarity
                    for r in records
                    if r.layer_id == cid and r.strength == s and r.kind == "gaussian"
                ]
                writer.writerow(
                    [cid, s, f"{np.median(adv):.6f}", f"{np.median(gau):.6f}"]
                )
    files.append("deviation_by_layer.csv")

    with open(out_dir / "compromise_probability.csv", "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["layer_id", "strength", "threshold", "probability"])
        for cid in layer_ids:
            profile = compromise_profile(records, cid, min_samples=1)
            for s, prob in profile.probability_per_strength.items():
                writer.writerow([cid, s, f"{profile.threshold:.6f}", f"{prob:.6f}"])
    files.append("compromise_probability.csv")

    panel_dir = out_dir / "panels"
    done = 0
    for seed_id, kind, strength, image in iter_corpus_items(corpus_dir):
        if kind != "adversarial" or strength != 1.0 or done >= n_panels:
            continue
        done += 1
        sample_dir = panel_dir / seed_id
        sample_dir.mkdir(parents=True, exist_ok=True)
        corpus_dir_p = Path(corpus_dir)
        seed_image = load_ntf(corpus_dir_p / seed_id / "seed.ntf")
        noise = image - seed_image
        layer = clustering.DEFAULT_PROBE_LAYER
        nmap = noisecam(model, image, layer)
        ppmap, _ = gradcam_pp(model, image, layer, nmap.category)
        lcmap, _ = layercam(model, image, layer, nmap.category)
        save_ppm(sample_dir / "image.ppm", image)
        save_ppm(sample_dir / "perturbation.ppm", normalize_map(noise.mean(axis=2))[:, :, None].repeat(3, axis=2))
        save_pgm(sample_dir / "noisecam.pgm", nmap.values)
        save_pgm(sample_dir / "gradcampp.pgm", ppmap.values)
        save_pgm(sample_dir / "layercam.pgm", lcmap.values)
        for name in ("image.ppm", "perturbation.ppm", "noisecam.pgm", "gradcampp.pgm", "layercam.pgm"):
            files.append(f"panels/{seed_id}/{name}")

        # cluster overlay for the same sample, outside the 5-image panel set
        points = clustering.binarize_map(nmap)
        overlay = clustering.cluster_overlay(
            nmap.values.shape, points, clustering.dbscan(points)
        )
        overlay_dir = out_dir / "overlays"
        overlay_dir.mkdir(parents=True, exist_ok=True)
        save_ppm(overlay_dir / f"{seed_id}.ppm", overlay)
        files.append(f"overlays/{seed_id}.ppm")

    manifest = {
        "run_id": "figures",
        "source_corpus": str(Path(corpus_dir).name),
        "files": files,
    }
    write_manifest(out_dir, manifest)
    return manifest


def blur_baseline(model, corpus_dir, radius=1.5, max_seeds=None):
    """Classification accuracy of blurred clean / Gaussian / adversarial
    inputs, against the seed's true label."""
    manifest = load_manifest(corpus_dir)
    label_by_seed = {e["seed_id"]: e["label"] for e in manifest["seeds"]}
    rows = {}
    for seed_id, kind, strength, image in iter_corpus_items(corpus_dir, max_seeds):
        if kind != "clean" and strength != 1.0:
            continue
        truth = label_by_seed[seed_id]
        blurred = gaussian_blur(image, radius)
        plain_label, _ = predict(model, image)
        blur_label, _ = predict(model, blurred)
        bucket = rows.setdefault(kind, {"plain": [], "blurred": []})
        bucket["plain"].append(plain_label == truth)
        bucket["blurred"].append(blur_label == truth)
    return {
        kind: {
            "accuracy_plain": float(np.mean(b["plain"])),
            "accuracy_blurred": float(np.mean(b["blurred"])),
            "n": len(b["plain"]),
        }
        for kind, b in rows.items()
    }
