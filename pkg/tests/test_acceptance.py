"""Acceptance criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v`` for the per-criterion
pass/fail lines (each test also prints a CRITERION summary line, visible
with ``-s``). The end-to-end criteria share one 400-record synthetic
dataset, generated once per session through the CLI.
"""

import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from cardiofusion import cli, ecg, network, spectral
from cardiofusion.dataio import (
    EcgRecord,
    GrayImage,
    load_manifest,
    parse_ecg_csv,
    parse_pgm,
    read_csv,
    write_ecg_csv,
    write_pgm,
)
from cardiofusion.emd import emd_1d, emd_bruteforce
from cardiofusion.evaluate import ConfusionMatrix, anova_f, f_sf, one_vs_rest_metrics
from cardiofusion.spectral import Spectrum, normalize

SYNTH_SEED = 42
TRAIN_SEED = 7
N_PER_CLASS = 100


def report(n, message):
    print(f"CRITERION {n} PASS: {message}")


# ---------------------------------------------------------------------------
# Shared end-to-end chain (criteria 7, 8, 9, 11 ride on this dataset)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def chain(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    data = root / "data"
    features = root / "features.csv"
    model = root / "model.json"
    rep = root / "report"
    t0 = time.monotonic()
    assert cli.main(["synth", "--out", str(data), "--n", str(N_PER_CLASS),
                     "--seed", str(SYNTH_SEED)]) == 0
    assert cli.main(["featurize", "--manifest", str(data / "manifest.json"),
                     "--mode", "fft-emd", "--out", str(features)]) == 0
    assert cli.main(["train", "--features", str(features), "--epochs", "150",
                     "--seed", str(TRAIN_SEED), "--out", str(model)]) == 0
    assert cli.main(["eval", "--model", str(model), "--features", str(features),
                     "--split", "test", "--out", str(rep)]) == 0
    elapsed = time.monotonic() - t0
    overall = json.loads(rep.with_suffix(".json").read_text())["overall"]
    return {"root": root, "data": data, "features": features, "model": model,
            "report": rep, "elapsed": elapsed, "overall": overall}


# ---------------------------------------------------------------------------
# 1. FFT vs naive DFT
# ---------------------------------------------------------------------------

def test_c01_fft_oracle_and_parseval():
    rng = np.random.default_rng(101)
    t0 = time.monotonic()
    worst_match = 0.0
    worst_parseval = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 1025))
        x = rng.normal(size=n) + 1j * rng.normal(size=n)
        fast = spectral.fft(x)
        naive = spectral.dft_naive(x)
        scale = float(np.max(np.abs(naive)))
        worst_match = max(worst_match, float(np.max(np.abs(fast - naive))) / scale)
        energy = float(np.sum(np.abs(x) ** 2))
        worst_parseval = max(worst_parseval,
                             abs(energy - float(np.sum(np.abs(fast) ** 2)) / n) / energy)
    elapsed = time.monotonic() - t0
    assert worst_match < 1e-9
    assert worst_parseval < 1e-9
    assert elapsed < 10.0
    report(1, f"200 mixed-length series, max rel err {worst_match:.2e}, "
              f"Parseval {worst_parseval:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. 2D DFT vs direct double sum
# ---------------------------------------------------------------------------

def test_c02_fft2_oracle():
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(20):
        h = int(rng.integers(2, 33))
        w = int(rng.integers(2, 33))
        img = rng.normal(size=(h, w))
        fast = spectral.fft2(img)
        naive = spectral.dft2_naive(img)
        worst = max(worst, float(np.max(np.abs(fast - naive)))
                    / float(np.max(np.abs(naive))))
    assert worst < 1e-9
    report(2, f"20 images up to 32x32, max rel err {worst:.2e}")


# ---------------------------------------------------------------------------
# 3. EMD closed form vs bijection enumeration, metric axioms
# ---------------------------------------------------------------------------

def test_c03_emd_oracle_and_metric_axioms():
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(1, 8))
        p = rng.normal(size=n)
        q = rng.normal(size=n)
        centers = np.unique(np.concatenate([p, q]))
        wp = np.array([np.sum(p == c) for c in centers], dtype=float) / n
        wq = np.array([np.sum(q == c) for c in centers], dtype=float) / n
        closed = emd_1d(Spectrum(wp, centers), Spectrum(wq, centers)) * n
        brute = emd_bruteforce(p, q)
        worst = max(worst, abs(closed - brute))
    assert worst < 1e-9

    for _ in range(500):
        centers = np.sort(rng.random(9)) + np.arange(9) * 1e-6
        p, q, r = (normalize(rng.random(9) + 1e-6, centers) for _ in range(3))
        dpq = emd_1d(p, q)
        assert dpq >= 0
        assert dpq == pytest.approx(emd_1d(q, p), abs=1e-12)
        assert emd_1d(p, p) <= 1e-12
        assert emd_1d(p, r) <= dpq + emd_1d(q, r) + 1e-9
    report(3, f"500 point sets vs factorial enumeration, max gap {worst:.2e}; "
              f"metric axioms on 500 triples")


# ---------------------------------------------------------------------------
# 4. Gradient check, all parameters of the default network
# ---------------------------------------------------------------------------

def test_c04_gradient_check_full_default_network():
    spec = network.default_spec(seed=104)
    weights = network.init_network(spec)
    rng = np.random.default_rng(104)
    x = rng.normal(size=(2, spec.input_len))
    y = np.array([1, 3])
    analytic = network.backward(weights, spec, (x, y))

    def loss_now():
        probs = network.forward_batch(weights, spec, x)
        val, _ = network.batch_loss(probs, y)
        return val

    h = 1e-5
    worst = 0.0
    n_params = 0
    for p, g in zip(weights, analytic):
        if p is None:
            continue
        for attr in ("w", "b"):
            arr = getattr(p, attr).reshape(-1)
            ga = getattr(g, attr).reshape(-1)
            for i in range(arr.size):
                orig = arr[i]
                arr[i] = orig + h
                lp = loss_now()
                arr[i] = orig - h
                lm = loss_now()
                arr[i] = orig
                gn = (lp - lm) / (2 * h)
                rel = abs(ga[i] - gn) / max(1e-6, abs(ga[i]), abs(gn))
                worst = max(worst, rel)
                n_params += 1
    assert worst < 1e-4
    report(4, f"{n_params} parameters, max rel err vs central differences {worst:.2e}")


# ---------------------------------------------------------------------------
# 5. Loss and softmax fixtures
# ---------------------------------------------------------------------------

def test_c05_loss_and_softmax_fixtures():
    assert network.loss(np.full(4, 0.25), 1) == pytest.approx(np.log(4.0), abs=1e-12)
    spec = network.NetworkSpec(4, [network.LayerSpec("flatten"),
                                   network.LayerSpec("dense", out_dim=4),
                                   network.LayerSpec("softmax")], seed=5)
    weights = network.init_network(spec)
    rng = np.random.default_rng(105)
    logits_in = rng.normal(scale=20.0, size=(1000, 4))
    probs = network.forward_batch(weights, spec, logits_in)
    assert np.max(np.abs(probs.sum(axis=1) - 1.0)) < 1e-12
    assert np.all(probs > 0)
    report(5, "uniform loss = ln 4 within 1e-12; 1000 softmax sums within 1e-12")


# ---------------------------------------------------------------------------
# 6. Statistics fixtures
# ---------------------------------------------------------------------------

def test_c06_statistics_fixtures():
    res = anova_f([[1, 2, 3], [2, 3, 4], [3, 4, 5], [4, 5, 6]])
    assert res.f_stat == pytest.approx(5.0, abs=1e-9)
    assert 0.025 < res.p_value < 0.05

    def f_pdf(x, d1, d2):
        import math
        if x <= 0:
            return 0.0
        return np.exp((d1 / 2) * np.log(d1 / d2) + (d1 / 2 - 1) * np.log(x)
                      - ((d1 + d2) / 2) * np.log(1 + d1 * x / d2)
                      - (math.lgamma(d1 / 2) + math.lgamma(d2 / 2)
                         - math.lgamma((d1 + d2) / 2)))

    worst = 0.0
    for d1 in (1, 2, 4, 9):
        for d2 in (1, 3, 8, 15):
            for f in (0.2, 1.0, 3.0, 8.0):
                oracle, _ = integrate.quad(f_pdf, f, np.inf, args=(d1, d2), limit=300)
                worst = max(worst, abs(f_sf(f, d1, d2) - oracle))
    assert worst < 1e-8

    counts = np.zeros((4, 4), dtype=int)
    counts[0, 0], counts[0, 1], counts[1, 0], counts[1, 1] = 8, 2, 4, 6
    m = one_vs_rest_metrics(ConfusionMatrix(counts), 0)
    assert (m.accuracy, m.sensitivity, m.specificity) == (0.70, 0.80, 0.60)
    report(6, f"F fixture 5.0, p={res.p_value:.4f}; f_sf vs quadrature {worst:.2e}; "
              f"metrics fixture exact")


# ---------------------------------------------------------------------------
# 7. End-to-end synthetic run
# ---------------------------------------------------------------------------

def test_c07_end_to_end_accuracy_and_runtime(chain):
    assert chain["elapsed"] < 300.0
    acc = chain["overall"]["accuracy"]
    assert acc >= 0.85
    cols, rows = read_csv(chain["report"].with_suffix(".csv"))
    assert cols == ["class", "accuracy", "sensitivity", "specificity"]
    assert [r[0] for r in rows[:4]] == ["C1", "C2", "C3", "C4"]
    _hc, hist_rows = read_csv(chain["root"] / "model_history.csv")
    assert len(hist_rows) == 150
    final_train_acc = float(hist_rows[-1][2])
    assert final_train_acc >= 0.95
    report(7, f"synth->featurize->train->eval in {chain['elapsed']:.0f}s, "
              f"held-out accuracy {acc:.3f} (>= 0.85), final train acc "
              f"{final_train_acc:.3f}, 150 history rows, 4 class rows present")


# ---------------------------------------------------------------------------
# 8. Comparative ordering
# ---------------------------------------------------------------------------

def test_c08_comparative_ordering(chain):
    out = chain["root"] / "table.csv"
    rc = cli.main(["compare", "--manifest", str(chain["data"] / "manifest.json"),
                   "--methods", "fft-emd,wt,hog", "--seed", str(TRAIN_SEED),
                   "--epochs", "60", "--out", str(out)])
    assert rc == 0
    cols, rows = read_csv(out)
    assert cols == ["method", "accuracy", "sensitivity", "specificity"]
    assert len(rows) == 3
    acc = {r[0]: float(r[1]) for r in rows}
    assert acc["fft-emd"] >= acc["wt"]
    assert acc["fft-emd"] >= acc["hog"]
    report(8, f"fft-emd {acc['fft-emd']:.1f}% >= wt {acc['wt']:.1f}% and "
              f">= hog {acc['hog']:.1f}%, Table-shape columns exact")


# ---------------------------------------------------------------------------
# 9. ANOVA on synthetic ground truth
# ---------------------------------------------------------------------------

def test_c09_tortuosity_anova_significant(chain):
    stem = chain["root"] / "anova"
    emd_cols = "emd_ecg_normal,emd_ecg_abnormal,emd_fundus_normal,emd_fundus_abnormal"
    rc = cli.main(["anova", "--features", str(chain["features"]),
                   "--columns", "tortuosity," + emd_cols, "--out", str(stem)])
    assert rc == 0
    _cols, rows = read_csv(stem.with_suffix(".csv"))
    p_value = float(rows[0][2])
    assert p_value < 0.01
    # separability sanity: at least one transport-distance component also
    # differs across classes at p < 0.01
    emd_p = min(float(r[2]) for r in rows[1:])
    assert emd_p < 0.01
    report(9, f"generator tortuosity differs across classes, p={p_value:.3g} < 0.01; "
              f"best EMD component p={emd_p:.3g}")


# ---------------------------------------------------------------------------
# 10. Determinism and round trips
# ---------------------------------------------------------------------------

def _tree_hash(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_c10_determinism_and_round_trips(tmp_path, monkeypatch):
    # identical flags + seeds -> byte-identical dataset, features, model, report
    hashes = []
    for sub in ("runA", "runB"):
        work = tmp_path / sub
        work.mkdir()
        monkeypatch.chdir(work)
        assert cli.main(["synth", "--out", "ds", "--n", "2", "--seed", "6"]) == 0
        assert cli.main(["featurize", "--manifest", "ds/manifest.json",
                         "--out", "features.csv"]) == 0
        assert cli.main(["train", "--features", "features.csv", "--epochs", "5",
                         "--seed", "3", "--out", "model.json"]) == 0
        assert cli.main(["eval", "--model", "model.json", "--features", "features.csv",
                         "--split", "train", "--out", "report"]) == 0
        tree = _tree_hash(work)
        tree = {k: v for k, v in tree.items() if not k.endswith(".png")}
        hashes.append(tree)
    assert hashes[0] == hashes[1]

    # model save/load preserves predictions within 1e-12
    monkeypatch.chdir(tmp_path / "runA")
    spec, weights, _t, _p = network.load_model("model.json")
    rng = np.random.default_rng(110)
    xs = rng.normal(size=(100, spec.input_len))
    before = network.forward_batch(weights, spec, xs)
    spec2, weights2, _t2, _p2 = network.load_model("model.json")
    after = network.forward_batch(weights2, spec2, xs)
    assert np.max(np.abs(before - after)) < 1e-12

    # dataio round trips
    rec = EcgRecord(rng.normal(size=1000), fs=500.0, label="normal", id="rt")
    write_ecg_csv(rec, tmp_path / "rt.csv")
    back = parse_ecg_csv(tmp_path / "rt.csv")
    assert np.array_equal(back.samples, rec.samples)
    img = GrayImage(rng.integers(0, 65536, size=(32, 32)) / 65535.0, id="img")
    write_pgm(img, tmp_path / "rt.pgm")
    assert np.array_equal(parse_pgm(tmp_path / "rt.pgm").pixels, img.pixels)
    report(10, "byte-identical reruns (dataset, features, model, report); "
               "save/load preds within 1e-12; ECG/PGM round trips exact")


# ---------------------------------------------------------------------------
# 11. Preprocessing fixtures
# ---------------------------------------------------------------------------

def test_c11_bandpass_and_detector_recall(chain):
    kernel = ecg.design_bandpass(500.0)
    dc = ecg.apply_filter(EcgRecord(np.full(5000, 5.0), fs=500.0), kernel)
    assert np.max(np.abs(dc.samples)) < 0.05
    t = np.arange(5000) / 500.0
    mains = ecg.apply_filter(EcgRecord(np.sin(2 * np.pi * 60.0 * t), fs=500.0), kernel)
    attenuation = 1.0 / np.max(np.abs(mains.samples[500:-500]))
    assert attenuation >= 10.0

    man = load_manifest(chain["data"] / "manifest.json")
    normals = sorted((r for r in man.records if r.ecg_label == "normal"),
                     key=lambda r: r.id)[:100]
    assert len(normals) == 100
    total = matched = 0
    for entry in normals:
        rec = parse_ecg_csv(entry.ecg_path)
        truth_path = chain["data"] / "truth" / f"{entry.id}.json"
        truth = json.loads(truth_path.read_text())["true_peaks_s"]
        peaks = ecg.detect_r_peaks(ecg.apply_filter(rec, kernel)) / rec.fs
        for tp in truth:
            total += 1
            if peaks.size and np.min(np.abs(peaks - tp)) <= 0.020:
                matched += 1
    recall = matched / total
    assert recall >= 0.99
    report(11, f"DC residual < 1%, 60 Hz attenuation {attenuation:.0f}x >= 10x, "
               f"detector recall {recall:.4f} over {total} true peaks in 100 records")
