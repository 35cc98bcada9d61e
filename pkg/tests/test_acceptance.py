"""End-to-end checks pinning the package's headline behaviors.

Each test covers one gate: the worked scoring example, index/search
equivalence with exhaustive enumeration, lattice posterior mass, the
closed-loop synthetic experiment (matched accuracy, mismatch drop,
noise trend), threshold-sweep optimality, gradients, signal transform
accuracy, statistics against a frozen reference, splice dimensions,
and run-to-run determinism. A verbose run reads as a checklist, one
pass/fail line per gate.
"""

import json
import time

import numpy as np
import pytest

from latspot.acoustic import FrameClassifier
from latspot.audio_io import Waveform
from latspot.cli import main as cli_main
from latspot.decoder import read_lattices
from latspot.features import FeatureMatrix, splice
from latspot.lattice_index import (
    Detection,
    KeywordFst,
    frame_cut_sums,
    lattice_posteriors,
    search,
)
from latspot.perturb import mix_noise, modify_formants, modify_pitch
from latspot.scoring import RefOccurrence, TrialSet, compute_twv, paired_tests

from test_lattice_index import compare_with_oracle, random_lattice
from test_perturb import (
    SR,
    fft_peak_hz,
    lp_envelope_peak_hz,
    resonant_noise,
    sine,
    snr_db,
    speechlike,
)

SEED = 7
MISMATCH = ("--set", "mean_shift=1.2", "--set", "var_inflation=2.0")
NOISE_LEVELS = (1.5, 2.0, 2.5)


def run_pipeline(out_dir, *extra):
    argv = ["pipeline", "--seed", str(SEED), "--jobs", "1",
            "--out", str(out_dir), *extra]
    assert cli_main(argv) == 0
    return json.loads((out_dir / "report.json").read_text())


@pytest.fixture(scope="module")
def closed_loop(tmp_path_factory):
    """One matched run, one shifted run, three noise levels; timed."""
    root = tmp_path_factory.mktemp("closed_loop")
    t0 = time.perf_counter()
    runs = {"matched": run_pipeline(root / "matched"),
            "shifted": run_pipeline(root / "shifted", *MISMATCH)}
    for level in NOISE_LEVELS:
        runs[f"noise_{level:g}"] = run_pipeline(
            root / f"noise_{level:g}", "--set", f"noise_std={level}")
    elapsed = time.perf_counter() - t0
    return {"root": root, "runs": runs, "elapsed": elapsed}


def test_scoring_hand_example():
    """Two keywords over 100 s of speech: one miss, one false alarm."""
    t0 = time.perf_counter()
    refs = (RefOccurrence("A", "u1", 1.0, 2.0),
            RefOccurrence("A", "u1", 10.0, 11.0),
            RefOccurrence("B", "u1", 20.0, 21.0))
    dets = [Detection("A", "u1", 1.0, 2.0, 0.9),
            Detection("B", "u1", 20.0, 21.0, 0.8),
            Detection("B", "u1", 50.0, 51.0, 0.7)]
    trials = TrialSet(100.0, refs, {"u1": ("spk1", None)})
    rep = compute_twv(dets, trials, beta=999.9, theta=0.5)
    elapsed = time.perf_counter() - t0
    assert rep.atwv == pytest.approx(-4.3, abs=1e-9)
    assert elapsed < 1.0
    print(f"PASS hand example: atwv={rep.atwv:.9f} in {elapsed:.3f} s")


def test_search_matches_exhaustive_enumeration():
    """Index+search on 200 random small lattices against a path walk."""
    t0 = time.perf_counter()
    checked = 0
    for seed in range(200):
        lat = random_lattice(seed)
        assert len(lat.arcs) <= 12
        idx, want = compare_with_oracle(lat, 2)
        for factor, occs in want.items():
            got = search(idx, KeywordFst("-".join(factor), (factor,)))
            assert [(d.start_sec, d.end_sec) for d in got] == [
                (s, e) for s, e, _ in occs]
            for d, (_, _, p) in zip(got, occs):
                assert d.score == pytest.approx(p, abs=1e-9)
            checked += len(occs)
        assert search(idx, KeywordFst("absent", (("Z",),))) == []
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    print(f"PASS search vs enumeration: 200 lattices, "
          f"{checked} occurrences in {elapsed:.2f} s")


def test_lattice_posterior_mass_per_frame(closed_loop):
    """Arc posteriors crossing each frame must sum to one."""
    for name, report in closed_loop["runs"].items():
        assert report["frame_cut_max_err"] <= 1e-6, name
    worst = 0.0
    lats = read_lattices(closed_loop["root"] / "matched" / "lattices.txt")
    for lat in lats:
        sums = frame_cut_sums(lattice_posteriors(lat))
        worst = max(worst, float(np.max(np.abs(sums - 1.0))))
    assert worst <= 1e-6
    print(f"PASS posterior mass: {len(lats)} lattices, "
          f"max |sum-1| = {worst:.2e}")


def test_closed_loop_synthetic_experiment(closed_loop):
    """Matched accuracy, mismatch degradation, noise trend, runtime."""
    runs = closed_loop["runs"]
    matched = runs["matched"]["atwv"]
    shifted = runs["shifted"]["atwv"]
    noisy = [runs[f"noise_{level:g}"]["atwv"] for level in NOISE_LEVELS]
    assert matched >= 0.90
    assert matched - shifted >= 0.10
    assert noisy[0] >= noisy[1] >= noisy[2]
    assert closed_loop["elapsed"] < 300.0
    print(f"PASS closed loop: matched={matched:.4f} "
          f"shifted={shifted:.4f} "
          f"noise={'/'.join(f'{a:.4f}' for a in noisy)} "
          f"in {closed_loop['elapsed']:.0f} s")


def test_threshold_sweep_is_optimal(closed_loop, tmp_path):
    """MTWV bounds ATWV, and rescoring at theta_star reaches it."""
    reached = []
    for name, report in closed_loop["runs"].items():
        assert report["mtwv"] >= report["atwv"], name
        run_dir = closed_loop["root"] / name
        kw_path = tmp_path / "keywords.txt"
        kw_path.write_text(
            "".join(f"{k}\n" for k in report["config"]["keywords"]))
        out = tmp_path / f"rescored_{name}.json"
        assert cli_main([
            "score", "--dets", str(run_dir / "dets.tsv"),
            "--refs", str(run_dir / "test" / "refs.tsv"),
            "--meta", str(run_dir / "test" / "meta.tsv"),
            "--durations", str(run_dir / "test" / "durations.tsv"),
            "--beta", "999.9", "--theta", repr(report["mtwv_threshold"]),
            "--keywords", str(kw_path), "--out", str(out)]) == 0
        rescored = json.loads(out.read_text())
        assert rescored["atwv"] == report["mtwv"], name
        reached.append(rescored["atwv"])
    print(f"PASS threshold sweep: mtwv>=atwv on {len(reached)} runs, "
          f"atwv@theta_star={'/'.join(f'{v:.4f}' for v in reached)}")


def test_gradients_match_finite_differences():
    """Analytic gradients vs central differences on a 5-frame batch."""
    rng = np.random.default_rng(3)
    model = FrameClassifier.initialize(4, (6,), 3, seed=11)
    for arr in (*model.weights, *model.biases):
        arr[...] = 0.5 * rng.standard_normal(arr.shape)
    x = rng.standard_normal((5, 4))
    y = rng.integers(0, 3, 5)
    _, gw, gb = model.loss_and_grads(x, y)
    eps = 1e-6
    worst = 0.0
    n_params = 0
    for params, grads in ((model.weights, gw), (model.biases, gb)):
        for arr, g in zip(params, grads):
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + eps
                up, _, _ = model.loss_and_grads(x, y)
                arr[idx] = orig - eps
                dn, _, _ = model.loss_and_grads(x, y)
                arr[idx] = orig
                numeric = (up - dn) / (2 * eps)
                denom = max(abs(numeric), abs(g[idx]), 1e-8)
                worst = max(worst, abs(numeric - g[idx]) / denom)
                n_params += 1
    assert worst < 1e-4
    print(f"PASS gradient check: {n_params} parameters, "
          f"max rel err = {worst:.2e}")


def test_signal_transform_accuracy():
    """Noise mixing hits its target SNR; pitch and formant shifts land
    where asked; unit factors reconstruct the input."""
    rng = np.random.default_rng(21)
    speech = Waveform(0.05 * rng.standard_normal(4000), SR)
    noise = Waveform(0.05 * rng.standard_normal(2600), SR)
    snr_errs = []
    for target in (5.0, 10.0, 15.0):
        out = mix_noise(speech, noise, target)
        added = out.samples - speech.samples
        achieved = 10.0 * np.log10(speech.power() / np.mean(added**2))
        snr_errs.append(abs(achieved - target))
        assert snr_errs[-1] < 0.01

    tone = sine(200.0)
    shifted = modify_pitch(tone, 0.8)
    assert abs(len(shifted.samples) - len(tone.samples)) <= 128
    peak = fft_peak_hz(shifted.samples)
    assert abs(peak - 160.0) <= SR / len(shifted.samples)

    resonant = resonant_noise(1000.0)
    raised = modify_formants(resonant, 0.1)
    formant = lp_envelope_peak_hz(raised.samples)
    assert abs(formant - 1100.0) <= 25.0

    voice = speechlike(seconds=0.8, seed=4)
    pitch_id = snr_db(voice.samples, modify_pitch(voice, 1.0).samples)
    formant_id = snr_db(voice.samples, modify_formants(voice, 0.0).samples)
    assert pitch_id >= 25.0
    assert formant_id >= 25.0
    print(f"PASS signal transforms: snr errs "
          f"{'/'.join(f'{e:.4f}' for e in snr_errs)} dB, "
          f"pitch peak {peak:.1f} Hz, formant {formant:.0f} Hz, "
          f"identities {pitch_id:.0f}/{formant_id:.0f} dB")


# Reference values computed once with scipy.stats (ttest_rel, and
# wilcoxon with method="exact" below 10 pairs, else the normal
# approximation with continuity correction) and pinned as literals.
FROZEN_PAIRS = (
    ([0.644284, -1.172869, 1.212089, 0.321497, -0.944941, 1.930332, -2.452741, -0.15116],
     [0.997188, -1.009676, 1.104824, 0.1329, -1.698269, 2.260569, -2.6118, -0.37728],
     0.5772459265191785, 0.5818549373440631, 16.0, 0.84375),
    ([-1.293446, -0.214974, 0.832071, -0.572998, 0.684777, 1.114078, -1.097595, -2.607215, 1.324518],
     [-0.510119, 0.161614, 1.154516, 0.107336, 0.951281, 1.390297, -0.82548, -3.03774, 1.024562],
     -1.8889114528847382, 0.09558592542215905, 11.0, 0.203125),
    ([0.354319, 0.308323, 0.645762, -2.530669, 1.400761, 1.082717, 0.59693, 0.307766, 0.131499],
     [0.027804, 0.458871, 1.200171, -2.5657, 1.166563, 1.320467, 0.402541, 0.331702, 0.059861],
     -0.12855816500335449, 0.9008804282568348, 21.0, 0.91015625),
    ([-0.039183, -0.244084, 0.0555, 0.019373, -0.300913, 0.398876, 0.953645, -1.111912, -0.338665, 0.243917, 0.320848, 2.523311],
     [0.303611, 0.2158, 0.537154, 0.592972, 0.050631, 0.883251, 1.146189, -1.037333, -0.384274, 0.334587, 0.765711, 3.01168],
     -5.657609180517974, 0.00014714379668238914, 1.0, 0.0032637169016702288),
    ([-0.179683, 1.126244, 0.606261, -0.206486, -0.998817, -1.252543, -0.677826, -0.687022, 0.839065, 0.508798, -1.267006, -0.190882],
     [-0.399658, 1.447979, 0.396523, -0.679479, -1.077739, -1.218961, -0.63083, -0.814558, 0.823363, 0.523733, -1.020957, 0.101646],
     0.210766673589578, 0.8369229185107083, 38.0, 0.9687124153929956),
    ([-0.572, -0.251515, 0.84051, 0.703951, -0.923452, -0.944629, 0.799364, -0.92015, 0.00459, 1.282569, -1.840408, 1.040147, 1.154373, -2.036599],
     [-0.57679, -0.054063, 1.429757, 0.9307, -0.922345, 0.007127, 1.359774, -0.75999, 0.249652, 1.332985, -1.982146, 1.280835, 1.218582, -2.261765],
     -2.491611296244295, 0.02701261553287372, 15.0, 0.020193670401022157),
    ([-1.83117, -1.768288, -0.105928, -0.894415, -0.358261, 1.052462, -0.593083, 0.25272, -1.670164, -1.48933, 0.179746, 0.62675, 1.694036, 0.366683, -0.312155],
     [-2.18363, -1.565742, 0.043247, -0.817046, -0.414049, 0.934084, -0.523997, -0.387935, -1.828713, -1.567606, 0.785188, 0.548699, 1.345907, 0.621862, -0.147525],
     0.2665588592971226, 0.7936947715349715, 56.0, 0.8424296456125092),
    ([0.037355, 1.1324, 0.466036, -0.56671, -0.161362, 2.201015, 1.134438, 0.158264, -1.058562, -0.483043, 0.489644, -0.442864, 0.529255, 0.695693, -0.34497, 0.219403],
     [-0.269897, 1.024113, 1.165234, -0.911304, 0.381602, 2.691742, 1.675138, 0.436942, -1.296611, 0.385772, 0.457248, -0.382307, 1.25226, 1.173369, 0.06945, 0.467505],
     -2.780818304453729, 0.01399054378381758, 23.0, 0.02138935776678794),
    ([-0.369527, -0.572537, 1.389539, -1.103034, -0.363846, 0.135852, -1.450155, -0.18473, 0.289995, -0.315201, -0.521995, -0.317468, 0.75327, -1.429636, 0.269883, 0.759156, 0.399434, 2.249895],
     [-0.885766, -0.785948, 1.827691, -1.323261, -0.625239, 0.051744, -1.501886, -0.273937, 0.038674, -0.505449, -0.011135, -0.760044, 0.798573, -1.358874, 0.051715, 0.766768, 0.779409, 2.455906],
     0.7244829551690277, 0.4786225899197729, 61.0, 0.2959265995411936),
    ([0.821362, 2.813012, 0.984523, -2.080552, -0.666813, -0.773391, 0.780166, 1.084013, 0.843803, 0.280759, -0.672457, -0.526391, -0.027149, -0.660983, 0.207896, 0.086464, -1.123678, 1.25914, 1.006331, 0.461321],
     [1.532085, 2.901261, 1.231669, -2.122543, -0.855632, -0.69031, 1.69244, 1.637468, 0.711107, 0.435885, -0.664265, -0.146318, 0.249271, -0.483352, 0.803382, -0.273796, -0.738948, 1.421775, 1.270913, 0.9198],
     -3.3751790710477745, 0.003177883053567024, 29.0, 0.004823109615777196),
)


def test_paired_tests_match_frozen_oracle():
    """Both significance tests reproduce pinned reference values."""
    worst = 0.0
    for a, b, t_stat, t_pvalue, w_stat, w_pvalue in FROZEN_PAIRS:
        r = paired_tests(a, b)
        assert r["t_stat"] == pytest.approx(t_stat, abs=1e-9)
        assert r["wilcoxon_stat"] == w_stat
        assert r["t_pvalue"] == pytest.approx(t_pvalue, abs=1e-6)
        assert r["wilcoxon_pvalue"] == pytest.approx(w_pvalue, abs=1e-6)
        worst = max(worst, abs(r["t_pvalue"] - t_pvalue),
                    abs(r["wilcoxon_pvalue"] - w_pvalue))
    print(f"PASS paired tests: {len(FROZEN_PAIRS)} pairs, "
          f"max p-value err = {worst:.2e}")


def test_splice_dimensionality():
    """Context 4 around 13-dim frames gives 9 * 13 = 117 dims."""
    feats = FeatureMatrix(np.arange(130.0).reshape(10, 13), 0.01, "u")
    out = splice(feats, 4)
    assert out.data.shape == (10, 117)
    print("PASS splice: 13 dims, context 4 -> "
          f"{out.data.shape[1]} dims")


def test_pipeline_report_determinism(closed_loop, tmp_path):
    """Same seed, single worker: the report must match byte for byte."""
    first = (closed_loop["root"] / "matched" / "report.json").read_bytes()
    again = run_pipeline(tmp_path / "again")
    second = (tmp_path / "again" / "report.json").read_bytes()
    assert second == first
    assert again["atwv"] == closed_loop["runs"]["matched"]["atwv"]
    print(f"PASS determinism: report.json identical across runs "
          f"({len(first)} bytes)")
