"""Acceptance criteria 1-7; each test is tagged with its criterion and a PASS/FAIL line is printed at the end."""

import json
import time

import numpy as np
import pytest

from tempoaudio import dsp
from tempoaudio.captions import (EventSchedule, FrequencySpec, TimestampMatrix, freq_to_schedule,
                                 matrix_to_schedule, parse_frequency_caption, parse_timestamp_caption,
                                 schedule_to_matrix, serialize_frequency_caption, serialize_timestamp_caption)
from tempoaudio.diffusion import (DenoiserParams, TrainConfig, diffusion_loss, forward_marginal, make_schedule,
                                  render_schedules, reverse_step, train)
from tempoaudio.diffusion.codec import latent_to_energy
from tempoaudio.diffusion.sampling import sample
from tempoaudio.diffusion.schedule import NoiseSchedule, forward_step
from tempoaudio.grounding import detect_events
from tempoaudio.metrics import GaussianStats, SegmentScore, evaluate_system, freq_l1, frechet_distance, segment_f1
from tempoaudio.simulate import read_manifest, schedule_from_record

from oracles import brute_force_segments, finite_difference_check, frechet_oracle, oracle_eps

C1 = "caption/matrix round trips on 1000 random cases; 'dog barking at 2-3' sets columns 50..74"
C2 = "freq_to_schedule reproduces counts exactly on 500 random specs"
C3 = "simulated audio scored against its own schedules: F1 >= 0.95, L1 <= 0.1"
C4 = "metric oracles: segment F1 exact, 1-D Frechet = 1.0, 5-D Frechet within 1e-6"
C5 = "diffusion math: Monte-Carlo marginal, oracle reconstruction, finite-difference gradients"
C6 = "timestamp conditioning beats the O-zeroed ablation (F1 +0.05, lower L1) over 3 seeds"
C7 = "bank -> simulate -> train -> generate -> evaluate is byte-identical across two runs"


def _random_schedule(rng, names, grid=0.01, clip=10.0):
    cells = int(round(clip / grid))
    entries = {}
    for name in rng.choice(names, size=rng.integers(0, min(5, len(names) + 1)), replace=False):
        cuts = np.sort(rng.choice(cells + 1, size=2 * rng.integers(1, 5), replace=False))
        ivs = []
        for a, b in zip(cuts[::2], cuts[1::2]):
            if ivs and a <= ivs[-1][1]:
                continue
            ivs.append((round(a * grid, 2), round(b * grid, 2)))
        entries[str(name)] = ivs
    return EventSchedule(clip, entries)


# --- 1 ------------------------------------------------------------------------

@pytest.mark.criterion(1, C1)
def test_c1_caption_matrix(classes, record_property):
    names = [c.name for c in classes]
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    s = parse_timestamp_caption("dog barking at 2-3")
    row = schedule_to_matrix(s, names).data[names.index("dog barking")]
    assert np.flatnonzero(row).tolist() == list(range(50, 75))
    for _ in range(1000):
        sched = _random_schedule(rng, names)
        assert parse_timestamp_caption(serialize_timestamp_caption(sched)) == sched
        spec = FrequencySpec({str(n): int(rng.integers(1, 10))
                              for n in rng.choice(names, size=rng.integers(1, 6), replace=False)})
        assert parse_frequency_caption(serialize_frequency_caption(spec)) == spec
        on_grid = _random_schedule(rng, names, grid=0.04)
        assert matrix_to_schedule(schedule_to_matrix(on_grid, names)) == on_grid
        data = (rng.random((18, 250)) < rng.uniform(0.02, 0.9)).astype(np.uint8)
        m = TimestampMatrix(data, 0.04, names, 10.0)
        assert schedule_to_matrix(matrix_to_schedule(m), names) == m
    elapsed = time.perf_counter() - start
    record_property("seconds", round(elapsed, 2))
    assert elapsed < 10


# --- 2 ------------------------------------------------------------------------

@pytest.mark.criterion(2, C2)
def test_c2_frequency_exactness(bank, record_property):
    names = bank.class_names
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    specs, realized = [], []
    for i in range(500):
        chosen = rng.choice(names, size=rng.integers(1, 4), replace=False)
        spec = FrequencySpec({str(n): int(rng.integers(1, 4)) for n in chosen})
        sched = freq_to_schedule(spec, bank.stats, 10.0, seed=i)
        # go through the text form, as generation does
        text_level = parse_timestamp_caption(serialize_timestamp_caption(sched))
        specs.append(spec)
        realized.append(FrequencySpec(text_level.counts()))
        assert text_level.counts() == spec.counts
    l1 = freq_l1(specs, realized, names)
    elapsed = time.perf_counter() - start
    record_property("l1", l1)
    record_property("seconds", round(elapsed, 2))
    assert l1 == 0.0 and elapsed < 10


# --- 3 ------------------------------------------------------------------------

@pytest.mark.criterion(3, C3)
def test_c3_ground_truth_upper_bound(bank, tmp_path_factory, classes, record_property):
    from tempoaudio.simulate import SimConfig, simulate_dataset

    start = time.perf_counter()
    out = tmp_path_factory.mktemp("c3")
    simulate_dataset(bank, SimConfig(split_sizes=(0, 40, 20), master_seed=0), out)
    for split, n in (("test_single", 40), ("test_multi", 20)):
        report = evaluate_system(out / f"{split}.jsonl", out / "wavs" / split, classes)
        (row,) = report.rows
        record_property(f"{split}_f1", round(row.f1_segment, 4))
        record_property(f"{split}_l1", round(row.l1_freq, 4))
        assert row.n_clips == n
        assert row.f1_segment >= 0.95 and row.l1_freq <= 0.1
    elapsed = time.perf_counter() - start
    record_property("seconds", round(elapsed, 1))
    assert elapsed < 120


# --- 4 ------------------------------------------------------------------------

@pytest.mark.criterion(4, C4)
def test_c4_metric_oracles(record_property):
    names = ["a", "b", "c"]
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    for _ in range(500):
        seg_len = str(rng.choice(["0.1", "0.2", "0.25", "0.5", "1"]))
        cells = int(rng.integers(20, 300))
        ref = _random_schedule(rng, names, clip=cells / 100)
        hyp = _random_schedule(rng, names, clip=cells / 100)
        score = segment_f1(ref, hyp, float(seg_len), names)
        assert (score.tp, score.fp, score.fn) == brute_force_segments(ref, hyp, names, seg_len, str(ref.clip_length))
    one_d = frechet_distance(GaussianStats(np.zeros(1), np.eye(1), 100), GaussianStats(np.ones(1), np.eye(1), 100))
    assert one_d == 1.0
    worst = 0.0
    for _ in range(100):
        ma, mb = rng.standard_normal(5), rng.standard_normal(5)
        xa, xb = rng.standard_normal((5, 8)), rng.standard_normal((5, 8))
        ca, cb = xa @ xa.T / 8, xb @ xb.T / 8
        got = frechet_distance(GaussianStats(ma, ca, 100), GaussianStats(mb, cb, 100))
        worst = max(worst, abs(got - frechet_oracle(ma, ca, mb, cb)))
    elapsed = time.perf_counter() - start
    record_property("frechet_max_err", f"{worst:.1e}")
    record_property("seconds", round(elapsed, 2))
    assert worst <= 1e-6 and elapsed < 60


# --- 5 ------------------------------------------------------------------------

@pytest.mark.criterion(5, C5)
def test_c5_diffusion_math(record_property):
    start = time.perf_counter()
    sched = make_schedule(50, 1e-4, 0.2)
    rng = np.random.default_rng(5)
    trials, p0 = 10_000, -0.8
    x = np.full(trials, p0)
    for n in range(1, 51):
        x = forward_step(x, n, rng.standard_normal(trials), sched)
        if n in (1, 5, 25, 50):
            ab = sched.alpha_bar[n - 1]
            var = 1 - ab
            assert abs(x.mean() - np.sqrt(ab) * p0) <= 3 * np.sqrt(var / trials)
            assert abs(x.var(ddof=1) - var) <= 3 * var * np.sqrt(2 / (trials - 1))
            # the closed form drawn directly has the same law
            direct = forward_marginal(np.full(trials, p0), n, rng.standard_normal(trials), sched)
            assert abs(direct.var(ddof=1) - var) <= 3 * var * np.sqrt(2 / (trials - 1))

    worst_rec = 0.0
    one = NoiseSchedule(np.array([0.05]))
    targets = [(1, one)] + [(N, make_schedule(N, 1e-4, 0.2)) for N in range(2, 51)]
    for N, s in targets:
        latent = rng.standard_normal((25, 20))
        z = forward_marginal(latent, N, rng.standard_normal(latent.shape), s)
        for n in range(N, 0, -1):
            z = reverse_step(z, n, oracle_eps(z, latent, n, s), s, rng.standard_normal(latent.shape))
        worst_rec = max(worst_rec, float(np.max(np.abs(z - latent))))

    params = DenoiserParams.init(4, 2, (8, 8), 4, 10, seed=0)
    for k, w in params.weights.items():
        params.weights[k] = w + rng.normal(0, 0.1, w.shape)
    p0s = rng.standard_normal((2, 3, 4))
    onehot = np.zeros((2, 3, 2))
    onehot[0, :2, 0] = onehot[1, 1:, 1] = 1
    sets, steps, eps, s10 = [(0,), (1,)], np.array([3, 8]), rng.standard_normal(p0s.shape), make_schedule(10, 1e-4, 0.2)

    def loss_of(p):
        return diffusion_loss(p0s, onehot, sets, p, s10, rng, n=steps, eps=eps)[0]

    grads = diffusion_loss(p0s, onehot, sets, params, s10, rng, n=steps, eps=eps)[1]
    worst_grad = finite_difference_check(loss_of, params, grads)
    elapsed = time.perf_counter() - start
    record_property("reconstruction_err", f"{worst_rec:.1e}")
    record_property("grad_rel_err", f"{worst_grad:.1e}")
    record_property("seconds", round(elapsed, 1))
    assert worst_rec <= 1e-4 and worst_grad <= 1e-4 and elapsed < 120


# --- 6 ------------------------------------------------------------------------

SEEDS = (0, 1, 2)


def _score(params, records, bank, classes, seed):
    """Segment F1 on the timestamp task and L1 on the frequency task for one model."""
    names = [c.name for c in classes]
    refs = [schedule_from_record(r["schedule"]) for r in records]
    audio = render_schedules(refs, params, classes, 3.0, [dsp.derive_seed(seed, 10, i) for i in range(len(refs))])
    total = SegmentScore()
    for ref, a in zip(refs, audio):
        total = total + segment_f1(ref, detect_events(a, classes), 1.0, names)
    specs = [parse_frequency_caption(r["frequency_caption"], names) for r in records]
    planned = [freq_to_schedule(sp, bank.stats, 10.0, dsp.derive_seed(seed, 11, i)) for i, sp in enumerate(specs)]
    audio = render_schedules(planned, params, classes, 3.0, [dsp.derive_seed(seed, 12, i) for i in range(len(specs))])
    l1 = freq_l1(specs, [detect_events(a, classes) for a in audio], names)
    return total.f1, l1


@pytest.fixture(scope="module")
def ablation(desk_dataset, desk_encoded, bank, classes):
    names = [c.name for c in classes]
    records = read_manifest(desk_dataset / "test_single.jsonl")
    start = time.perf_counter()
    out = {"with": [], "without": [], "models": {}}
    for seed in SEEDS:
        for key, use_ts in (("with", True), ("without", False)):
            params, _ = train(desk_encoded, TrainConfig(seed=seed, use_timestamp=use_ts), class_names=names)
            out[key].append(_score(params, records, bank, classes, seed))
            out["models"][(key, seed)] = params
    out["seconds"] = time.perf_counter() - start
    return out


@pytest.mark.slow
@pytest.mark.criterion(6, C6)
def test_c6_conditioning_ablation(ablation, record_property):
    f1_with, l1_with = np.mean(ablation["with"], axis=0)
    f1_without, l1_without = np.mean(ablation["without"], axis=0)
    record_property("f1_with", round(f1_with, 3))
    record_property("f1_without", round(f1_without, 3))
    record_property("l1_with", round(l1_with, 4))
    record_property("l1_without", round(l1_without, 4))
    record_property("seconds", round(ablation["seconds"]))
    assert f1_with - f1_without >= 0.05
    assert l1_with < l1_without
    assert ablation["seconds"] < 30 * 60


@pytest.mark.slow
def test_trained_model_follows_timestamps(ablation, classes):
    params = ablation["models"][("with", 0)]
    s = NoiseSchedule.from_dict(params.meta["schedule"])
    onehot = np.zeros((18, 250))
    onehot[0, 50:75] = 1
    lat = sample(onehot, [0], params, s, 3.0, seed=0)
    energy = latent_to_energy(lat.data[:, 0])
    inside, outside = energy[50:75].mean(), np.delete(energy, np.s_[50:75]).mean()
    assert inside >= 3 * outside


@pytest.mark.slow
def test_cli_generate_then_evaluate_on_trained_model(ablation, tmp_path, monkeypatch):
    from tempoaudio.cli import main

    ckpt = tmp_path / "model.json"
    ablation["models"][("with", 0)].save(ckpt)
    assert main(["generate", "--checkpoint", str(ckpt), "--caption", "dog barking at 2-3",
                 "--out", str(tmp_path / "gen")]) == 0
    assert main(["evaluate", "--manifest", str(tmp_path / "gen/generated.jsonl"), "--audio-dir",
                 str(tmp_path / "gen"), "--out", str(tmp_path / "rep")]) == 0
    details = json.loads((tmp_path / "rep/details.json").read_text())["clips"][0]
    found = details["detections"]["events"]["dog barking"]
    assert len(found) == 1
    on, off, _ = found[0]
    assert abs(on - 2.0) <= 2 * 0.04 + 1e-9 and abs(off - 3.0) <= 2 * 0.04 + 1e-9


# --- 7 ------------------------------------------------------------------------

PIPELINE = """\
seed: 11
bank: {per_class: 2}
simulate: {split_sizes: [32, 6, 4]}
train: {epochs: 2}
"""

ARTIFACTS = [
    "runs/bank/index.json", "runs/dataset/train.jsonl", "runs/dataset/test_single.jsonl",
    "runs/dataset/test_multi.jsonl", "runs/dataset/summary.json", "runs/checkpoint/model.json",
    "runs/checkpoint/epochs/epoch_002.json", "runs/checkpoint/train_log.csv", "runs/generated/generated.jsonl",
    "runs/generated/test_multi_00002.wav", "runs/reports/report.csv", "runs/reports/details.json",
    "runs/reports/run.json",
]


def _run_pipeline(root, monkeypatch):
    from tempoaudio.cli import main

    root.mkdir()
    (root / "cfg.yaml").write_text(PIPELINE)
    monkeypatch.chdir(root)
    for argv in (["bank"], ["simulate"], ["train"], ["generate", "--manifest", "runs/dataset/test_multi.jsonl"],
                 ["evaluate", "--manifest", "runs/dataset/test_multi.jsonl", "--audio-dir", "runs/generated"]):
        assert main(argv + ["--config", "cfg.yaml"]) == 0


@pytest.mark.criterion(7, C7)
def test_c7_end_to_end_determinism(tmp_path, monkeypatch, record_property):
    _run_pipeline(tmp_path / "one", monkeypatch)
    _run_pipeline(tmp_path / "two", monkeypatch)
    for rel in ARTIFACTS:
        assert (tmp_path / "one" / rel).read_bytes() == (tmp_path / "two" / rel).read_bytes(), rel
    record_property("artifacts_compared", len(ARTIFACTS))
