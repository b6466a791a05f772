"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The desk-scale training criterion dominates the runtime (a few
minutes); everything else finishes in seconds.
"""

import time

import numpy as np
import pytest

import diarnet.autodiff as ad
from der_oracle import corrupt_timeline, frame_der, random_timeline
from diarnet.autodiff import tensor
from diarnet.cli import _segments_from_labels, main as cli_main
from diarnet.frontend import write_wav
from diarnet.gradcheck import grad_check
from diarnet.losses import (
    LabelMatrix,
    LossWeights,
    activity_dpcl_targets,
    attractor_dpcl_targets,
    dpcl_loss,
    pit_align,
    pit_align_bruteforce,
    total_loss,
)
from diarnet.model import ModelConfig, forward, init_model_params, latte_attention, predict_probs
from diarnet.rttm import read_rttm, write_rttm
from diarnet.scoring import (
    DiarizationHypothesis,
    aggregate_reports,
    der_score,
    posterior_to_segments,
)
from diarnet.synth import MixtureSpec, synth_mixture
from diarnet.training import TrainConfig, save_checkpoint, train, write_metrics

from test_losses import make_result, random_labels, random_result  # shared builders


def report(num: int, name: str, ok: bool, detail: str = "") -> None:
    flag = "PASS" if ok else "FAIL"
    print(f"[{flag}] criterion {num} ({name}): {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


# ---------------------------------------------------------------------------
# 1. gradient integrity
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_integrity():
    t0 = time.perf_counter()
    worst = 0.0

    # every differentiable primitive, three random desk-scale shapes each
    prim_shapes = [(2, 5), (4, 3), (3, 7)]
    for si, shape in enumerate(prim_shapes):
        rng = np.random.default_rng(1000 + si)

        def leaf(*s):
            return tensor(rng.standard_normal(s), dtype=np.float64, requires_grad=True)

        x, y = leaf(*shape), leaf(*shape)
        gain = leaf(shape[1])
        bias = leaf(shape[1])
        w_conv = leaf(2, 1, 3, 3)
        x_conv = leaf(2, 1, 6, 5)
        w_dw = leaf(3, shape[1])
        targets = (rng.random(shape) < 0.5).astype(np.float64)
        checks = [
            ("add", lambda: grad_check(lambda a, b: ad.mean(a + b * 2.0), [x, y])),
            ("mul", lambda: grad_check(lambda a, b: ad.mean(a * b), [x, y])),
            ("matmul", lambda: grad_check(
                lambda a, b: ad.mean(ad.matmul(a, b.transpose(1, 0))), [x, y])),
            ("relu", lambda: grad_check(lambda a: ad.mean(ad.relu(a)), [x])),
            ("sigmoid", lambda: grad_check(lambda a: ad.mean(ad.sigmoid(a)), [x])),
            ("softmax", lambda: grad_check(
                lambda a: ad.mean(ad.softmax(a) ** 2.0), [x])),
            ("mean", lambda: grad_check(lambda a: ad.mean(a ** 2.0), [x])),
            ("mse", lambda: grad_check(lambda a, b: ad.mse(a, b), [x, y])),
            ("rms_norm", lambda: grad_check(
                lambda a, g: ad.mean(ad.rms_norm(a, g) ** 2.0), [x, gain])),
            ("l2_normalize", lambda: grad_check(
                lambda a: ad.mean(ad.l2_normalize(a) ** 2.0), [x])),
            ("layer_norm", lambda: grad_check(
                lambda a, g, b: ad.mean(ad.layer_norm(a, g, b) ** 2.0), [x, gain, bias])),
            ("bce_logits", lambda: grad_check(
                lambda a: ad.mean(ad.bce_logits(a, targets)), [x])),
            ("conv2d", lambda: grad_check(
                lambda a, w: ad.mean(ad.conv2d(a, w, stride=(2, 2),
                                               pads=((1, 1), (1, 1))) ** 2.0),
                [x_conv, w_conv])),
            ("depthwise_conv1d", lambda: grad_check(
                lambda a, w: ad.mean(ad.depthwise_conv1d(a, w) ** 2.0), [x, w_dw])),
        ]
        for name, fn in checks:
            rep = fn()
            worst = max(worst, rep.max_rel_error)
            assert rep.max_rel_error < 1e-4, f"{name} @ {shape}: {rep}"

    # every loss component plus the weighted total, three instances
    component_setups = [
        ("bce+pit", LossWeights(1, 0, 0, 0), "none"),
        ("dpcl-activity", LossWeights(0, 1, 0, 0), "activity"),
        ("dpcl-attractor", LossWeights(0, 1, 0, 0), "attractor"),
        ("ortho", LossWeights(0, 0, 1, 0), "none"),
        ("suppression", LossWeights(0, 0, 0, 1), "none"),
        ("total", LossWeights(1.0, 0.5, 0.1, 0.1), "attractor"),
    ]
    for inst in range(3):
        rng = np.random.default_rng(2000 + inst)
        t, s, e = 6, 3, 8
        labels = random_labels(rng, t, s, 2)
        leaves = [
            tensor(rng.standard_normal((t, e)), dtype=np.float64, requires_grad=True),
            tensor(rng.standard_normal((s, e)), dtype=np.float64, requires_grad=True),
            tensor(rng.standard_normal(s), dtype=np.float64, requires_grad=True),
            tensor(np.asarray(rng.standard_normal()), dtype=np.float64, requires_grad=True),
        ]
        for name, weights, mode in component_setups:
            def fn(frames, dirs, biases, bg):
                res = make_result(frames, dirs, biases, bg)
                return total_loss(res, labels, weights=weights, mode=mode).total_tensor

            rep = grad_check(fn, leaves, tol=1e-4, name=name)
            worst = max(worst, rep.max_rel_error)
            assert rep.passed, f"{name} instance {inst}: {rep}"

    elapsed = time.perf_counter() - t0
    report(1, "gradient integrity", elapsed < 60.0,
           f"worst rel err {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. PIT invariance
# ---------------------------------------------------------------------------

def test_criterion_2_pit_invariance():


    rng = np.random.default_rng(42)
    worst_rel = 0.0
    for trial in range(100):
        k = int(rng.integers(1, 5))
        res = random_result(rng, 25, 8, 16)
        labels = random_labels(rng, 25, 8, k)

        fast = pit_align(res.logits.data, labels)
        slow = pit_align_bruteforce(res.logits.data, labels)
        assert fast.cost == slow.cost, f"trial {trial}: {fast.cost} != {slow.cost}"

        base = total_loss(res, labels).total
        perm = rng.permutation(8)
        permuted = LabelMatrix(labels.y_pm[:, perm])
        other = total_loss(res, permuted).total
        rel = abs(other - base) / max(abs(base), 1e-12)
        worst_rel = max(worst_rel, rel)
        assert rel < 1e-6, f"trial {trial}: rel {rel}"
    report(2, "PIT invariance", True,
           f"100 instances, worst rel change {worst_rel:.2e}, oracle cost exact")


# ---------------------------------------------------------------------------
# 3. DPCL geometry
# ---------------------------------------------------------------------------

def test_criterion_3_dpcl_geometry():
    # S = 2 Gram extremes are exact
    lm = LabelMatrix(np.array([[1, -1], [1, -1], [-1, 1], [1, 1]]))
    l = activity_dpcl_targets(lm).astype(np.float64)
    gram = l @ l.T
    assert gram[0, 1] == pytest.approx(1.0, abs=1e-12)   # same speaker set
    assert gram[0, 2] == pytest.approx(-1.0, abs=1e-12)  # complementary
    assert np.all(gram <= 1 + 1e-12) and np.all(gram >= -1 - 1e-12)

    # oracle agreement at T <= 16
    worst = 0.0
    for seed in range(3):
        rng = np.random.default_rng(3000 + seed)
        t = int(rng.integers(3, 17))
        lm = LabelMatrix.from_activity(rng.random((t, 2)) < 0.6)
        targets = activity_dpcl_targets(lm).astype(np.float64)
        x = rng.standard_normal((t, 6))
        got = float(dpcl_loss(targets, tensor(x, dtype=np.float64)).data)
        xn = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-8)
        want = float(((targets @ targets.T - xn @ xn.T) ** 2).mean())
        worst = max(worst, abs(got - want))
        assert abs(got - want) < 1e-10

    # zero iff the Grams match
    lm = LabelMatrix(np.array([[1, -1], [-1, 1], [1, 1]]))
    targets = activity_dpcl_targets(lm).astype(np.float64)
    matching = tensor(np.pad(targets, ((0, 0), (0, 4))), dtype=np.float64)
    zero = float(dpcl_loss(targets, matching).data)
    assert zero < 1e-12
    clumped = tensor(np.ones((3, 6)), dtype=np.float64)
    assert float(dpcl_loss(targets, clumped).data) > 1e-3
    report(3, "DPCL geometry", True,
           f"extremes exact, oracle gap {worst:.1e}, zero-iff-match holds")


# ---------------------------------------------------------------------------
# 4. suppression contract
# ---------------------------------------------------------------------------

def test_criterion_4_suppression_contract():
    rng = np.random.default_rng(4)
    t, s, e = 8, 4, 12
    labels = random_labels(rng, t, s, 2)

    frames = tensor(rng.standard_normal((t, e)), dtype=np.float64, requires_grad=True)
    dirs = tensor(rng.standard_normal((s, e)), dtype=np.float64, requires_grad=True)
    biases = tensor(rng.standard_normal(s), dtype=np.float64, requires_grad=True)
    bg = tensor(np.asarray(0.1), dtype=np.float64, requires_grad=True)
    res = make_result(frames, dirs, biases, bg)
    bundle = total_loss(res, labels, weights=LossWeights(1, 0, 0, 0), mode="none")
    bundle.total_tensor.backward()
    unassigned = sorted(set(range(s)) - set(bundle.alignment.slots))
    for slot in unassigned:
        assert np.all(dirs.grad[slot] == 0.0), f"BCE gradient leaked into slot {slot}"

    # suppression decays with the unassigned direction norm and hits 0 at 0
    values = []
    for scale in (1.0, 0.1, 0.0):
        d = rng.standard_normal((s, e))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        d *= scale
        res2 = make_result(tensor(rng.standard_normal((t, e)), dtype=np.float64),
                           tensor(d, dtype=np.float64),
                           tensor(np.zeros(s), dtype=np.float64),
                           tensor(np.asarray(0.0), dtype=np.float64))
        b2 = total_loss(res2, labels, weights=LossWeights(0, 0, 0, 1), mode="none")
        values.append(b2.suppress)
    assert values[0] > values[1] > values[2] == 0.0
    report(4, "suppression contract",
           True, f"bias-only grads exact zero; suppress {values} -> 0")


# ---------------------------------------------------------------------------
# 5. architecture shape and complexity
# ---------------------------------------------------------------------------

def test_criterion_5_architecture():
    cfg = ModelConfig()   # 5 blocks, 256-dim, latte 128, 16 latents, 8 x 256
    params = init_model_params(cfg, np.random.default_rng(0))
    assert params["attractors.init"].shape == (8, 256)
    assert params["block1.latte.k1.w"].shape == (256, 128)
    assert params["block5.ff2.w1.w"].shape == (256, 1024)
    assert "block5.out_ln.g" in params and "block6.ff1.w1.w" not in params
    assert all(f"adec{d}.cross.q.w" in params for d in range(1, 6))

    t = 500
    x = tensor(np.random.default_rng(1).standard_normal((t, 256)).astype(np.float32))
    with ad.no_grad(), ad.audit() as rec:
        res = forward(x, params, cfg)
    assert res.logits.shape == (500, 8)
    offenders = [sh for sh in rec["shapes"] if sum(1 for d in sh if d == t) >= 2]
    assert not offenders, f"T x T intermediates: {offenders[:5]}"

    macs = {}
    for tt in (500, 1000):
        xt = tensor(np.random.default_rng(2).standard_normal((tt, 256)).astype(np.float32))
        with ad.no_grad(), ad.audit() as rec2:
            latte_attention(xt, params, "block1.latte", cfg)
        macs[tt] = rec2["macs"]
        bad = [sh for sh in rec2["shapes"] if sum(1 for d in sh if d == tt) >= 2]
        assert not bad
    ratio = macs[1000] / macs[500]
    assert abs(ratio - 2.0) < 0.02, f"latent attention MAC ratio {ratio}"
    report(5, "architecture shape/complexity", True,
           f"logits 500x8, latte MAC ratio {ratio:.4f}, no TxT tensors")


# ---------------------------------------------------------------------------
# 6. end-to-end desk-scale training
# ---------------------------------------------------------------------------

DESK_MODEL = ModelConfig(depth=2, embed_dim=64, latte_dim=32, n_latents=8,
                         n_attractors=4, ff_expansion=4, conv_kernel=9, heads=4)


def _der_over(specs, params, model_cfg):
    reports = []
    for spec in specs:
        rec = synth_mixture(spec)
        probs = predict_probs(rec.clip, params, model_cfg)
        hyp = posterior_to_segments(probs, file_id=rec.rec_id)
        ref = DiarizationHypothesis(segments=_segments_from_labels(rec),
                                    file_id=rec.rec_id)
        reports.append(der_score(ref, hyp))
    return aggregate_reports(reports)


def _baseline_reports(specs, kind):
    reports = []
    for spec in specs:
        rec = synth_mixture(spec)
        ref = DiarizationHypothesis(segments=_segments_from_labels(rec),
                                    file_id=rec.rec_id)
        if kind == "silence":
            hyp = DiarizationHypothesis(segments=[], file_id=rec.rec_id)
        else:  # one speaker everywhere
            hyp = DiarizationHypothesis(
                segments=[(0.0, rec.clip.duration_s, "only")], file_id=rec.rec_id)
        reports.append(der_score(ref, hyp))
    return aggregate_reports(reports)


@pytest.mark.slow
def test_criterion_6_desk_scale_training(tmp_path):
    train_specs = [MixtureSpec(n_speakers=2, duration_s=60.0, overlap_ratio=0.2,
                               noise_snr_db=15.0, seed=100 + i) for i in range(20)]
    val_specs = [MixtureSpec(n_speakers=2, duration_s=60.0, overlap_ratio=0.2,
                             noise_snr_db=15.0, seed=900 + i) for i in range(4)]
    cfg = TrainConfig(batch_size=5, epochs=200, max_lr=2e-3, crop_s=15.0, seed=7,
                      model=DESK_MODEL, val_every=25,
                      weights=LossWeights(1.0, 0.5, 0.1, 0.1), dpcl_mode="attractor")

    t0 = time.perf_counter()
    result = train(cfg, train_specs, val_specs, out_dir=tmp_path / "run")
    wall = time.perf_counter() - t0
    assert not result.diverged
    assert wall < 1800.0, f"training took {wall:.0f}s, budget is 30 min"

    rows = [r for r in result.history if r["split"] == "train"]
    assert len(rows) >= 520, "need at least 520 steps for the moving averages"
    avg_50 = float(np.mean([r["total"] for r in rows[30:50]]))
    avg_500 = float(np.mean([r["total"] for r in rows[480:500]]))
    assert avg_500 < avg_50, f"loss did not decrease: {avg_50} -> {avg_500}"

    train_rep = _der_over(train_specs, result.params, cfg.model)
    assert train_rep.der <= 10.0, f"train DER {train_rep.der:.2f}% > 10%"

    val_rep = _der_over(val_specs, result.params, cfg.model)
    silence = _baseline_reports(val_specs, "silence")
    one_spk = _baseline_reports(val_specs, "one-speaker")
    assert val_rep.der < silence.der, "model does not beat the silence baseline"
    assert val_rep.der < one_spk.der, "model does not beat one-speaker-everywhere"

    # trained checkpoint drives the CLI end to end: >= 2 speakers hypothesized
    val_rec = synth_mixture(val_specs[0])
    wav_path = tmp_path / "val.wav"
    write_wav(wav_path, val_rec.clip)
    rttm_path = tmp_path / "val.rttm"
    assert cli_main(["infer", "--ckpt", str(tmp_path / "run" / "best.ckpt"),
                     "--wav", str(wav_path), "--rttm", str(rttm_path)]) == 0
    hyp = read_rttm(rttm_path)["val"]
    assert len(hyp.speakers()) >= 2

    report(6, "desk-scale training", True,
           f"wall {wall:.0f}s, train DER {train_rep.der:.2f}%, val DER "
           f"{val_rep.der:.2f}% (baselines {silence.der:.0f}%/{one_spk.der:.0f}%), "
           f"loss {avg_50:.3f} -> {avg_500:.4f}")


# ---------------------------------------------------------------------------
# 7. scorer fidelity
# ---------------------------------------------------------------------------

def test_criterion_7_scorer_fidelity():
    rng = np.random.default_rng(77)
    worst = 0.0
    for trial in range(50):
        n_spk = 2 + trial % 2
        ref_segs = random_timeline(rng, n_spk)
        hyp_segs = corrupt_timeline(rng, ref_segs)
        if not hyp_segs:
            hyp_segs = [(0.0, 1.0, "spk0")]
        ref = DiarizationHypothesis(segments=ref_segs, file_id="t")
        hyp = DiarizationHypothesis(segments=hyp_segs, file_id="t")

        rep = der_score(ref, hyp, collar_s=0.25)
        oracle = frame_der(ref, hyp, collar_s=0.25)
        gap = abs(rep.der - oracle["der"])
        worst = max(worst, gap)
        assert gap <= 0.05, f"trial {trial}: DER gap {gap}"
        for key in ("ms", "fa", "cf", "sad_ms", "sad_fa"):
            assert abs(getattr(rep, key) - oracle[key]) <= 0.05, key
        assert abs(rep.ms + rep.fa + rep.cf - rep.der) <= 0.01

        self_rep = der_score(ref, ref, collar_s=0.25)
        assert self_rep.der == pytest.approx(0.0, abs=1e-9)
    report(7, "scorer fidelity", True,
           f"50 timelines, worst oracle gap {worst:.4f} pp")


# ---------------------------------------------------------------------------
# 8. determinism
# ---------------------------------------------------------------------------

def test_criterion_8_determinism(tmp_path):
    model = ModelConfig(depth=1, embed_dim=32, latte_dim=16, n_latents=2,
                        n_attractors=2, ff_expansion=2, conv_kernel=3, heads=2)
    cfg = TrainConfig(batch_size=2, epochs=3, max_lr=1e-3, crop_s=3.0, seed=11,
                      model=model, val_every=1)
    specs = [MixtureSpec(n_speakers=2, duration_s=8.0, overlap_ratio=0.2,
                         noise_snr_db=15.0, seed=60 + i) for i in range(3)]
    vals = [MixtureSpec(n_speakers=2, duration_s=8.0, overlap_ratio=0.2,
                        noise_snr_db=15.0, seed=80)]
    a = train(cfg, specs, vals)
    b = train(cfg, specs, vals)
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    write_metrics(pa, a.history)
    write_metrics(pb, b.history)
    assert pa.read_bytes() == pb.read_bytes()
    assert len(a.history) > 0

    hyp = DiarizationHypothesis(
        segments=[(0.0, 1.5, "a"), (12.345, 67.89, "b"), (0.3, 0.4, "c")],
        file_id="f")
    p = tmp_path / "h.rttm"
    write_rttm(p, hyp)
    back = read_rttm(p)["f"]
    got = sorted((round(s, 3), round(e, 3), spk) for s, e, spk in back.segments)
    want = sorted((round(s, 3), round(e, 3), spk) for s, e, spk in hyp.segments)
    assert got == want
    write_rttm(tmp_path / "h2.rttm", back)
    assert (tmp_path / "h2.rttm").read_bytes() == p.read_bytes()
    report(8, "determinism", True,
           "identical metrics logs; RTTM round-trip lossless at 3 decimals")
