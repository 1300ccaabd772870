"""Acceptance gates: every criterion prints one PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The desk-scale training
criteria share one 60-epoch pre-training run via a session fixture; the
whole module finishes in a few minutes on a laptop CPU.
"""

import math
import time

import numpy as np
import pytest

from alg_oracle import brute_force_mask
from masa.alignment import MemoryBank, ema_update, info_nce, make_momentum_pair
from masa.cli import main
from masa.masking import candidate_set, motion_residuals, select_mask, truncate_confidence
from masa.model import ModelConfig
from masa.numcore import (
    OptimState,
    ParamStore,
    Tensor,
    adamw_step,
    finetune_lr,
    pretrain_lr,
)
from masa.posedata import NUM_JOINTS, Dataset, add_noise, gen_synthetic
from masa.training import (
    desk_finetune_config,
    desk_pretrain_config,
    epoch_means,
    evaluate,
    finetune,
    metrics_from_predictions,
    motion_loss,
    pretrain,
)
from masa.verification import OPS_TOLERANCE, PIPELINE_TOLERANCE, full_pipeline_check, primitive_op_checks

DESK_SEED = 7


def _report(criterion: str, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    print(f"\nCRITERION {criterion}: {status} — {detail}")
    assert passed, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="session")
def desk_corpus():
    """10 classes x 28 clips of the same class templates: the first 20 per
    class pre-train and fine-tune, the last 8 are the held-out test split."""
    full = gen_synthetic(10, 28, 48, seed=DESK_SEED)
    train = Dataset([s for s in full.sequences if int(s.id[-3:]) < 20], 10)
    test = Dataset([s for s in full.sequences if int(s.id[-3:]) >= 20], 10)
    return train, test


@pytest.fixture(scope="session")
def desk_pretrain(desk_corpus):
    train, _ = desk_corpus
    config = desk_pretrain_config(seed=DESK_SEED)
    started = time.time()
    result = pretrain(config, train)
    return result, time.time() - started


class TestCriterion1MaskingOracle:
    def test_alg_equivalence_1000_sequences(self):
        """Candidate selection and mask draws match the literal brute-force
        reference on 1,000 randomized sequences, exactly."""
        started = time.time()
        master = np.random.default_rng(123)
        for trial in range(1000):
            T = int(master.integers(8, 65))
            k = int(master.integers(1, min(8, T)))
            coords = master.uniform(-128, 128, size=(T, NUM_JOINTS, 2))
            conf = truncate_confidence(master.uniform(0, 1, size=(T, NUM_JOINTS)), 0.4)
            eps_m = float(master.uniform(0, 30))
            delta = float(master.uniform(0, 1))
            alpha = float(master.uniform(0, 1))
            field = motion_residuals(coords, conf, k)
            cand = candidate_set(field, eps_m, delta)
            plan = select_mask(cand, alpha, np.random.default_rng(trial))
            ref_cand, ref_mask = brute_force_mask(
                coords, conf, k, eps_m, delta, alpha, np.random.default_rng(trial)
            )
            assert list(cand) == ref_cand and list(plan.masked) == ref_mask, f"trial {trial}"
        elapsed = time.time() - started
        _report("1 (masking oracle)", elapsed < 10.0, f"1000/1000 exact matches in {elapsed:.1f}s (< 10 s)")


class TestCriterion2GradientSuite:
    def test_primitive_ops_and_full_pipeline(self):
        started = time.time()
        op_results = primitive_op_checks(seed=0)
        worst_op = max(op_results, key=lambda r: r[1])
        ops_ok = all(err < OPS_TOLERANCE for _, err in op_results)
        pipeline_err = full_pipeline_check(seed=0)
        elapsed = time.time() - started
        _report(
            "2 (gradient suite)",
            ops_ok and pipeline_err < PIPELINE_TOLERANCE and elapsed < 120.0,
            f"worst op {worst_op[0]}={worst_op[1]:.2e} (< 1e-6), "
            f"full objective {pipeline_err:.2e} (< 1e-3), {elapsed:.1f}s (< 2 min)",
        )


class TestCriterion3ClosedForm:
    def test_unit_value_fixtures(self):
        started = time.time()
        checks: list[tuple[str, bool]] = []

        # reconstruction loss fixture: prediction (3,4) vs zero motion -> 25
        coords = np.zeros((4, 1, 2))
        field = motion_residuals(coords, np.ones((4, 1)), k=1)
        lm = float(motion_loss(Tensor(np.array([[[3.0, 4.0]]])), [1], field).data)
        checks.append(("motion loss 25", lm == 25.0))

        # contrastive fixtures
        bank = MemoryBank(4, 2)
        q = Tensor(np.array([1.0, 0.0]))
        checks.append(("empty bank -> 0", float(info_nce(q, np.array([1.0, 0.0]), bank, 1.0).data) == 0.0))
        bank.enqueue(np.array([[0.0, 1.0]]))
        val = float(info_nce(q, np.array([1.0, 0.0]), bank, 1.0).data)
        checks.append(("one negative -> log(1+e^-1)", abs(val - math.log(1 + math.exp(-1))) < 1e-9))
        m = 6
        bank2 = MemoryBank(8, 8)
        negs = np.zeros((m, 8))
        for i in range(m):
            negs[i, i + 2] = 1.0
        bank2.enqueue(negs)
        qv, kv = np.zeros(8), np.zeros(8)
        qv[0], kv[1] = 1.0, 1.0
        val = float(info_nce(Tensor(qv), kv, bank2, 1.0).data)
        checks.append(("orthogonal -> log(m+1)", abs(val - math.log(m + 1)) < 1e-9))

        # EMA fixtures
        for mu, expected in ((1.0, 0.0), (0.0, 1.0), (0.996, 0.004)):
            store = ParamStore()
            store.add("embed.w", np.array([1.0]))
            pair = make_momentum_pair(store, mu)
            pair.key["embed.w"].data[:] = 0.0
            ema_update(pair)
            got = float(pair.key["embed.w"].data[0])
            checks.append((f"EMA mu={mu}", abs(got - expected) < 1e-15))

        # AdamW first step fixture
        params = ParamStore()
        p = params.add("w", np.array([1.0]))
        p.grad = np.array([1.0])
        adamw_step(params, OptimState(), lr=0.1, beta1=0.9, beta2=0.95, eps=0.0, weight_decay=0.0)
        checks.append(("AdamW first step 0.9", abs(float(p.data[0]) - 0.9) < 1e-12))

        # schedule fixtures
        checks.append(("pretrain lr epoch 10", pretrain_lr(10, 1e-4, 20, 400) == pytest.approx(5e-5, abs=1e-18)))
        checks.append(("pretrain lr epoch 20", pretrain_lr(20, 1e-4, 20, 400) == pytest.approx(1e-4, abs=1e-18)))
        checks.append(("pretrain lr epoch 400", pretrain_lr(400, 1e-4, 20, 400) == 0.0))
        checks.append(("finetune lr epoch 0", finetune_lr(0, 0.01) == pytest.approx(0.01, abs=1e-18)))
        checks.append(("finetune lr epoch 20", finetune_lr(20, 0.01) == pytest.approx(0.001, abs=1e-18)))
        checks.append(("finetune lr epoch 59", finetune_lr(59, 0.01) == pytest.approx(1e-4, abs=1e-18)))

        elapsed = time.time() - started
        failed = [name for name, ok in checks if not ok]
        _report(
            "3 (closed-form values)",
            not failed and elapsed < 5.0,
            f"{len(checks)} fixtures exact in {elapsed:.2f}s (< 5 s)" + (f"; failed: {failed}" if failed else ""),
        )


class TestCriterion4MemoryBank:
    def test_reference_model_10k_operations(self):
        started = time.time()
        rng = np.random.default_rng(99)
        bank = MemoryBank(64, 4)
        model: list[np.ndarray] = []
        ops = 0
        while ops < 10_000:
            batch = int(rng.integers(1, 17))
            keys = rng.normal(size=(batch, 4))
            keys /= np.linalg.norm(keys, axis=1, keepdims=True)
            bank.enqueue(keys)
            model.extend(keys)
            ops += batch
            expected = np.stack(model[-64:])
            np.testing.assert_array_equal(bank.contents(), expected)
        elapsed = time.time() - started
        _report("4 (memory bank model)", elapsed < 5.0, f"{ops} enqueues match the list model in {elapsed:.1f}s (< 5 s)")


class TestCriterion5PretrainGates:
    def test_desk_scale_pretraining(self, desk_pretrain):
        result, elapsed = desk_pretrain
        lm = epoch_means(result.log, "l_m")
        ls = epoch_means(result.log, "l_s")
        ratio = lm[30] / lm[1]
        bound = 0.7 * math.log(result.bank_count + 1)
        final_ls = ls[max(ls)]
        ok = ratio <= 0.5 and final_ls <= bound and elapsed < 600.0
        _report(
            "5 (desk pre-training)",
            ok,
            f"epoch-30/epoch-1 reconstruction {ratio:.3f} (<= 0.5); "
            f"final alignment loss {final_ls:.3f} <= 0.7*log(K+1)={bound:.3f}; "
            f"{elapsed:.0f}s (< 10 min)",
        )


class TestCriterion6FinetuneGates:
    def test_overfit_small_set(self, desk_corpus):
        train, _ = desk_corpus
        small = Dataset(train.sequences[:20], train.num_classes)
        started = time.time()
        result = finetune(desk_finetune_config(seed=3), small, None, init=None)
        elapsed = time.time() - started
        top1 = result.train_metrics.top1_pi
        _report(
            "6a (overfit)",
            top1 >= 99.0 and elapsed < 600.0,
            f"train top-1 {top1:.1f}% (>= 99%) on 20 clips within 60 epochs, {elapsed:.0f}s",
        )

    def test_transfer_direction(self, desk_corpus, desk_pretrain):
        """Matched seeds and 30-epoch budgets on a 3-labels-per-class split:
        pre-trained init must reach at least the scratch test accuracy."""
        train, test = desk_corpus
        labeled = Dataset([s for s in train.sequences if int(s.id[-3:]) < 3], train.num_classes)
        pre_result, _ = desk_pretrain
        config = desk_finetune_config(seed=11, epochs=30)
        started = time.time()
        scratch = finetune(config, labeled, test, init=None)
        warm = finetune(config, labeled, test, init=pre_result.params)
        elapsed = time.time() - started
        s_top1, w_top1 = scratch.metrics.top1_pi, warm.metrics.top1_pi
        _report(
            "6b (transfer direction)",
            w_top1 >= s_top1 and elapsed < 600.0,
            f"pretrained-init test top-1 {w_top1:.2f}% >= scratch {s_top1:.2f}%, {elapsed:.0f}s",
        )


class TestCriterion7Determinism:
    def test_bit_identical_reruns(self, tmp_path):
        """Identical configs and seeds reproduce loss logs and checkpoints
        byte for byte, for both training entry points."""
        import json

        started = time.time()
        data_path = tmp_path / "data.jsonl"
        from masa.posedata import save_sequences

        save_sequences(gen_synthetic(3, 6, 16, seed=4), data_path)
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps({
            "pretrain": {
                "epochs": 2, "warmup_epochs": 1, "base_lr": 1e-3, "batch_size": 6,
                "ramp_epochs": 2, "bank_size": 16,
                "model": {"d_e": 18, "enc_layers": 1, "dec_layers": 1, "heads": 2,
                          "mlp_ratio": 2, "proj_dim": 8, "gcn_layers": 1,
                          "gcn_hidden": 4, "max_T": 32},
            },
            "finetune": {
                "epochs": 2, "batch_size": 6, "num_frames": 8,
                "model": {"d_e": 18, "enc_layers": 1, "dec_layers": 1, "heads": 2,
                          "mlp_ratio": 2, "proj_dim": 8, "gcn_layers": 1,
                          "gcn_hidden": 4, "max_T": 32},
            },
        }), encoding="utf-8")

        artifacts = []
        for run in ("a", "b"):
            pre_dir = tmp_path / f"pre_{run}"
            fin_dir = tmp_path / f"fin_{run}"
            assert main(["pretrain", "--config", str(cfg_path), "--data", str(data_path),
                         "--out-dir", str(pre_dir), "--seed", "13", "--no-figures"]) == 0
            assert main(["finetune", "--config", str(cfg_path), "--data-train", str(data_path),
                         "--data-test", str(data_path), "--out-dir", str(fin_dir),
                         "--init", str(pre_dir / "checkpoint"), "--seed", "13",
                         "--no-figures"]) == 0
            artifacts.append({
                "pre_log": (pre_dir / "loss_log.csv").read_bytes(),
                "pre_ckpt": (pre_dir / "checkpoint/params.bin").read_bytes(),
                "pre_manifest": (pre_dir / "checkpoint/manifest.json").read_bytes(),
                "fin_log": (fin_dir / "finetune_log.csv").read_bytes(),
                "fin_ckpt": (fin_dir / "checkpoint/params.bin").read_bytes(),
                "metrics": (fin_dir / "metrics.json").read_bytes(),
            })
        elapsed = time.time() - started
        same = {k: artifacts[0][k] == artifacts[1][k] for k in artifacts[0]}
        _report(
            "7 (determinism)",
            all(same.values()),
            f"pretrain+finetune reruns byte-identical across {len(same)} artifacts, {elapsed:.0f}s",
        )


class TestCriterion8MetricsFixture:
    def test_metrics_and_noise_identity(self, desk_corpus):
        started = time.time()
        labels = np.array([0, 0, 0, 1])
        logits = np.array([[2.0, 1.0], [3.0, 0.5], [1.0, 0.2], [5.0, 1.0]])
        m = metrics_from_predictions(labels, logits)
        fixture_ok = m.top1_pi == 75.0 and m.top1_pc == 50.0

        train, test = desk_corpus
        config = desk_finetune_config(seed=3, epochs=1)
        result = finetune(config, Dataset(train.sequences[:20], 10), test, init=None)
        cfg = ModelConfig(num_classes=10)
        clean = evaluate(result.params, cfg, test)
        noisy_seqs = [add_noise(s, 0.0, seed=50 + i) for i, s in enumerate(test.sequences)]
        noisy = evaluate(result.params, cfg, Dataset(noisy_seqs, 10))
        noise_ok = clean == noisy
        elapsed = time.time() - started
        _report(
            "8 (metrics fixture)",
            fixture_ok and noise_ok,
            f"P-I 75.0 / P-C 50.0 exact; sigma=0 evaluation identical to clean; {elapsed:.0f}s",
        )
