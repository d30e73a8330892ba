#!/usr/bin/env python
"""
Acceptance run: the long-running end-to-end checks that do not belong in the
unit test suite.

Sections:
  • Gradient integrity of the full objective on a tiny model
  • Matcher against exhaustive enumeration
  • Loss fixtures and GIoU properties
  • Toy model trained on synthetic data (accuracy@0.5 on held-out samples)
  • Ablation gates (detection tokens, alignment losses)
  • Determinism and checkpoint persistence
  • Latency breakdown

Usage::

    python tests/acceptance_run.py            # full protocol (tens of minutes)
    python tests/acceptance_run.py --quick    # scaled down, thresholds not enforced
"""

import argparse
import itertools
import math
import os
import shutil
import sys
import tempfile
import time

import numpy as np


def assert_true(cond, message="condition failed"):
    if not cond:
        raise AssertionError(message)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    parser.add_argument("--quick", action="store_true", help="small sizes, report only")
    args = parser.parse_args()

    import yoro
    from yoro import Box, Config, ModelConfig, SyntheticSpec, TrainConfig, generate
    from yoro._checkpoint import load_checkpoint, save_checkpoint
    from yoro._tensor import Tensor
    from yoro.bench import benchmark
    from yoro.data import tokenize
    from yoro.geometry import giou, iou
    from yoro.gradcheck import check_gradients
    from yoro.losses import (build_ground_truth, match_predictions, normalize_alignment,
                             pa_loss, total_loss)
    from yoro.matching import hungarian
    from yoro.model import YoroModel
    from yoro.runtime import ablate, evaluate, train

    print(f"yoro {yoro.__version__}, numpy {np.__version__}, Python {sys.version.split()[0]}")
    print(f"Mode: {'quick' if args.quick else 'full'}")

    tmpdir = tempfile.mkdtemp(prefix="yoro-acceptance-")
    passed = 0
    failed = 0
    t_start = time.time()

    def run_test(name, fn):
        nonlocal passed, failed
        t0 = time.time()
        try:
            fn()
            passed += 1
            dt = time.time() - t0
            slow = f" ({dt:.1f}s)" if dt > 2.0 else ""
            print(f"  [PASS] {name}{slow}")
        except Exception as e:
            print(f"  [FAIL] {name} -- {e}", file=sys.stderr)
            failed += 1

    tiny = ModelConfig(d=16, depth=2, heads=2, vocab_size=12, image_height=32, image_width=32,
                       patch=8, q=2, d_align=16)

    # ------------------------------------------------------------------
    print("\n=== 1. Gradient integrity ===")

    def gradients():
        rng = np.random.default_rng(11)
        ids = [int(i) for i in rng.integers(1, tiny.vocab_size, size=6)]
        pixels = rng.uniform(size=(32, 32, 3))
        gt = build_ground_truth([Box(0.35, 0.6, 0.3, 0.4)], [(1, 2, 4)], len(ids), tiny)
        model = YoroModel(tiny, seed=0)
        assignment = match_predictions(model(ids, pixels).predictions, gt, tiny)

        def objective():
            return total_loss(gt, model(ids, pixels), assignment, tiny).objective

        t0 = time.time()
        worst = check_gradients(objective, dict(model.named_parameters()), rtol=1e-3,
                                max_entries=3 if args.quick else 25)
        elapsed = time.time() - t0
        bad = {name: err for name, err in worst.items() if err > 1e-3}
        print(f"    {len(worst)} tensors, worst relative error {max(worst.values()):.2e}, "
              f"{elapsed:.1f}s")
        assert_true(not bad, f"gradient mismatch: {bad}")
        assert_true(args.quick or elapsed <= 120.0, f"took {elapsed:.0f}s")

    run_test("full objective, every parameter tensor", gradients)

    # ------------------------------------------------------------------
    print("\n=== 2. Matcher oracle ===")

    def matcher():
        rng = np.random.default_rng(0)
        for trial in range(1000):
            g = int(rng.integers(1, 7))
            q = int(rng.integers(g, 7))
            cost = rng.normal(size=(q, g))
            best = min(sum(cost[perm[k], k] for k in range(g))
                       for perm in itertools.permutations(range(q), g))
            got = hungarian(cost).cost
            assert_true(abs(got - best) <= 1e-12 * max(1.0, abs(best)),
                        f"trial {trial}: {got} vs {best}")

    run_test("1000 random matrices vs enumeration", matcher)

    # ------------------------------------------------------------------
    print("\n=== 3. Loss fixtures ===")
    table = np.zeros((5, 6))
    table[1, [4, 5]] = 1.0
    table[4, [2, 3, 4]] = 1.0

    def alignment_row():
        a_tok, _ = normalize_alignment(table)
        assert_true(np.allclose(a_tok[1], [0, 0, 0, 0, 0.5, 0.5]), f"row 1: {a_tok[1]}")

    def zero_logit_tpa():
        a_tok, a_pat = normalize_alignment(table)
        tpa, _, _ = pa_loss(Tensor(np.zeros((5, 3))), Tensor(np.zeros((6, 3))), a_tok, a_pat,
                            0.07)
        rows = [k for k in range(5) if table[k].any()]
        expected = sum(math.log(6 / table[k].sum()) for k in rows) / len(rows)
        assert_true(abs(tpa.item() - expected) <= 1e-12, f"{tpa.item()} vs {expected}")

    def giou_properties():
        rng = np.random.default_rng(1)
        for _ in range(10_000):
            a = Box(*rng.uniform(0.1, 0.9, 2), *rng.uniform(0.05, 0.5, 2))
            b = Box(*rng.uniform(0.1, 0.9, 2), *rng.uniform(0.05, 0.5, 2))
            value = giou(a, b)
            assert_true(-1.0 <= value <= 1.0, f"range: {value}")
            assert_true(abs(value - giou(b, a)) <= 1e-12, "symmetry")
            assert_true(value <= iou(a, b) + 1e-12, "giou above iou")
            assert_true(abs(giou(a, a) - 1.0) <= 1e-12, "identity")

    run_test("aligned token row", alignment_row)
    run_test("zero-logit token-to-patch loss", zero_logit_tpa)
    run_test("GIoU on 10^4 random pairs", giou_properties)

    # ------------------------------------------------------------------
    print("\n=== 4. Synthetic training ===")
    n_train, n_val, epochs = (200, 50, 2) if args.quick else (2000, 500, 20)
    samples = list(generate(SyntheticSpec(seed=7), n_train + n_val))
    train_set, val_set = samples[:n_train], samples[n_train:]
    toy = Config(model=ModelConfig(), train=TrainConfig(epochs=epochs, progress=False))
    state = {}

    def end_to_end():
        t0 = time.time()
        result = train(toy, train_set, val_samples=val_set,
                       metrics_path=os.path.join(tmpdir, "toy.jsonl"))
        elapsed = time.time() - t0
        accuracy = result.history[-1]["val_acc"]
        state["result"] = result
        print(f"    {n_train} samples x {epochs} epochs: val accuracy {accuracy:.3f}, "
              f"{elapsed / 60:.1f} min")
        assert_true(args.quick or accuracy >= 0.85, f"accuracy {accuracy:.3f} < 0.85")
        assert_true(args.quick or elapsed <= 1800.0, f"took {elapsed / 60:.1f} min")

    run_test("toy model accuracy@0.5", end_to_end)

    # ------------------------------------------------------------------
    print("\n=== 5. Ablations ===")

    def ablations():
        seeds = [0] if args.quick else [0, 1, 2]
        summary = ablate(toy, train_set, val_set, seeds=seeds,
                         variants=["full", "cl_re", "no_det"],
                         metrics_path=os.path.join(tmpdir, "ablate.jsonl"))
        for name, acc in sorted(summary["mean_val_acc"].items()):
            print(f"    {name:8s} {acc:.3f}")
        if not summary["loss_check_passed"]:
            print("    note: full loss trails the CL+RE baseline (soft check)")
        assert_true(args.quick or summary["det_gate_passed"],
                    f"detection token gap {summary['det_gap']:.3f} < 0.03")

    run_test("detection-token gate", ablations)

    # ------------------------------------------------------------------
    print("\n=== 6. Determinism and persistence ===")
    small = Config(model=tiny, train=TrainConfig(epochs=2, batch_size=4, progress=False))
    shapes = list(generate(SyntheticSpec(seed=3, size=32, min_side=6, max_side=10), 16))

    def determinism():
        logs = []
        for name in ("a", "b"):
            path = os.path.join(tmpdir, f"{name}.jsonl")
            train(small, shapes[:12], val_samples=shapes[12:], metrics_path=path)
            with open(path, "rb") as f:
                logs.append(f.read())
        assert_true(logs[0] == logs[1], "metrics logs differ")

    def persistence():
        result = train(small, shapes[:12])
        path = save_checkpoint(os.path.join(tmpdir, "model.yoro"), result.model, result.vocab)
        model, vocab, _ = load_checkpoint(path)
        before = evaluate(result.model, shapes[12:], result.vocab)
        after = evaluate(model, shapes[12:], vocab)
        assert_true(before.accuracy == after.accuracy, "accuracy changed")
        assert_true([r["box"] for r in before.records] == [r["box"] for r in after.records],
                    "boxes changed")

    run_test("identical seeds, identical logs", determinism)
    run_test("checkpoint round trip", persistence)

    # ------------------------------------------------------------------
    print("\n=== 7. Bench ===")

    def bench():
        result = state.get("result")
        if result is None:
            raise AssertionError("no trained toy model")
        sample = val_set[0]
        ids = tokenize(sample.phrase, result.vocab, result.model.config.m_max)
        report = benchmark(result.model, ids, sample.pixels, iterations=100, warmup=10)
        shares = report.stage_percent
        print("    " + ", ".join(f"{k} {v:.1f}%" for k, v in shares.items())
              + f", {report.fps:.1f} FPS")
        assert_true(abs(sum(shares.values()) - 100.0) <= 1.0, f"shares sum {sum(shares.values())}")
        assert_true(report.fps > 0.0, "no throughput")

    run_test("100 iterations at batch 1", bench)

    # ---- Summary ----
    elapsed = time.time() - t_start
    total = passed + failed
    print(f"\n{'='*60}")
    print(f"Results: {passed}/{total} passed, {failed} failed")
    print(f"Time: {elapsed:.1f}s")
    print(f"{'='*60}")

    if os.path.exists(tmpdir):
        shutil.rmtree(tmpdir, ignore_errors=True)

    if failed > 0:
        sys.exit(1)
    print("All acceptance checks passed!")


if __name__ == "__main__":
    main()
