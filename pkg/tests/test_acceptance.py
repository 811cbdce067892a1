"""Acceptance suite: eight release gates, one verdict line each.

Run ``pytest tests/test_acceptance.py -s`` to watch the PASS/FAIL lines
as they complete.  Gate 4 trains two full cross-validated experiments
and dominates the wall time (roughly an hour on one core); everything
else finishes in seconds.
"""

import math
import time

import numpy as np

import trajid.autodiff as ad
from trajid.dsp import (
    FilterSpec,
    design_butterworth,
    evaluate_response,
    preprocess,
    read_windows,
    write_windows,
)
from trajid.harness import RunConfig, make_folds, run_experiment
from trajid.ingest import load_catalog
from trajid.metrics import confusion_matrix, per_target_accuracy, render_percent
from trajid.model import ModelConfig, build, forward, load_model, save_model
from trajid.syngen import export_catalog, synth_catalog


def _verdict(num, name, ok, detail=""):
    tail = f"  [{detail}]" if detail else ""
    line = f"criterion {num} ({name}): {'PASS' if ok else 'FAIL'}{tail}"
    print(line, flush=True)
    assert ok, line


# ------------------------------------------------------- 1: filter fidelity


def test_criterion_1_filter_fidelity():
    started = time.time()
    chain = design_butterworth(FilterSpec())

    def mag(f):
        return abs(evaluate_response(chain, f, 250.0))

    dc_ok = abs(mag(0.0) - 1.0) <= 1e-9
    cut_ok = abs(mag(7.0) - 1.0 / math.sqrt(2.0)) <= 1e-6
    grid = np.linspace(0.0, 125.0, 1000)
    mags = np.array([mag(f) for f in grid])
    mono_ok = bool(np.all(np.diff(mags) < 0.0))
    analog_ref = 1.0 / math.sqrt(257.0)
    octave_ratio = mag(14.0) / analog_ref
    octave_ok = abs(octave_ratio - 1.0) <= 0.10
    elapsed_ms = (time.time() - started) * 1e3
    _verdict(
        1, "filter fidelity", dc_ok and cut_ok and mono_ok and octave_ok,
        f"|H(0)|-1={mag(0.0) - 1.0:.1e}, |H(7)|={mag(7.0):.8f}, "
        f"monotone={mono_ok}, |H(14)|/ref={octave_ratio:.4f}, {elapsed_ms:.0f} ms",
    )


# -------------------------------------------------- 2: gradient correctness


def _grad_rel_err(build_loss, leaves, eps=1e-5):
    """Worst norm-relative error between tape and central-FD gradients."""
    for leaf in leaves:
        leaf.grad = None
    tape = ad.Tape()
    ad.backward(tape, build_loss(tape))
    worst = 0.0
    for leaf in leaves:
        analytic = np.zeros_like(leaf.values) if leaf.grad is None else np.asarray(leaf.grad)
        numeric = np.empty_like(leaf.values)
        flat, nflat = leaf.values.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = float(build_loss(None).values)
            flat[i] = keep - eps
            down = float(build_loss(None).values)
            flat[i] = keep
            nflat[i] = (up - down) / (2.0 * eps)
        denom = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-12)
        worst = max(worst, float(np.linalg.norm(numeric - analytic) / denom))
    return worst


def _op_suite_worst(seed):
    """FD-check every op once; activation layout alternates with seed parity."""
    rng = np.random.Generator(np.random.PCG64(seed))
    blc = bool(seed % 2)

    def leaf(*shape):
        return ad.Tensor(rng.normal(size=shape), requires_grad=True)

    def fixed(*shape):
        return ad.Tensor(rng.normal(size=shape))

    worst = 0.0

    # conv1d with stride and padding, scalarized through pool -> linear -> sce
    xc = leaf(2, 6, 3) if blc else leaf(2, 3, 6)
    wc, bc = leaf(4, 3, 3), leaf(4)
    head_c, lab_c = fixed(3, 4), rng.integers(0, 3, size=2)

    def conv_loss(tape):
        out = ad.conv1d(tape, xc, wc, bc, stride=2, pad=1, channels_last=blc)
        pooled = ad.global_avg_pool(tape, out, channels_last=blc)
        return ad.softmax_cross_entropy(tape, ad.linear(tape, pooled, head_c), lab_c)

    worst = max(worst, _grad_rel_err(conv_loss, (xc, wc, bc)))

    # batchnorm1d, train mode (batch statistics) and eval mode (running stats)
    xb = leaf(3, 5, 4) if blc else leaf(3, 4, 5)
    gamma, beta = leaf(4), leaf(4)
    head_b, lab_b = fixed(2, 4), rng.integers(0, 2, size=3)
    r_mean, r_var = np.zeros(4), np.ones(4)

    def bn_train_loss(tape):
        out = ad.batchnorm1d(tape, xb, gamma, beta, r_mean, r_var,
                             train=True, channels_last=blc)
        pooled = ad.global_avg_pool(tape, out, channels_last=blc)
        return ad.softmax_cross_entropy(tape, ad.linear(tape, pooled, head_b), lab_b)

    worst = max(worst, _grad_rel_err(bn_train_loss, (xb, gamma, beta)))

    frozen_mean = rng.normal(size=4)
    frozen_var = np.abs(rng.normal(size=4)) + 0.5

    def bn_eval_loss(tape):
        out = ad.batchnorm1d(tape, xb, gamma, beta, frozen_mean, frozen_var,
                             train=False, channels_last=blc)
        pooled = ad.global_avg_pool(tape, out, channels_last=blc)
        return ad.softmax_cross_entropy(tape, ad.linear(tape, pooled, head_b), lab_b)

    worst = max(worst, _grad_rel_err(bn_eval_loss, (xb, gamma, beta)))

    # relu, inputs pushed clear of the kink so FD stays differentiable
    xr_vals = rng.normal(size=(2, 3, 5))
    xr_vals += np.where(xr_vals >= 0, 0.05, -0.05)
    xr = ad.Tensor(xr_vals, requires_grad=True)
    head_r, lab_r = fixed(2, 3), rng.integers(0, 2, size=2)

    def relu_loss(tape):
        pooled = ad.global_avg_pool(tape, ad.relu(tape, xr))
        return ad.softmax_cross_entropy(tape, ad.linear(tape, pooled, head_r), lab_r)

    worst = max(worst, _grad_rel_err(relu_loss, (xr,)))

    # add (residual sum, both operands trainable)
    aa, ab = leaf(2, 3, 5), leaf(2, 3, 5)

    def add_loss(tape):
        pooled = ad.global_avg_pool(tape, ad.add(tape, aa, ab))
        return ad.softmax_cross_entropy(tape, ad.linear(tape, pooled, head_r), lab_r)

    worst = max(worst, _grad_rel_err(add_loss, (aa, ab)))

    # global_avg_pool on its own leaf
    xp = leaf(2, 4, 6)
    head_p, lab_p = fixed(3, 4), rng.integers(0, 3, size=2)

    def pool_loss(tape):
        pooled = ad.global_avg_pool(tape, xp)
        return ad.softmax_cross_entropy(tape, ad.linear(tape, pooled, head_p), lab_p)

    worst = max(worst, _grad_rel_err(pool_loss, (xp,)))

    # linear with bias
    xl, wl, bl = leaf(5, 7), leaf(3, 7), leaf(3)
    lab_l = rng.integers(0, 3, size=5)

    def linear_loss(tape):
        return ad.softmax_cross_entropy(tape, ad.linear(tape, xl, wl, bl), lab_l)

    worst = max(worst, _grad_rel_err(linear_loss, (xl, wl, bl)))

    # softmax cross-entropy straight on leaf logits
    lg = leaf(6, 4)
    lab_s = rng.integers(0, 4, size=6)

    def sce_loss(tape):
        return ad.softmax_cross_entropy(tape, lg, lab_s)

    worst = max(worst, _grad_rel_err(sce_loss, (lg,)))
    return worst


def _model_directional_err(seed):
    """Directional FD on the full small model; returns (rel_err, note)."""
    store = build(ModelConfig(n_classes=3, width_mult=0.125), seed=seed, dtype=np.float64)
    batch = labels = None
    for attempt in range(20):
        rng = np.random.Generator(np.random.PCG64(9000 + 191 * seed + attempt))
        cand = rng.normal(size=(4, 3, 7))
        probe = []
        forward(store, cand, train=True, probe=probe)
        # an FD step could cross a relu kink if any pre-relu value is tiny
        if min(float(np.min(np.abs(p))) for p in probe) >= 1e-4:
            batch, labels = cand, rng.integers(0, 3, size=4)
            break
    if batch is None:
        return math.inf, f"seed {seed}: no kink-clear batch in 20 draws"
    store.zero_grads()
    tape = ad.Tape()
    loss = ad.softmax_cross_entropy(tape, forward(store, batch, train=True, tape=tape), labels)
    ad.backward(tape, loss)
    grad = store.flat_grads.copy()

    dir_rng = np.random.Generator(np.random.PCG64(5000 + seed))
    direction = dir_rng.normal(size=store.n_params)
    direction /= np.linalg.norm(direction)
    eps = 1e-6

    def value(shift):
        store.flat_values[...] += shift
        out = forward(store, batch, train=True)
        store.flat_values[...] -= shift
        return float(ad.softmax_cross_entropy(None, out, labels).values)

    numeric = (value(eps * direction) - value(-eps * direction)) / (2.0 * eps)
    analytic = float(grad @ direction)
    denom = max(abs(numeric), abs(analytic), 1e-12)
    return abs(numeric - analytic) / denom, None


def test_criterion_2_gradient_correctness():
    started = time.time()
    worst_op = worst_model = 0.0
    notes = []
    for seed in range(100):
        worst_op = max(worst_op, _op_suite_worst(seed))
        err, note = _model_directional_err(seed)
        worst_model = max(worst_model, err)
        if note:
            notes.append(note)
    elapsed = time.time() - started
    ok = not notes and worst_op < 1e-4 and worst_model < 1e-4 and elapsed < 60.0
    detail = (f"100 seeds, worst op rel {worst_op:.2e}, "
              f"worst model rel {worst_model:.2e}, {elapsed:.1f} s")
    if notes:
        detail += f"; {notes[0]}"
    _verdict(2, "gradient correctness", ok, detail)


# ------------------------------------------------------- 3: overfit oracle


def test_criterion_3_overfit_oracle():
    started = time.time()
    catalog, _ = synth_catalog(n_subjects=2, trials_per_target=1,
                               separation=1.0, master_seed=5)
    ws = preprocess(catalog, FilterSpec(), 7, catalog.trials)
    picks = np.concatenate(
        [np.flatnonzero(ws.participant_ids == pid)[:16] for pid in (0, 1)])
    batch = ws.windows[picks]
    labels = ws.participant_ids[picks]

    store = build(ModelConfig(n_classes=2, width_mult=0.125), seed=0)
    optimizer = ad.Adam(store.flat_values, store.flat_grads, lr=1e-3)
    reached = None
    for epoch in range(1, 201):
        store.zero_grads()
        tape = ad.Tape()
        logits = forward(store, batch, train=True, tape=tape)
        ad.backward(tape, ad.softmax_cross_entropy(tape, logits, labels))
        optimizer.step()
        preds = np.argmax(forward(store, batch, train=False).values, axis=1)
        if np.array_equal(preds, labels):
            reached = epoch
            break
    elapsed = time.time() - started
    ok = picks.size == 32 and reached is not None and elapsed < 30.0
    _verdict(3, "overfit oracle",
             ok, f"32 windows, 100% at epoch {reached}, {elapsed:.1f} s")


# -------------------------------------------------- 4: synthetic end-to-end


def test_criterion_4_synthetic_end_to_end(tmp_path):
    chance = 1.0 / 6.0
    started = time.time()
    accuracy = {}
    for separation in (1.0, 0.0):
        catalog, _ = synth_catalog(n_subjects=6, trials_per_target=10,
                                   separation=separation, master_seed=100)
        summary = run_experiment(catalog, RunConfig(seed=100),
                                 tmp_path / f"sep_{separation:g}")
        accuracy[separation] = summary.window_accuracy["mean"]
    minutes = (time.time() - started) / 60.0

    # Windows of one trial share its dynamics, so the independent unit for
    # the chance band is the trial: each of the 540 is tested exactly once.
    n_trials = 6 * 9 * 10
    sigma = math.sqrt(chance * (1.0 - chance) / n_trials)
    separated_ok = accuracy[1.0] >= 0.80
    chance_ok = abs(accuracy[0.0] - chance) <= 3.0 * sigma
    _verdict(
        4, "synthetic end-to-end", separated_ok and chance_ok,
        f"sep=1 mean window acc {accuracy[1.0]:.4f} (need >= 0.80); "
        f"sep=0 {accuracy[0.0]:.4f} vs {chance:.4f} +/- {3.0 * sigma:.4f}; "
        f"{minutes:.1f} min",
    )


# ----------------------------------------------- 5: protocol invariants


def test_criterion_5_protocol_invariants():
    problems = []
    for n_subjects, reps, seed in ((3, 2, 13), (5, 3, 29), (6, 10, 100)):
        catalog, _ = synth_catalog(n_subjects, reps, separation=1.0, master_seed=seed)
        all_keys = {(t.participant_id, t.target_id, t.trial_id) for t in catalog.trials}
        plans = make_folds(catalog, k=10, seed=seed)
        tested = set()
        for plan in plans:
            train, val, test = set(plan.train), set(plan.val), set(plan.test)
            if train & val or train & test or val & test:
                problems.append(f"fold {plan.fold_id}: splits overlap")
            if (train | val | test) != all_keys:
                problems.append(f"fold {plan.fold_id}: splits do not cover the catalog")
            if test & tested:
                problems.append(f"fold {plan.fold_id}: trial tested twice")
            tested |= test
        if tested != all_keys:
            problems.append(f"catalog {n_subjects}x{reps}: test sets miss trials")
        for pid in range(n_subjects):
            counts = [sum(1 for key in plan.test if key[0] == pid) for plan in plans]
            if max(counts) - min(counts) > 1:
                problems.append(f"participant {pid}: test counts {counts}")

    # windows inherit their trial's split: check one fold end to end
    catalog, _ = synth_catalog(3, 2, separation=1.0, master_seed=13)
    by_key = {(t.participant_id, t.target_id, t.trial_id): t for t in catalog.trials}
    plan = make_folds(catalog, k=10, seed=13)[0]
    spec = FilterSpec()
    seen = {}
    for split_name in ("train", "val", "test"):
        keys = getattr(plan, split_name)
        ws = preprocess([by_key[k] for k in keys], spec, 7, [by_key[k] for k in plan.train])
        triples = set(zip(ws.participant_ids.tolist(), ws.target_ids.tolist(),
                          ws.trial_ids.tolist()))
        if not triples <= set(keys):
            problems.append(f"{split_name}: windows from outside the split")
        for other, other_triples in seen.items():
            if triples & other_triples:
                problems.append(f"{split_name}/{other}: a trial's windows crossed splits")
        seen[split_name] = triples

    _verdict(5, "protocol invariants", not problems,
             problems[0] if problems else "3 catalogs x 10 folds, exhaustive set checks")


# ------------------------------------------------- 6: reporting fidelity


def test_criterion_6_reporting_fidelity():
    problems = []
    rng = np.random.Generator(np.random.PCG64(6))

    for _ in range(200):
        p = int(rng.integers(2, 9))
        counts = rng.integers(0, 40, size=(p, p))
        rendered = render_percent(counts)
        for raw, row in zip(counts, rendered):
            if raw.sum() and abs(int(row.sum()) - 100) > p - 1:
                problems.append(f"row sum {int(row.sum())} for P={p}")

    for p in (2, 5, 9):
        labels = np.repeat(np.arange(p), 7)
        rendered = render_percent(confusion_matrix(labels, labels, p))
        if not np.array_equal(rendered, 100 * np.eye(p, dtype=np.int64)):
            problems.append(f"perfect classifier not identity for P={p}")

    for _ in range(50):
        n = int(rng.integers(20, 200))
        target_ids = rng.integers(0, 9, size=n)
        correct = rng.random(n) < 0.7
        per = per_target_accuracy(target_ids, correct, 9)
        weighted = sum(acc * int(np.sum(target_ids == t))
                       for t, acc in enumerate(per) if acc is not None) / n
        if abs(weighted - correct.mean()) > 1e-12:
            problems.append(f"weighted recombination off by {abs(weighted - correct.mean()):.2e}")

    _verdict(6, "reporting fidelity", not problems,
             problems[0] if problems else "row sums, identity render, weighted recombination")


# ------------------------------------------------------ 7: determinism


def test_criterion_7_determinism(tmp_path):
    catalog, _ = synth_catalog(n_subjects=3, trials_per_target=2,
                               separation=1.0, master_seed=13)
    config = RunConfig(epochs=2, width_mult=0.125, folds=3, seed=11)
    for tag in ("a", "b"):
        run_experiment(catalog, config, tmp_path / tag)

    problems = []
    for rel in ["summary.json"] + [f"fold_{k}/model.bin" for k in range(3)]:
        if (tmp_path / "a" / rel).read_bytes() != (tmp_path / "b" / rel).read_bytes():
            problems.append(f"{rel} differs")

    blobs = []
    for tag in ("wa", "wb"):
        ws = preprocess(catalog, FilterSpec(), 7, catalog.trials)
        path = tmp_path / f"{tag}.bin"
        write_windows(ws, path)
        blobs.append(path.read_bytes())
    if blobs[0] != blobs[1]:
        problems.append("window files differ")

    _verdict(7, "determinism", not problems,
             problems[0] if problems else "summary.json, 3 model files, window files byte-equal")


# ------------------------------------------------------ 8: round-trips


def test_criterion_8_round_trips(tmp_path):
    problems = []

    store = build(ModelConfig(n_classes=4, width_mult=0.125), seed=21)
    rng = np.random.Generator(np.random.PCG64(8))
    batch = rng.normal(size=(5, 3, 7)).astype(np.float32)
    before = forward(store, batch, train=False).values.copy()
    save_model(store, tmp_path / "model.bin")
    loaded = load_model(tmp_path / "model.bin")
    if loaded.flat_values.tobytes() != store.flat_values.tobytes():
        problems.append("parameter bytes differ after reload")
    for name, arr in store.running.items():
        if loaded.running[name].tobytes() != arr.tobytes():
            problems.append(f"running stat {name} differs")
    after = forward(loaded, batch, train=False).values
    if not np.array_equal(before, after):
        problems.append("forward output changed after reload")

    catalog, signatures = synth_catalog(n_subjects=2, trials_per_target=1,
                                        separation=0.5, master_seed=3)
    ws = preprocess(catalog, FilterSpec(), 7, catalog.trials)
    write_windows(ws, tmp_path / "windows.bin")
    back = read_windows(tmp_path / "windows.bin")
    if back.windows.tobytes() != ws.windows.tobytes():
        problems.append("window bytes differ after reload")
    for field in ("participant_ids", "target_ids", "trial_ids"):
        if not np.array_equal(getattr(back, field), getattr(ws, field)):
            problems.append(f"{field} differ after reload")
    if back.fold_tag != ws.fold_tag:
        problems.append("fold tag differs after reload")
    write_windows(back, tmp_path / "windows2.bin")
    if (tmp_path / "windows.bin").read_bytes() != (tmp_path / "windows2.bin").read_bytes():
        problems.append("write -> read -> write is not byte-stable")

    manifest = export_catalog(catalog, signatures, tmp_path / "cat")
    again = load_catalog(manifest)
    theirs = {(t.participant_id, t.target_id, t.trial_id): t for t in again.trials}
    for trial in catalog.trials:
        twin = theirs.get((trial.participant_id, trial.target_id, trial.trial_id))
        if twin is None or not np.array_equal(twin.samples, trial.samples):
            problems.append("catalog samples differ after export/load")
            break

    _verdict(8, "round-trips", not problems,
             problems[0] if problems else "model, window file, catalog all bit-exact")
