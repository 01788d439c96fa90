"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line. Run with ``pytest tests/test_acceptance.py -v -s``.

Tolerances are pinned here; expected values come from independent oracles
(exhaustive enumeration, hand-computed closed forms, generate-and-refit).
"""

import math
import socket
import threading
import time

import numpy as np
import pytest

from conftest import oracle_inputs, random_instance
from enum_oracle import enumerate_marginals
from treekt.bank import generate_bank, sample_exam_set, truncate_histories
from treekt.engine import (
    Difficulty,
    EmConfig,
    InteractionRecord,
    StudentHistory,
    TracerParams,
    fit_em,
    infer_posteriors,
)
from treekt.generator import TemplateLibrary, TemplateQuestionSource
from treekt.policy import education_value
from treekt.simulate import SimulationConfig, run_cohort, run_practice
from treekt.synth import (
    generate_cohort,
    synthetic_params,
    synthetic_tree,
    template_tree,
)
from treekt.tree import KcTree
from treekt.verifier import (
    VerifierModel,
    VerifierTrainConfig,
    alignment_score,
    identify_kc,
    infonce_loss,
    train_verifier,
)


def report(number: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance] criterion {number:2d} {status} - {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"criterion {number} failed: {name} {detail}"


def test_criterion_1_inference_oracle_equivalence():
    rng = np.random.default_rng(20_240_001)
    start = time.time()
    worst = 0.0
    for _ in range(100):
        tree, params, history = random_instance(rng, max_nodes=12, max_records=20)
        post = infer_posteriors(params, tree, history)
        marginals, _ = enumerate_marginals(
            *oracle_inputs(tree, params, history), epsilon=params.epsilon
        )
        for i, kc in enumerate(tree.ids()):
            worst = max(worst, abs(post.mastery[kc] - marginals[i]))
    elapsed = time.time() - start
    report(
        1,
        "inference matches exhaustive enumeration",
        worst <= 1e-9 and elapsed < 10.0,
        f"max err {worst:.2e}, {elapsed:.1f}s",
    )


def test_criterion_2_worked_example():
    tree = KcTree.from_parent_links(
        [("R", "root", None), ("L1", "leaf one", "R"), ("L2", "leaf two", "R")]
    )
    params = TracerParams(
        gamma={"R": 0.5, "L1": 0.4, "L2": 0.4},
        epsilon=0.2, r_easy=0.9, r_med=0.8, r_hard=0.5,
    )
    history = StudentHistory("s", (InteractionRecord("L1", True, Difficulty.MEDIUM),))
    post = infer_posteriors(params, tree, history)
    ok_post = (
        abs(post.mastery["L1"] - 0.903226) <= 1e-5
        and abs(post.mastery["R"] - 0.645161) <= 1e-5
        and abs(post.mastery["L2"] - 0.787097) <= 1e-5
    )
    ev = education_value(params, tree, StudentHistory("s"), "L1")
    ok_ev = abs(ev.value - 2.335484) <= 1e-5
    report(
        2,
        "worked three-node example",
        ok_post and ok_ev,
        f"posteriors ({post.mastery['L1']:.6f}, {post.mastery['R']:.6f}, "
        f"{post.mastery['L2']:.6f}), education value {ev.value:.6f}",
    )


def test_criterion_3_em_recovery():
    tree = synthetic_tree(30, branching=5)
    params = synthetic_params(tree, seed=3, epsilon=0.15, r_med=0.8)
    cohort = generate_cohort(tree, params, n_students=500, n_records=50, seed=4)
    start = time.time()
    result = fit_em(tree, cohort, EmConfig(max_iters=100, seed=0))
    elapsed = time.time() - start
    monotone = all(b >= a - 1e-8 for a, b in zip(result.trace, result.trace[1:]))
    eps_err = abs(result.params.epsilon - params.epsilon)
    rmed_err = abs(result.params.r_med - params.r_med)
    report(
        3,
        "EM monotone trace and rate recovery",
        monotone and eps_err < 0.05 and rmed_err < 0.05 and elapsed < 60.0,
        f"eps err {eps_err:.4f}, r_med err {rmed_err:.4f}, {elapsed:.1f}s",
    )


@pytest.fixture(scope="module")
def policy_world():
    tree = synthetic_tree(28, branching=5)
    params = synthetic_params(tree, seed=0)
    students = generate_cohort(tree, params, n_students=50, n_records=50, seed=1)
    cohort = truncate_histories(students)
    bank = generate_bank(tree, per_leaf=2, seed=0)
    return tree, params, cohort, bank


def test_criterion_4_policy_ordering(policy_world):
    tree, params, cohort, bank = policy_world
    means = {"initial": [], "random": [], "oracle": []}
    for seed in range(20):
        exam = sample_exam_set(bank, tree, 60, seed=seed)
        for policy in means:
            config = SimulationConfig(rounds=10, exam_size=60, policy=policy, seed=seed)
            rep = run_cohort(params, tree, cohort, config, exam=exam)
            means[policy].append(rep.aggregate[policy]["mean"])
    mi = float(np.mean(means["initial"]))
    mr = float(np.mean(means["random"]))
    mo = float(np.mean(means["oracle"]))
    report(
        4,
        "Initial < Random < Oracle with gap >= 0.01 over 20 seeds",
        mi < mr < mo and mo - mr >= 0.01,
        f"initial {mi:.4f}, random {mr:.4f}, oracle {mo:.4f}, gap {mo - mr:.4f}",
    )


def test_criterion_5_practice_round_monotonicity(policy_world):
    tree, params, cohort, bank = policy_world
    exam = sample_exam_set(bank, tree, 60, seed=100)
    scores = []
    for rounds in (10, 20, 30):
        config = SimulationConfig(rounds=rounds, exam_size=60, policy="oracle", seed=0)
        rep = run_cohort(params, tree, cohort, config, exam=exam)
        scores.append(rep.aggregate["oracle"]["mean"])
    report(
        5,
        "oracle exam score non-decreasing over k in {10, 20, 30}",
        scores[0] <= scores[1] <= scores[2],
        "k=10/20/30 -> " + "/".join(f"{s:.4f}" for s in scores),
    )


class _LogitEmbedder:
    """Candidate i embeds to (g_i, 1); the question (a, b) produces logits
    a*g_i + b, so one embedder covers every affine transform."""

    def __init__(self, logits):
        self.dim = 2
        self.table = {f"c{i}": np.array([g, 1.0]) for i, g in enumerate(logits)}

    def set_question(self, a, b):
        self.table["q"] = np.array([a, b])

    def embed(self, text):
        return self.table[text]


def _score_model(logits, tau=1.0):
    embedder = _LogitEmbedder(logits)
    embedder.set_question(1.0, 0.0)
    model = VerifierModel(
        provider=embedder, q_proj=np.eye(2), c_proj=np.eye(2), tau=tau
    )
    names = [f"c{i}" for i in range(len(logits))]
    tree = KcTree.from_parent_links(
        [("root", "root", None)] + [(n, n, "root") for n in names]
    )
    return model, tree, names


def test_criterion_6_score_standardization_properties():
    rng = np.random.default_rng(777)
    worst = 0.0
    argmax_ok = True
    for _ in range(1000):
        logits = rng.normal(scale=rng.uniform(0.5, 3.0), size=int(rng.integers(2, 9)))
        a, b = float(rng.uniform(0.1, 10.0)), float(rng.normal(scale=5.0))
        model, tree, names = _score_model(logits.tolist())
        base = [alignment_score(model, tree, "q", kc, names).score for kc in names]
        model.provider.set_question(a, b)
        mapped = [alignment_score(model, tree, "q", kc, names).score for kc in names]
        worst = max(worst, max(abs(x - y) for x, y in zip(base, mapped)))
        if int(np.argmax(base)) != int(np.argmax(logits)) and len(set(logits)) == len(logits):
            argmax_ok = False
        if int(np.argmax(mapped)) != int(np.argmax(base)):
            argmax_ok = False
    model, tree, names = _score_model([1.0, 2.0, 3.0], tau=1.0)
    scores = [alignment_score(model, tree, "q", kc, names).score for kc in names]
    want = (0.2271, 0.5, 0.7729)
    fixed_ok = all(abs(s - w) <= 1e-4 for s, w in zip(scores, want))
    report(
        6,
        "score affine invariance, argmax equivalence, {1,2,3} fixture",
        worst <= 1e-12 and argmax_ok and fixed_ok,
        f"max affine drift {worst:.2e}, scores "
        + "/".join(f"{s:.4f}" for s in scores),
    )


def test_criterion_7_infonce_closed_forms():
    ok = True
    details = []
    for m in range(1, 9):
        table = {"q": [1.0], "pos": [1.0]}
        negs = [f"n{i}" for i in range(m)]
        table.update({n: [1.0] for n in negs})
        embedder = type(
            "T", (), {"dim": 1, "embed": lambda self, t, _t=table: np.array(_t[t])}
        )()
        model = VerifierModel(
            provider=embedder, q_proj=np.eye(1), c_proj=np.eye(1), tau=1.0
        )
        loss = infonce_loss(model, [("q", "pos")], [negs])
        if abs(loss - math.log(1 + m)) > 1e-12:
            ok = False
        details.append(f"m={m}:{loss:.6f}")
    # shift invariance: shared component adds the same offset to every logit
    base = {"q": [1.0, 1.0], "pos": [2.0, 0.0], "n": [0.5, 0.0]}
    shifted = {"q": [1.0, 1.0], "pos": [2.0, 9.0], "n": [0.5, 9.0]}
    losses = []
    for table in (base, shifted):
        embedder = type(
            "T", (), {"dim": 2, "embed": lambda self, t, _t=table: np.array(_t[t])}
        )()
        model = VerifierModel(
            provider=embedder, q_proj=np.eye(2), c_proj=np.eye(2), tau=1.0
        )
        losses.append(infonce_loss(model, [("q", "pos")], [["n"]]))
    shift_ok = abs(losses[0] - losses[1]) <= 1e-12
    report(
        7,
        "contrastive loss ln(1+m) and shift invariance",
        ok and shift_ok,
        f"shift delta {abs(losses[0] - losses[1]):.2e}",
    )


@pytest.fixture(scope="module")
def verifier_world():
    tree = template_tree(10, seed=0)
    library = TemplateLibrary(tree, seed=0)
    corpus = library.corpus(per_kc=30, seed=0)
    rng = np.random.default_rng(1)
    idx = rng.permutation(len(corpus))
    cut = int(0.8 * len(corpus))
    train = [corpus[i] for i in idx[:cut]]
    test = [corpus[i] for i in idx[cut:]]
    start = time.time()
    result = train_verifier(train, tree, VerifierTrainConfig())
    elapsed = time.time() - start
    return tree, library, result, test, elapsed


def test_criterion_8_verifier_end_to_end(verifier_world):
    tree, _, result, test, elapsed = verifier_world
    hits = sum(identify_kc(result.model, tree, q, tree.leaves) == kc for kc, q in test)
    accuracy = hits / len(test)
    report(
        8,
        "verifier held-out top-1 accuracy >= 0.9 with release defaults",
        accuracy >= 0.9 and elapsed < 60.0,
        f"accuracy {accuracy:.3f} ({hits}/{len(test)}), train {elapsed:.1f}s",
    )


def test_criterion_9_alignment_closure(verifier_world):
    tree, library, result, _, _ = verifier_world
    params = synthetic_params(tree, seed=9)
    source = TemplateQuestionSource(library, seed=11)
    config = SimulationConfig(rounds=10, exam_size=10, policy="generator", seed=5)
    steps = 0
    hits = 0
    student = 0
    while steps < 500:
        history = StudentHistory(f"closure-{student}")
        trajectory = run_practice(
            params, tree, history, config,
            question_source=source, verifier_model=result.model,
        )
        for step in trajectory.steps:
            steps += 1
            hits += step.intended_kc == step.verified_kc
        student += 1
    closure = hits / steps
    report(
        9,
        "intended == verified on >= 95% of 500 generator steps",
        closure >= 0.95,
        f"{hits}/{steps} = {closure:.3f}",
    )


def test_criterion_10_service_parity_and_isolation():
    import uvicorn

    from treekt.service import ArtifactRegistry, create_app

    tree = synthetic_tree(10, branching=4)
    params = synthetic_params(tree, seed=13)
    registry = ArtifactRegistry()
    registry.add_tree("t", tree)
    registry.add_params("p", params)
    app = create_app(registry)

    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    server = uvicorn.Server(
        uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    import httpx

    base = f"http://127.0.0.1:{port}"
    deadline = time.time() + 15
    while time.time() < deadline:
        try:
            if httpx.get(f"{base}/healthz", timeout=1.0).status_code == 200:
                break
        except httpx.TransportError:
            time.sleep(0.05)
    else:
        raise AssertionError("service did not start")

    rng = np.random.default_rng(99)
    leaves = tree.leaves
    plans = []
    for i in range(50):
        n = int(rng.integers(1, 12))
        plans.append(
            [(leaves[int(rng.integers(len(leaves)))], bool(rng.integers(2))) for _ in range(n)]
        )

    results: dict[int, dict] = {}

    def drive(client_id: int, plan):
        with httpx.Client(base_url=base, timeout=10.0) as client:
            sid = client.post("/sessions", json={"tree": "t", "params": "p"}).json()[
                "session_id"
            ]
            for kc, correct in plan:
                client.post(f"/sessions/{sid}/answers", json={"kc": kc, "correct": correct})
            results[client_id] = client.get(f"/sessions/{sid}/state").json()

    # 8 concurrent clients work through the 50 session plans
    for chunk_start in range(0, len(plans), 8):
        threads = [
            threading.Thread(target=drive, args=(i, plans[i]))
            for i in range(chunk_start, min(chunk_start + 8, len(plans)))
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

    worst = 0.0
    for i, plan in enumerate(plans):
        state = results[i]
        records = tuple(InteractionRecord(kc, correct) for kc, correct in plan)
        want = infer_posteriors(params, tree, StudentHistory("live", records))
        echoed = [(r["kc"], r["correct"]) for r in state["history"]]
        assert echoed == plan, f"session {i} history mangled"
        for kc, value in want.mastery.items():
            worst = max(worst, abs(state["mastery"][kc] - value))
    server.should_exit = True
    thread.join(timeout=10)
    report(
        10,
        "HTTP state parity over 50 sessions, 8 concurrent clients",
        worst <= 1e-12,
        f"max mastery deviation {worst:.2e}",
    )
