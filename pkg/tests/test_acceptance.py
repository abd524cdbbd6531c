"""Exit criteria. Each test is tagged with its criterion number; the terminal
summary prints one PASS/FAIL line per criterion.

Run alone with ``pytest -m acceptance``.
"""

import hashlib
import itertools
import random
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from oracles import (
    all_trees, build_tree, cohort_utility_bruteforce, exhaustive_distance_matrix,
    fleiss_reference, jaccard_direct, onset_bruteforce, shapes, sofa_bruteforce,
    suspicion_bruteforce, ted_bruteforce, weighted_direct,
)
from sepsis_vote.cli import main
from sepsis_vote.codesim import tree_edit_distance
from sepsis_vote.diversity import fleiss_kappa, unweighted_similarity, weighted_similarity
from sepsis_vote.ensemble import VoteRule, greedy_select, vote_matrix
from sepsis_vote.labeler import sepsis_onset, sofa_time, suspicion_time
from sepsis_vote.records import EventTimeline
from sepsis_vote.synth import SynthConfig, generate_cohort, generate_predictors
from sepsis_vote.utility import CohortUtility, UtilityParams

pytestmark = pytest.mark.acceptance

PARAMS = UtilityParams.preset()


def population(cfg):
    cohort = generate_cohort(cfg)
    bundle = generate_predictors(cohort, cfg)
    cu = CohortUtility(cohort.timelines, PARAMS)
    stacked = {a: cu.concat(bundle[a], a) for a in cfg.algorithm_ids}
    return cohort, bundle, cu, stacked


def majority_gain(cfg):
    """(ensemble, best individual, mean individual) normalized utility."""
    _, _, cu, stacked = population(cfg)
    ids = cfg.algorithm_ids
    solo = [cu.normalized(stacked[a]) for a in ids]
    P = np.vstack([stacked[a] for a in ids])
    labels, _ = vote_matrix(P, np.ones(len(ids), dtype=int), VoteRule.majority())
    return cu.normalized(labels), max(solo), float(np.mean(solo))


@pytest.mark.criterion(1, "pairwise similarity suites on 1,000 random pairs")
def test_similarity_formulas(report):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        x, y = rng.integers(0, 2, n), rng.integers(0, 2, n)
        if not (x.any() or y.any()):
            x[0] = 1
        u = rng.normal(size=n) * (rng.random(n) < 0.7)
        v = rng.normal(size=n) * (rng.random(n) < 0.7)
        u[0] = u[0] or 1.0
        for f, oracle, a, b in ((unweighted_similarity, jaccard_direct, x, y), (weighted_similarity, weighted_direct, u, v)):
            s = f(a, b)
            assert s == f(b, a)
            assert 0.0 <= s <= 1.0
            assert f(a, a) == 1.0
            ref = oracle(a.tolist(), b.tolist())
            if ref:
                worst = max(worst, abs(s - ref) / abs(ref))
            else:
                assert abs(s) <= 1e-12
    elapsed = time.perf_counter() - start
    report(f"max rel err {worst:.2e}, {elapsed:.2f}s")
    assert worst <= 1e-12
    assert elapsed < 5


def _random_events(rng):
    h = lambda: rng.randint(0, 200)  # noqa: E731
    abx = []
    for _ in range(rng.randint(0, 4)):
        s = h()
        abx.append((s, s + rng.randint(0, 120)))
    cultures = [h() for _ in range(rng.randint(0, 4))]
    sofa = [(h(), rng.randint(0, 15)) for _ in range(rng.randint(0, 10))]
    return EventTimeline(tuple(abx), tuple(cultures), tuple(sofa))


@pytest.mark.criterion(2, "labeler equals brute-force enumeration on 10,000 timelines")
def test_labeler_oracle(report):
    rng = random.Random(7)
    start = time.perf_counter()
    mismatches = 0
    septic = 0
    for _ in range(10_000):
        ev = _random_events(rng)
        ts, to = suspicion_time(ev), sofa_time(ev)
        onset = sepsis_onset(ts, to)
        ref_s, ref_o = suspicion_bruteforce(ev), sofa_bruteforce(ev)
        mismatches += (ts != ref_s) + (to != ref_o) + (onset != onset_bruteforce(ref_s, ref_o))
        septic += onset is not None
    elapsed = time.perf_counter() - start
    report(f"{mismatches} mismatches, {septic} septic timelines, {elapsed:.2f}s")
    assert mismatches == 0
    assert septic > 100
    assert elapsed < 30


@pytest.mark.criterion(3, "utility normalization identities on 50 cohorts")
def test_utility_identities(report):
    worst = 0.0
    for seed in range(50):
        cfg = SynthConfig(n_patients=15, min_hours=8, max_hours=80, prevalence=0.4, seed=seed)
        tls = generate_cohort(cfg).timelines
        cu = CohortUtility(tls, PARAMS)
        assert cu.normalized(np.zeros(len(cu), np.int8)) == 0.0
        assert cu.normalized(cu.perfect_labels) == 1.0
        rng = np.random.default_rng(seed)
        preds = {pid: rng.integers(0, 2, len(t)) for pid, t in tls.items()}
        obs, ina, per = cohort_utility_bruteforce(preds, tls, PARAMS)
        s = cu.score(cu.concat(preds))
        worst = max(worst, abs(s.observed - obs), abs(s.inaction - ina), abs(s.perfect - per))
    report(f"max abs diff vs summation {worst:.2e}")
    assert worst <= 1e-9


@pytest.mark.criterion(4, "tree edit distance equals brute force, metric axioms")
def test_tree_edit_distance(report):
    start = time.perf_counter()
    trees = all_trees(5, "ab")
    D_ref = exhaustive_distance_matrix(5, "ab")
    n = len(trees)
    D = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(n):
            D[i, j] = tree_edit_distance(trees[i], trees[j])
    mismatches = int(np.count_nonzero(D != D_ref))
    assert mismatches == 0
    assert np.array_equal(D, D.T)
    assert np.all(np.diag(D) == 0)
    assert np.all(D[~np.eye(n, dtype=bool)] > 0)
    for k in range(n):
        assert np.all(D <= D[:, k:k + 1] + D[k:k + 1, :])
    sizes = np.array([len(t) for t in trees])
    assert np.all(D <= sizes[:, None] + sizes[None, :])

    rng = random.Random(11)

    def rand_tree():
        m = rng.randint(1, 8)
        return build_tree(rng.choice(shapes(m)), [rng.choice("abc") for _ in range(m)])

    random_mismatches = 0
    for _ in range(500):
        a, b, c = rand_tree(), rand_tree(), rand_tree()
        dab = tree_edit_distance(a, b)
        random_mismatches += dab != ted_bruteforce(a, b)
        assert dab == tree_edit_distance(b, a)
        assert (dab == 0) == (a == b)
        assert dab <= tree_edit_distance(a, c) + tree_edit_distance(c, b)
    elapsed = time.perf_counter() - start
    report(f"{n}x{n} exhaustive pairs, {mismatches}+{random_mismatches} mismatches, {elapsed:.1f}s")
    assert random_mismatches == 0
    assert elapsed < 60


@pytest.mark.criterion(5, "Fleiss' kappa: unanimous, independent, fixed table")
def test_fleiss(report):
    row = np.array([1, 0, 0, 1, 1, 0])
    assert fleiss_kappa(np.vstack([row] * 4)) == 1.0
    rng = np.random.default_rng(5)
    k_ind = fleiss_kappa(rng.integers(0, 2, (5, 10_000)))
    table = np.array([[1, 1, 0, 1], [0, 1, 0, 1], [1, 1, 1, 0]])
    k_fixed, k_ref = fleiss_kappa(table), fleiss_reference(table)
    report(f"independent kappa {k_ind:+.4f}, fixed table {k_fixed:.12f} vs {k_ref:.12f}")
    assert abs(k_ind) < 0.05
    assert abs(k_fixed - k_ref) <= 1e-12 * abs(k_ref)


def _canonical(seed, rho=0.0, k=11):
    return SynthConfig(n_patients=200, n_algorithms=k, fp_rate=0.2, fn_rate=0.2, rho=rho, seed=seed)


@pytest.mark.criterion(6, "majority vote beats individuals (k=11, rho=0, 20 seeds)")
def test_voting_beats_individuals(report):
    over_best = over_mean = 0
    for seed in range(20):
        ens, best, mean = majority_gain(_canonical(seed))
        over_best += ens > best
        over_mean += ens > mean
    report(f"beats best in {over_best}/20, beats mean in {over_mean}/20")
    assert over_best >= 16
    assert over_mean == 20


@pytest.mark.criterion(7, "gain over best individual shrinks with rho, 0 at rho=1")
def test_concordance_limits_gain(report):
    rhos = [0.0, 0.5, 1.0]
    xs, gains, at_one = [], [], []
    for seed in range(10):
        per_seed = []
        for rho in rhos:
            ens, best, _ = majority_gain(_canonical(seed, rho))
            per_seed.append(ens - best)
        assert all(b <= a for a, b in zip(per_seed, per_seed[1:])), (seed, per_seed)
        xs += rhos
        gains += per_seed
        at_one.append(per_seed[-1])
    rho_s = spearmanr(xs, gains).statistic
    report(f"spearman {rho_s:.3f}, max |gain| at rho=1 {max(abs(g) for g in at_one):.2e}")
    assert rho_s <= 0
    assert all(g == 0 for g in at_one)


@pytest.mark.criterion(8, "greedy within 0.02 of exhaustive optimum (k=4, weights<=3, 10 cohorts)")
def test_greedy_near_exhaustive(report):
    gaps = []
    for seed in range(10):
        cfg = _canonical(seed, k=4)
        cohort, bundle, cu, stacked = population(cfg)
        ids = cfg.algorithm_ids
        spec = greedy_select(ids, bundle, cohort.timelines, PARAMS, VoteRule.majority())
        traj = spec.training_scores
        assert all(b > a for a, b in zip(traj, traj[1:]))
        P = np.vstack([stacked[a] for a in ids])
        best = -np.inf
        for w in itertools.product(range(4), repeat=len(ids)):
            w = np.array(w)
            if not w.any():
                continue
            keep = w > 0
            labels, _ = vote_matrix(P[keep], w[keep], VoteRule.majority())
            best = max(best, cu.normalized(labels))
        gaps.append(best - traj[-1])
    report("gaps " + ", ".join(f"{g:.4f}" for g in gaps))
    assert max(gaps) <= 0.02


def _tree_hash(directory: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(directory.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(directory).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.mark.criterion(9, "repeated CLI runs produce byte-identical outputs")
def test_cli_determinism(tmp_path, report):
    data = Path(__file__).parent / "data"
    src = tmp_path / "src"
    assert main(["synth", "--out", str(src), "--seed", "7", "--patients", "40", "--algorithms", "5",
                 "--rho", "0.3", "--lag-max", "2", "--manifest"]) == 0
    pats, preds = src / "patients", src / "predictions"
    assert main(["label", "--out", str(src / "lab"), "--patients", str(pats)]) == 0
    assert main(["score", "--out", str(src / "score"), "--labels", str(src / "lab"), "--preds", str(preds)]) == 0
    assert main(["ensemble-build", "--out", str(src / "ens"), "--labels", str(src / "lab"), "--preds", str(preds)]) == 0
    ranking = src / "score" / "scores.csv"
    runs = {
        "synth": ["--seed", "7", "--patients", "40", "--algorithms", "5", "--rho", "0.3", "--lag-max", "2"],
        "label": ["--patients", str(pats)],
        "score": ["--labels", str(src / "lab"), "--preds", str(preds)],
        "similarity": ["--labels", str(src / "lab"), "--preds", str(preds), "--kind", "weighted", "--ranking", str(ranking)],
        "kappa": ["--labels", str(src / "lab"), "--preds", str(preds), "--top", "3", "--ranking", str(ranking)],
        "tree-dist": ["--trees", str(data)],
        "ensemble-build": ["--labels", str(src / "lab"), "--preds", str(preds), "--per-regime"],
        "ensemble-apply": ["--spec", str(src / "ens" / "ensemble.psv"), "--preds", str(preds)],
        "stats": ["--patients", str(pats)],
    }
    differing = []
    for cmd, args in runs.items():
        digests = []
        for attempt in ("a", "b"):
            out = tmp_path / cmd / attempt
            assert main([cmd, "--out", str(out), "--manifest", "--workers", "2" if attempt == "a" else "1", *args]) == 0
            assert (out / "manifest.json").exists()
            digests.append(_tree_hash(out))
        if digests[0] != digests[1]:
            differing.append(cmd)
    report(f"{len(runs)} subcommands, differing: {differing or 'none'}")
    assert not differing
