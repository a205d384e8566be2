import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bigsl.metrics import (
    KS,
    EvalReport,
    acc_at_k,
    ablation_table,
    evaluate_scores,
    mrr,
    next_new_mask,
    ranking,
    report_from_ranks,
    target_ranks,
    write_report,
)


def sort_and_scan(scores, targets, users=None, histories=None):
    """Rank by a full sort (descending score, ascending index) then scan for the target."""
    ranks = []
    for row, t in zip(scores, targets):
        order = sorted(range(len(row)), key=lambda j: (-row[j], j))
        ranks.append(order.index(int(t)) + 1)
    out = {}
    keep = list(range(len(ranks)))
    if users is not None:
        keep = [s for s in keep if int(targets[s]) not in set(int(x) for x in histories[int(users[s])])]
    for name, idx in (("all", range(len(ranks))), ("n2", keep)):
        sub = [ranks[s] for s in idx]
        out[name] = ({k: sum(r <= k for r in sub) / len(sub) for k in KS} if sub else None,
                     math.fsum(1.0 / r for r in sub) / len(sub) if sub else None, len(sub))
    return ranks, out


@pytest.mark.parametrize("seed", range(100))
def test_metrics_match_sort_and_scan(seed):
    rng = np.random.default_rng(seed)
    S, N, M = int(rng.integers(1, 30)), int(rng.integers(2, 40)), 4
    # coarse integer scores force plenty of ties
    scores = rng.integers(0, 6, size=(S, N)).astype(float) if seed % 2 else rng.normal(size=(S, N))
    targets = rng.integers(0, N, size=S)
    users = rng.integers(0, M, size=S)
    histories = [rng.integers(0, N, size=int(rng.integers(0, N))) for _ in range(M)]
    ranks, expected = sort_and_scan(scores, targets, users, histories)
    np.testing.assert_array_equal(target_ranks(scores, targets), ranks)
    rep = evaluate_scores(scores, targets, users, histories)
    acc, m, n = expected["all"]
    assert rep.acc_at == acc and rep.mrr == m and rep.sample_count == n
    acc, m, n = expected["n2"]
    assert rep.n2_sample_count == n
    if n:
        assert rep.n2_defined and rep.n2_acc_at == acc and rep.n2_mrr == m
    else:
        assert not rep.n2_defined


def test_rank_one_everywhere():
    rep = report_from_ranks([1, 1, 1])
    assert rep.acc_at[5] == rep.acc_at[10] == rep.acc_at[20] == 1.0


def test_rank_seven():
    assert acc_at_k([7], 5) == 0.0 and acc_at_k([7], 10) == 1.0


def test_mrr_examples():
    assert mrr([4]) == 0.25
    assert mrr([1, 2]) == 0.75


def test_ties_resolved_by_index():
    scores = np.array([[1.0, 2.0, 2.0, 0.5]])
    assert target_ranks(scores, [2])[0] == 2
    assert target_ranks(scores, [1])[0] == 1
    np.testing.assert_array_equal(ranking(scores[0]), [1, 2, 0, 3])


def test_next_new_mask_uses_training_history():
    mask = next_new_mask([0, 0, 1], [3, 5, 3], [[3, 4], [1]])
    np.testing.assert_array_equal(mask, [False, True, True])


def test_all_unseen_user_n2_equals_standard():
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(5, 10))
    rep = evaluate_scores(scores, [1, 2, 3, 4, 5], [0] * 5, [[7, 8]])
    assert rep.n2_acc_at == rep.acc_at and rep.n2_mrr == rep.mrr


def test_empty_n2_subset_reported_undefined():
    rep = evaluate_scores(np.eye(3)[:2], [0, 1], [0, 0], [[0, 1]])
    assert not rep.n2_defined and rep.n2_sample_count == 0
    text = rep.to_text()
    assert "N2-MRR\tundefined" in text and "nan" not in text.lower()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=1, max_size=40))
def test_report_invariants(ranks):
    rep = report_from_ranks(ranks)
    accs = [rep.acc_at[k] for k in KS]
    assert accs == sorted(accs)
    assert rep.mrr >= rep.acc_at[1]
    shuffled = report_from_ranks(list(reversed(ranks)))
    assert shuffled.acc_at == rep.acc_at and shuffled.mrr == rep.mrr


def test_text_report_has_one_record_per_metric():
    rep = report_from_ranks([1, 3, 30], n2_mask=[True, False, True])
    lines = rep.to_text().splitlines()
    names = [l.split("\t")[0] for l in lines]
    assert names == ["Acc@1", "Acc@5", "Acc@10", "Acc@20", "MRR", "samples",
                     "N2-Acc@1", "N2-Acc@5", "N2-Acc@10", "N2-Acc@20", "N2-MRR", "N2-samples"]


def test_write_report_merges_by_run_id(tmp_path):
    path = tmp_path / "reports.json"
    write_report(path, "a", report_from_ranks([1, 2]))
    write_report(path, "b", report_from_ranks([3]))
    data = json.loads(path.read_text())
    assert set(data) == {"a", "b"} and data["a"]["mrr"] == 0.75


def test_ablation_table_rows():
    rows = {name: report_from_ranks([1, 6]) for name in
            ("full", "no-hsl", "no-psl", "no-shar", "no-spec", "no-shar-spec")}
    table = ablation_table(rows).splitlines()
    assert len(table) == 7 and table[1].startswith("full\t")
