import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attrib_audit.data import PROTECTED_ATTRIBUTES, GeneratorConfig, StaticRecord, generate_synthetic_cohort, summarize_tabular
from attrib_audit.fairness import (
    FairnessError,
    ProtectedGrouping,
    comorbidity_slice,
    group_auc_report,
    mortality_auc_correlation,
    pearson,
    pooled_summary,
    stratify,
    treatment_disparity,
    write_report_json,
    write_treatment_csv,
)
from attrib_audit.models import TrainConfig, train


def rec(sid, age=60.0, gender="MALE", treatments=(), label=0, **kw):
    base = dict(ethnicity="WHITE", marital_status="MARRIED", insurance="PRIVATE")
    base.update(kw)
    return StaticRecord(sid, age, gender, label=label, treatments=treatments, **base)


@pytest.mark.parametrize(
    "age,group", [(54.9, "<55 YRS"), (55.0, "55-67 YRS"), (66.99, "55-67 YRS"), (77.9, "67-78 YRS"), (78.0, ">=78 YRS")]
)
def test_age_bins(age, group):
    assert stratify([rec("a", age=age)], "age").labels == (group,)


def test_gender_group_and_unknown_category():
    assert stratify([rec("a")], "gender").labels == ("MALE",)
    with pytest.raises(FairnessError):
        stratify([rec("a", ethnicity="MARTIAN")], "ethnicity")
    g = stratify([rec("a", ethnicity="MARTIAN")], "ethnicity", extensions=["MARTIAN"])
    assert g.labels == ("MARTIAN",)
    with pytest.raises(FairnessError):
        stratify([rec("a")], "height")


# -- treatment disparity -------------------------------------------------------------


def four_patients():
    return [
        rec("a", treatments=(("InvasiveVent", (2.0,)),)),
        rec("b", treatments=(("InvasiveVent", (3.0, 1.0)),)),
        rec("c"),
        rec("d", treatments=(("Oxygen", (5.0,)),)),
    ]


def stat(rows, group, treatment):
    return next(r for r in rows if r.group == group and r.treatment == treatment)


def test_adoption_and_mean_duration():
    rows = treatment_disparity(four_patients(), stratify(four_patients(), "gender"))
    s = stat(rows, "MALE", "InvasiveVent")
    assert s.adoption_rate == 0.5 and s.mean_duration_hours == 3.0


def test_span_sum():
    r = rec("x", treatments=(("HighFlow", (3.0, 2.0)),))
    assert r.treatment_hours("HighFlow") == 5.0


def test_untreated_group_has_absent_duration(tmp_path):
    rows = treatment_disparity(four_patients(), stratify(four_patients(), "gender"))
    s = stat(rows, "MALE", "Trach")
    assert s.adoption_rate == 0.0 and s.mean_duration_hours is None
    write_treatment_csv(rows, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "attribute,group,treatment,adoption_rate,mean_duration_hours"
    assert "gender,MALE,Trach,0.0," in lines


def test_adoption_invariant_to_order():
    pts = four_patients()
    a = treatment_disparity(pts, stratify(pts, "gender"))
    b = treatment_disparity(pts[::-1], stratify(pts[::-1], "gender"))
    assert [(r.group, r.treatment, r.adoption_rate, r.mean_duration_hours) for r in a] == [
        (r.group, r.treatment, r.adoption_rate, r.mean_duration_hours) for r in b
    ]


# -- group AUC -----------------------------------------------------------------------


def grouping(labels, attribute="ethnicity", vocab=None):
    return ProtectedGrouping(attribute, tuple(labels), tuple(vocab or sorted(set(labels))))


def test_min_and_macro():
    # three groups with AUCs 0.9, 0.8, 0.85 built from 20x20 pairs each
    s, y, g = [], [], []
    for name, auc in (("A", 0.9), ("B", 0.8), ("C", 0.85)):
        n_hi = round(auc * 20)
        pos = [1.0] * n_hi + [0.0] * (20 - n_hi)  # each positive beats all negatives or ties none
        neg = [0.5] * 20
        s += pos + neg
        y += [1] * 20 + [0] * 20
        g += [name] * 40
    rep = group_auc_report(s, y, grouping(g))
    assert [round(x.auroc, 10) for x in rep.groups] == [0.9, 0.8, 0.85]
    assert rep.auc_min == pytest.approx(0.8) and rep.auc_macro_avg == pytest.approx(0.85)


def test_single_group_equals_overall():
    rng = np.random.default_rng(0)
    s, y = rng.normal(size=50), np.r_[0, 1, rng.integers(0, 2, 48)]
    rep = group_auc_report(s, y, grouping(["WHITE"] * 50))
    assert rep.auc_min == rep.auc_macro_avg == rep.auc_minority == rep.auc_overall


def test_degenerate_group_excluded_with_warning():
    s = [0.1, 0.9, 0.3, 0.2]
    y = [0, 1, 0, 0]
    rep = group_auc_report(s, y, grouping(["A", "A", "B", "B"]))
    assert [g.name for g in rep.groups if g.auroc is None] == ["B"]
    assert rep.auc_min == 1.0 and any("B" in w for w in rep.warnings)


def test_minority_by_training_counts():
    s, y = [0.1, 0.9, 0.2, 0.8], [0, 1, 0, 1]
    g = grouping(["A", "A", "B", "B"])
    rep = group_auc_report(s, y, g, train_counts={"A": 5, "B": 100})
    assert rep.minority_group == "A" and rep.minority_basis == "training split counts"


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_min_le_macro_le_max(seed):
    rng = np.random.default_rng(seed)
    n = 80
    labels = rng.choice(["A", "B", "C"], n)
    y = rng.integers(0, 2, n)
    s = rng.normal(size=n) + y
    try:
        rep = group_auc_report(s, y, grouping(labels, vocab=["A", "B", "C"]))
    except FairnessError:
        return
    assert rep.auc_min <= rep.auc_macro_avg <= rep.auc_max


def test_group_sizes_partition(small_cohort):
    for attr in PROTECTED_ATTRIBUTES:
        assert sum(stratify(small_cohort, attr).sizes().values()) == small_cohort.n_samples


def test_report_json_schema(tmp_path):
    rep = group_auc_report([0.1, 0.9, 0.2, 0.8], [0, 1, 0, 1], grouping(["A", "A", "B", "B"]))
    write_report_json(rep, tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    for key in ("attribute", "groups", "auc_min", "auc_macro_avg", "auc_minority", "warnings"):
        assert key in doc
    assert set(doc["groups"][0]) >= {"name", "n_train", "n_test", "mortality_rate", "auroc"}


def test_pooled_summary_labeled():
    a = group_auc_report([0.1, 0.9, 0.2, 0.8], [0, 1, 0, 1], grouping(["A", "A", "B", "B"]))
    b = group_auc_report([0.1, 0.9, 0.6, 0.8], [0, 1, 0, 1], grouping(["C", "C", "D", "D"], attribute="gender"))
    pooled = pooled_summary([a, b])
    assert pooled["scope"] == "pooled over attributes"
    assert pooled["auc_min"] == 1.0 and pooled["auc_macro_avg"] == 1.0


# -- correlation ---------------------------------------------------------------------


def test_pearson_lines():
    assert pearson([1, 2, 3, 4], [8, 6, 4, 2])[0] == pytest.approx(-1.0)
    assert pearson([1, 2, 3, 4], [1, 3, 5, 7])[0] == pytest.approx(1.0)
    with pytest.raises(FairnessError):
        pearson([1, 2, 3], [1, 1, 1])
    with pytest.raises(FairnessError):
        pearson([1, 2], [3, 4])


def test_pearson_p_value_matches_scipy():
    from scipy.stats import pearsonr

    rng = np.random.default_rng(3)
    x, y = rng.normal(size=12), rng.normal(size=12)
    r, p = pearson(x, y)
    ref = pearsonr(x, y)
    assert r == pytest.approx(ref[0], abs=1e-12) and p == pytest.approx(ref[1], rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=3, max_size=20))
def test_pearson_bounded_and_symmetric(pairs):
    x, y = zip(*pairs)
    try:
        r, _ = pearson(x, y)
    except FairnessError:
        return
    assert -1.0 <= r <= 1.0
    assert pearson(y, x)[0] == pytest.approx(r, abs=1e-12)


def test_mortality_auc_correlation_pairs():
    r, _ = mortality_auc_correlation([(0.1, 0.9), (0.2, 0.85), (0.3, 0.8)])
    assert r == pytest.approx(-1.0)


# -- comorbidity ---------------------------------------------------------------------


def test_comorbidity_slices():
    cfg = GeneratorConfig(n_samples=1000, n_timesteps=2, n_features=3, n_informative=1, hem_mets_rate=0.3)
    c = generate_synthetic_cohort(cfg, 0)
    sl = comorbidity_slice(c, "hem_mets")
    assert sl.n_samples == sum(r.hem_mets for r in c.static)
    assert abs(sl.n_samples - 300) <= 45
    allc = generate_synthetic_cohort(GeneratorConfig(n_samples=20, n_timesteps=2, n_features=3, n_informative=1, hem_mets_rate=1.0), 0)
    assert comorbidity_slice(allc).n_samples == 20
    none = generate_synthetic_cohort(GeneratorConfig(n_samples=20, n_timesteps=2, n_features=3, n_informative=1, hem_mets_rate=0.0), 0)
    with pytest.raises(FairnessError, match="empty"):
        comorbidity_slice(none)


def test_exchangeable_generator_small_gaps():
    # one seed here; the acceptance suite runs three
    ex = GeneratorConfig(n_samples=10000, n_features=20, group_proportions="uniform", informative_features=(1, 5, 9, 13, 17))
    tr, ev = generate_synthetic_cohort(ex, 0), generate_synthetic_cohort(ex, 1000)
    m = train("linear", summarize_tabular(tr).Xs, tr.y, TrainConfig(seed=0, epochs=10))
    sc = m.logit(summarize_tabular(ev).Xs)
    for a in PROTECTED_ATTRIBUTES:
        rep = group_auc_report(sc, ev.y, stratify(ev, a))
        assert max(abs(g.auroc - rep.auc_overall) for g in rep.groups) <= 0.03
        assert rep.auc_min <= rep.auc_macro_avg
