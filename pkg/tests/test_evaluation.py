import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from tactile_prior import brdf, contrastive
from tactile_prior import evaluation as E
from tactile_prior.config import ProbeConfig
from tactile_prior.errors import ConfigError, DataError, ShapeError
from tactile_prior.prior import ssim
from tactile_prior.synth import gen_material


def unit_matrix(rng, n, d, ids=None, labels=None):
    x = rng.normal(size=(n, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    ids = list(range(n)) if ids is None else ids
    labels = rng.integers(0, 3, n) if labels is None else labels
    return E.EmbeddingMatrix(x, ids, labels)


# -- brute-force oracles over many random trials -----------------------------------

def test_topk_matches_brute_force():
    r = np.random.default_rng(0)
    for trial in range(100):
        gallery = unit_matrix(r, 7, 3, ids=[int(v) for v in r.permutation(100)[:7]])
        query = unit_matrix(r, 5, 3, ids=list(range(1000, 1005)))
        pairing = {q: gallery.ids[int(r.integers(7))] for q in query.ids}
        k = int(r.integers(1, 8))
        expected = oracles.topk_accuracy(query.values.tolist(), query.ids, gallery.values.tolist(),
                                         gallery.ids, pairing, k)
        assert E.topk_accuracy(query, gallery, pairing, k) == expected


def test_map_matches_brute_force():
    r = np.random.default_rng(1)
    for trial in range(100):
        gallery = unit_matrix(r, 8, 3)
        query = unit_matrix(r, 4, 3, ids=list(range(50, 54)),
                            labels=[int(gallery.labels[int(r.integers(8))]) for _ in range(4)])
        expected = oracles.mean_average_precision(query.values.tolist(), query.labels.tolist(),
                                                  gallery.values.tolist(), gallery.ids,
                                                  gallery.labels.tolist())
        assert abs(E.mean_average_precision(query, gallery) - expected) <= 1e-12


def test_average_precision_matches_brute_force():
    r = np.random.default_rng(2)
    for trial in range(100):
        rel = r.random(int(r.integers(1, 12))) < 0.4
        rel[int(r.integers(len(rel)))] = True
        assert abs(E.average_precision(rel) - oracles.average_precision(rel.tolist())) <= 1e-12


def test_map_rmse_matches_brute_force():
    for trial in range(100):
        a = gen_material(["checker", "fabric_weave", "wood_rings"][trial % 3], trial, 16)
        b = gen_material("fractal_noise", trial + 500, 16)
        got = E.map_rmse(a, b)
        assert abs(got["Diff."] - oracles.rmse(a.diffuse, b.diffuse)) <= 1e-12
        assert abs(got["Nrm."] - oracles.rmse(a.normal, b.normal)) <= 1e-12
        assert abs(got["Rgh."] - oracles.rmse(a.roughness, b.roughness)) <= 1e-12
        assert abs(got["Spec."] - oracles.rmse(a.specular, b.specular)) <= 1e-12
        renders = [brdf.render(m, brdf.CANONICAL_RIG) for m in (a, b)]
        assert abs(got["Rend."] - oracles.clamped_rmse(*renders)) <= 1e-12


def test_ssim_matches_brute_force():
    r = np.random.default_rng(3)
    for trial in range(100):
        a = r.uniform(0, 1, (12, 12, 2))
        b = np.clip(a + r.normal(scale=float(r.uniform(0, 0.5)), size=a.shape), 0, 1)
        assert abs(ssim(a, b) - oracles.ssim_image(a, b)) <= 1e-10


def test_rendering_rmse_matches_brute_force():
    r = np.random.default_rng(4)
    for trial in range(100):
        a, b = r.uniform(-0.3, 1.3, (2, 5, 4, 3))
        assert abs(brdf.rendering_rmse(a, b) - oracles.clamped_rmse(a, b)) <= 1e-12


# -- linear probe ----------------------------------------------------------------

def blobs(rng, n_per, k, d, spread):
    centres = np.eye(d)[:k] * 3
    x = np.concatenate([c + rng.normal(scale=spread, size=(n_per, d)) for c in centres])
    y = np.repeat(np.arange(k), n_per)
    return x, y


def test_probe_separates_blobs(rng):
    x, y = blobs(rng, 20, 2, 2, 0.2)
    xt, yt = blobs(rng, 10, 2, 2, 0.2)
    train = E.EmbeddingMatrix(x, list(range(len(y))), y)
    test = E.EmbeddingMatrix(xt, list(range(len(yt))), yt)
    assert E.linear_probe(train, test) == 1.0


def test_probe_on_shuffled_labels_is_near_chance():
    accs = []
    for seed in range(5):
        r = np.random.default_rng(seed)
        # features carry no label information in either split
        x, y = blobs(r, 200, 6, 8, 1.0)
        xt, yt = blobs(r, 200, 6, 8, 1.0)
        train = E.EmbeddingMatrix(x, list(range(len(y))), r.permutation(y))
        test = E.EmbeddingMatrix(xt, list(range(len(yt))), r.permutation(yt))
        accs.append(E.linear_probe(train, test))
    assert all(abs(a - 1 / 6) <= 0.05 for a in accs)


def test_untrained_probe_predicts_class_zero(rng):
    x, y = blobs(rng, 5, 3, 4, 0.1)
    m = E.EmbeddingMatrix(x, list(range(len(y))), y)
    assert E.linear_probe(m, m, ProbeConfig(steps=0)) == pytest.approx(np.mean(y == 0))


def test_probe_contracts(rng):
    x, y = blobs(rng, 4, 2, 4, 0.1)
    train = E.EmbeddingMatrix(x, list(range(8)), y)
    unseen = E.EmbeddingMatrix(x[:1], [0], [5])
    with pytest.raises(DataError):
        E.linear_probe(train, unseen)
    with pytest.raises(ShapeError):
        E.linear_probe(train, E.EmbeddingMatrix(np.zeros((1, 3)), [0], [0]))
    with pytest.raises(DataError):
        E.EmbeddingMatrix(x[:2], [1, 1], [0, 0])


# -- ranking ---------------------------------------------------------------------

def test_self_retrieval_is_perfect(rng):
    m = unit_matrix(rng, 10, 5)
    assert E.topk_accuracy(m, m, {i: i for i in m.ids}, 1) == 1.0
    res = E.retrieve_materials(m.values[3], m, 3, query_id=m.ids[3])
    assert res.ids[0] == 3 and res.scores[0] == pytest.approx(1.0, abs=1e-9)


def test_exhaustive_k_always_hits(rng):
    q, g = unit_matrix(rng, 6, 4, ids=list(range(100, 106))), unit_matrix(rng, 9, 4)
    pairing = {qid: int(rng.integers(9)) for qid in q.ids}
    assert E.topk_accuracy(q, g, pairing, len(g)) == 1.0


def test_topk_on_20_by_8_embeddings_matches_brute_force(rng):
    q, g = unit_matrix(rng, 20, 8, ids=list(range(100, 120))), unit_matrix(rng, 20, 8)
    pairing = {qid: qid - 100 for qid in q.ids}
    for k in (1, 3, 5):
        assert E.topk_accuracy(q, g, pairing, k) == oracles.topk_accuracy(
            q.values.tolist(), q.ids, g.values.tolist(), g.ids, pairing, k)


def test_average_precision_hand_cases():
    assert E.average_precision([True, False]) == 1.0
    assert E.average_precision([False, True]) == 0.5


def test_map_over_30_queries_matches_brute_force(rng):
    g = unit_matrix(rng, 12, 5)
    q = unit_matrix(rng, 30, 5, ids=list(range(100, 130)),
                    labels=[int(g.labels[i % 12]) for i in range(30)])
    expected = oracles.mean_average_precision(q.values.tolist(), q.labels.tolist(),
                                              g.values.tolist(), g.ids, g.labels.tolist())
    assert abs(E.mean_average_precision(q, g) - expected) <= 1e-12


def test_library_ranking_matches_brute_force(rng):
    lib = unit_matrix(rng, 15, 4, ids=[int(v) for v in rng.permutation(1000)[:15]])
    query = unit_matrix(rng, 1, 4).values[0]
    res = E.retrieve_materials(query, lib, len(lib))
    ids, scores = oracles.cosine_ranking(query.tolist(), lib.values.tolist(), lib.ids)
    assert res.ids == ids and np.allclose(res.scores, scores, atol=1e-12)
    assert len(E.retrieve_materials(query, lib, 1).ids) == 1


def test_ties_break_by_ascending_id():
    same = np.tile([[1.0, 0.0]], (4, 1))
    gallery = E.EmbeddingMatrix(same, [9, 2, 7, 4], [0, 0, 0, 0])
    order, _ = E.rank(np.array([1.0, 0.0]), gallery)
    assert [gallery.ids[i] for i in order] == [2, 4, 7, 9]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_rank_is_stable_under_gallery_reordering(seed):
    r = np.random.default_rng(seed)
    g = unit_matrix(r, 6, 3)
    q = unit_matrix(r, 1, 3).values[0]
    perm = r.permutation(6)
    shuffled = E.EmbeddingMatrix(g.values[perm], [g.ids[i] for i in perm], g.labels[perm])
    a = [g.ids[i] for i in E.rank(q, g)[0]]
    b = [shuffled.ids[i] for i in E.rank(q, shuffled)[0]]
    assert a == b


@settings(max_examples=40, deadline=None)
@given(st.lists(st.booleans(), min_size=2, max_size=10).filter(lambda v: any(v)))
def test_moving_a_relevant_item_up_never_lowers_ap(rel):
    base = E.average_precision(rel)
    for i in range(1, len(rel)):
        if rel[i] and not rel[i - 1]:
            swapped = list(rel)
            swapped[i - 1], swapped[i] = swapped[i], swapped[i - 1]
            assert E.average_precision(swapped) >= base
    assert 0.0 < base <= 1.0


def test_k_out_of_range_is_config_error(rng):
    m = unit_matrix(rng, 4, 3)
    for k in (0, 5):
        with pytest.raises(ConfigError):
            E.topk_accuracy(m, m, {i: i for i in m.ids}, k)
        with pytest.raises(ConfigError):
            E.retrieve_materials(m.values[0], m, k)


def test_missing_pairing_is_data_error(rng):
    m = unit_matrix(rng, 3, 3)
    with pytest.raises(DataError):
        E.topk_accuracy(m, m, {0: 0}, 1)


def test_non_unit_rows_are_rejected():
    with pytest.raises(DataError):
        E.EmbeddingMatrix(np.array([[1.0, 1.0]]), [0], [0]).check_unit()


# -- material map errors --------------------------------------------------------

def test_roughness_offset_shows_up_only_in_its_column():
    gt = gen_material("fabric_weave", 0, 16)
    shifted = dataclasses.replace(gt, roughness=gt.roughness - 0.1)
    got = E.map_rmse(shifted, gt)
    assert got["Rgh."] == pytest.approx(0.1, abs=1e-12)
    assert got["Diff."] == got["Nrm."] == got["Spec."] == 0.0
    assert E.map_rmse(gt, gt) == dict.fromkeys(E.RMSE_COLUMNS, 0.0)


def test_mean_rmse_averages_columns():
    rows = [dict.fromkeys(E.RMSE_COLUMNS, 0.2), dict.fromkeys(E.RMSE_COLUMNS, 0.4)]
    assert E.mean_rmse(rows) == pytest.approx(dict.fromkeys(E.RMSE_COLUMNS, 0.3))


def test_resolution_mismatch_is_shape_error():
    with pytest.raises(ShapeError):
        E.map_rmse(gen_material("checker", 0, 16), gen_material("checker", 0, 32))


# -- trained embeddings ----------------------------------------------------------

def test_extracted_embeddings_are_keyed_and_normalized(toy, toy_tactile):
    _, ds, _, _ = toy
    touch = E.extract_embeddings(toy_tactile[0], ds, "test", "touch")
    vision = E.extract_embeddings(toy_tactile[0], ds, "test", "vision")
    assert touch.ids == [p.pair_id for p in ds.pairs("test")]
    assert touch.values.shape == (len(ds.pairs("test")), toy[0].tactile.dim_d)
    again = E.extract_embeddings(toy_tactile[0], ds, "test", "touch")
    assert again.values.tobytes() == touch.values.tobytes()
    assert vision.ids == ds.splits["test"]
    with pytest.raises(ConfigError):
        E.extract_embeddings(toy_tactile[0], ds, "test", "smell")


def test_differently_seeded_encoders_do_not_collapse(toy):
    run, ds, pck, _ = toy
    rows = []
    for seed in (0, 1):
        ckpt, _ = contrastive.train_tactile(ds, pck, run, seed, steps=20)
        rows.append(E.extract_embeddings(ckpt, ds, "test", "touch").values)
    assert not np.array_equal(rows[0], rows[1])
    for values in rows:
        d = np.linalg.norm(values[:, None] - values[None], axis=-1)
        assert d[~np.eye(len(values), dtype=bool)].min() > 0
