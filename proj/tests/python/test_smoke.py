import math

import numpy as np
import pytest

import kpl


def test_version():
    assert kpl.__version__ == "0.1.0"


def test_ot_closed_form_two_by_two():
    # M = [[1, 0], [0, 1]], tau = 1: diagonal mass e / (2 (1 + e)).
    res = kpl.solve_ot(np.eye(2), tau_ot=1.0, tolerance=1e-12)
    a = math.e / (2.0 * (1.0 + math.e))
    assert res["converged"]
    np.testing.assert_allclose(res["plan"], [[a, 0.5 - a], [0.5 - a, a]], atol=1e-12)
    np.testing.assert_allclose(res["pseudo_labels"].sum(axis=1), 1.0, atol=1e-12)


def test_solvers_agree():
    rng = np.random.default_rng(0)
    m = rng.uniform(-1.0, 1.0, size=(12, 4))
    plans = [
        kpl.solve_ot(m, tau_ot=0.1, algorithm=a, tolerance=1e-11)["plan"]
        for a in ("sinkhorn_linear", "sinkhorn_log", "stable_greenkhorn")
    ]
    for p in plans[1:]:
        np.testing.assert_allclose(p, plans[0], atol=1e-9)


def test_linear_overflow_raises_numeric_error():
    m = np.where(np.random.default_rng(1).random((64, 8)) < 0.5, -1.0, 1.0)
    with pytest.raises(kpl.NumericError, match="sinkhorn_log"):
        kpl.solve_ot(m, tau_ot=1e-3, algorithm="sinkhorn_linear")
    assert kpl.solve_ot(m, tau_ot=1e-3)["converged"]


def test_bad_algorithm_is_usage_error():
    with pytest.raises(kpl.UsageError):
        kpl.solve_ot(np.eye(2), algorithm="simplex")
    assert issubclass(kpl.UsageError, kpl.KplError)


def test_learn_keeps_unit_rows_and_fits_labels():
    rng = np.random.default_rng(3)
    centers = np.eye(3, 6)
    x = centers[np.arange(30) % 3] + 0.1 * rng.standard_normal((30, 6))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    q = np.eye(3)[np.arange(30) % 3]
    init = rng.uniform(-1.0, 1.0, size=(3, 6))
    init /= np.linalg.norm(init, axis=1, keepdims=True)
    res = kpl.learn(x, q, init)
    np.testing.assert_allclose(np.linalg.norm(res["weights"], axis=1), 1.0, atol=1e-12)
    assert kpl.classify(x, res["weights"]) == list(np.arange(30) % 3)
    assert res["losses"][-1] < res["losses"][0]


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    x = rng.uniform(-1.0, 1.0, size=(8, 5))
    w = rng.uniform(-1.0, 1.0, size=(3, 5))
    logits = rng.uniform(-2.0, 2.0, size=(8, 3))
    q = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    g = kpl.gradient(w, x, q, 0.5)
    h = 1e-6
    fd = np.zeros_like(w)
    for idx in np.ndindex(*w.shape):
        wp, wm = w.copy(), w.copy()
        wp[idx] += h
        wm[idx] -= h
        fd[idx] = (kpl.loss(wp, x, q, 0.5) - kpl.loss(wm, x, q, 0.5)) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


def test_embeddings_round_trip(tmp_path):
    m = np.array([[1.5, -0.0], [5e-324, 3.0]])
    kpl.write_embeddings(tmp_path / "m.emb", m)
    back = kpl.read_embeddings(tmp_path / "m.emb")
    assert back.tobytes() == m.tobytes()
    data = bytearray((tmp_path / "m.emb").read_bytes())
    data[30] ^= 0x01
    (tmp_path / "bad.emb").write_bytes(bytes(data))
    with pytest.raises(kpl.DataError, match="CRC mismatch"):
        kpl.read_embeddings(tmp_path / "bad.emb")


def test_pipeline_on_fixture(tmp_path):
    files = kpl.gen_fixture(tmp_path, seed=42)
    reports = {
        mode: kpl.run_pipeline(mode, files.images, files.kb, labels=files.labels, names=files.names,
                               include_timing=False)
        for mode in ("clip_baseline", "kpl_text", "kpl_full")
    }
    acc = {mode: r["accuracy"]["overall"] for mode, r in reports.items()}
    assert acc["clip_baseline"] < acc["kpl_text"] < acc["kpl_full"]
    assert len(reports["kpl_full"]["predictions"]) == 300
    again = kpl.run_pipeline("kpl_full", files.images, files.kb, labels=files.labels, include_timing=False)
    assert again == reports["kpl_full"]


def test_missing_file_is_data_error(tmp_path):
    with pytest.raises(kpl.DataError, match="nope.emb"):
        kpl.run_pipeline("kpl_text", tmp_path / "nope.emb", tmp_path / "kb.json")
