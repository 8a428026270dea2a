import json

import lowpass_fedrec_py as lf


def test_metrics():
    assert lf.recall_at_k([3, 1, 2], [1, 5], 2) == 0.5
    assert lf.ndcg_at_k([4, 7], [4, 7], 2) == 1.0
    assert lf.jaccard([1, 2, 3], [2, 3, 4]) == 0.5


def test_spectrum_and_low_pass():
    # path u0-i0-u1-i1
    edges = [(0, 0), (1, 0), (1, 1)]
    ev = lf.laplacian_eigenvalues(2, 2, edges, 4)
    assert len(ev) == 4
    assert abs(ev[0]) < 1e-10 and abs(ev[-1] - 2.0) < 1e-10
    z = [[1.0, 0.0], [0.0, 1.0], [2.0, 1.0], [0.5, -1.0]]
    out = lf.low_pass(2, 2, edges, 4, z)
    assert all(abs(a - b) < 1e-8 for ra, rb in zip(out, z) for a, b in zip(ra, rb))


def test_config_and_training():
    cfg = lf.resolve_config(overrides={"gamma": "0.5", "phi": "24"})
    assert "gamma = 0.5" in cfg
    small = {"synthetic_users": "60", "synthetic_items": "80", "phi": "16", "embed_dim": "8", "global_rounds": "1"}
    a = json.loads(lf.train(overrides=small))
    b = json.loads(lf.train(overrides=small))
    assert a == b
    assert 0.0 <= a["test"]["overall"]["ndcg"] <= 1.0
    try:
        lf.train(overrides={"no_such_key": "1"})
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")


def test_theory_battery():
    table, verdicts = lf.theory(0, 3)
    names = [v["name"] for v in json.loads(verdicts)]
    assert "projection" in names and "projection" in table


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print(name, "ok")
