import numpy as np
import pytest

from axsty import benchmark as bm
from axsty.attention import attention_flop_count


def brute_windowed_full(ft, fr, head, span):
    """Centred masked-window oracle for the benchmark kernel."""
    d = head["wq"].shape[0]
    _, H, W = ft.shape
    q = (head["wq"] @ ft.reshape(ft.shape[0], -1)).reshape(d, H, W)
    k = (head["wk"] @ fr.reshape(fr.shape[0], -1)).reshape(d, H, W)
    v = (head["wv"] @ fr.reshape(fr.shape[0], -1)).reshape(d, H, W)
    lo, hi = -(span // 2), span - span // 2
    out = np.zeros((d, H, W))
    for i in range(H):
        for j in range(W):
            logits, vals = [], []
            for di in range(lo, hi):
                for dj in range(lo, hi):
                    pi, pj = i + di, j + dj
                    if not (0 <= pi < H and 0 <= pj < W):
                        continue
                    rq = head["rq_h"][:, di + span - 1] + head["rq_w"][:, dj + span - 1]
                    rk = head["rk_h"][:, di + span - 1] + head["rk_w"][:, dj + span - 1]
                    rv = head["rv_h"][:, di + span - 1] + head["rv_w"][:, dj + span - 1]
                    logits.append(q[:, i, j] @ k[:, pi, pj] + q[:, i, j] @ rq
                                  + k[:, pi, pj] @ rk)
                    vals.append(v[:, pi, pj] + rv)
            logits = np.array(logits)
            e = np.exp(logits - logits.max())
            a = e / e.sum()
            out[:, i, j] = np.sum(a[:, None] * np.array(vals), axis=0)
    return out


def test_windowed_kernel_matches_oracle(rng):
    h, span = 6, 3
    head = {
        "wq": rng.normal(size=(3, h)), "wk": rng.normal(size=(3, h)),
        "wv": rng.normal(size=(3, h)),
        "rq_h": rng.normal(0, 0.2, (3, 2 * span - 1)),
        "rq_w": rng.normal(0, 0.2, (3, 2 * span - 1)),
        "rk_h": rng.normal(0, 0.2, (3, 2 * span - 1)),
        "rk_w": rng.normal(0, 0.2, (3, 2 * span - 1)),
        "rv_h": rng.normal(0, 0.2, (3, 2 * span - 1)),
        "rv_w": rng.normal(0, 0.2, (3, 2 * span - 1))}
    ft = rng.normal(size=(h, 5, 5))
    fr = rng.normal(size=(h, 5, 5))
    got = bm.windowed_full_forward(ft, fr, [head], span)
    expected = brute_windowed_full(ft, fr, head, span)
    np.testing.assert_allclose(got, expected, atol=1e-9)


def test_bench_rows_and_flops(rng):
    rows = bm.run_benchmark("axial", [4, 8], heads=2, hidden=8, lattice=16, repeats=1)
    assert [r.m for r in rows] == [4, 8]
    for r in rows:
        assert r.flops == attention_flop_count(16, 16, r.m, "axial", heads=2, d_head=4)
        assert r.wall_ms > 0

    rows = bm.run_benchmark("full", [4, 8], heads=1, hidden=4, lattice=16, repeats=1)
    assert rows[1].flops == 4 * rows[0].flops


def test_span_beyond_lattice_rejected():
    with pytest.raises(ValueError, match="lattice"):
        bm.run_benchmark("axial", [32], lattice=16)


def test_slope_fit_exact_powers():
    ms = [8, 16, 32, 64]
    assert abs(bm.fit_loglog_slope(ms, [m ** 2 for m in ms]) - 2.0) < 1e-12
    assert abs(bm.fit_loglog_slope(ms, [5.0 * m for m in ms]) - 1.0) < 1e-12
