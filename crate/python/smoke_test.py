#!/usr/bin/env python3
"""Smoke test for the emoembed_py extension module.

Builds the module if needed, imports it, and exercises every exported
function and class with small sanity assertions. Run from anywhere:

    python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_module() -> Path:
    """Builds the cdylib and stages it under python/ as emoembed_py.so."""
    staged = Path(__file__).resolve().parent / "emoembed_py.so"
    subprocess.run(
        [
            "cargo", "build", "-p", "emoembed-py", "--release",
            "--features", "extension-module",
        ],
        cwd=REPO,
        check=True,
    )
    built = REPO / "target" / "release" / "libemoembed_py.so"
    shutil.copy2(built, staged)
    return staged


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol * max(1.0, abs(a), abs(b)), f"{a} != {b}"


def main() -> None:
    build_module()
    sys.path.insert(0, str(Path(__file__).resolve().parent))
    import emoembed_py as em

    # --- V-A validation and presets ---------------------------------------
    assert em.validate_va(1.5, -2.0) == (1.5, -2.0)
    try:
        em.validate_va(3.5, 0.0)
        raise AssertionError("out-of-range valence must raise")
    except ValueError:
        pass

    presets = dict((name, (v, a)) for name, v, a in em.list_presets())
    assert len(presets) >= 5
    assert em.preset_emotion("anger") == presets["anger"]
    v, a = presets["anger"]
    assert v < 0 and a > 0, "anger is negative-valence, high-arousal"

    # --- Density model ----------------------------------------------------
    samples = [(0.1 * (i % 7) - 0.3, 0.1 * (i % 5) - 0.2) for i in range(40)]
    samples += [(-2.5, -2.5), (-2.4, -2.6)]
    dm = em.DensityModel(samples)
    h_v, h_a = dm.bandwidth
    assert h_v > 0 and h_a > 0
    dense = dm.density_at(0.0, 0.0)
    sparse = dm.density_at(2.5, 2.5)
    assert dense > sparse, "density must peak near the sample cluster"
    assert dm.loss_weight(2.5, 2.5) > dm.loss_weight(0.0, 0.0)
    assert dm.loss_weight(2.9, 2.9) <= 1.0 / 1e-4 + 1e-9, "weight is floored"

    # --- Injection network ------------------------------------------------
    net = em.Embedder(seed=7)
    cfg = net.config
    assert cfg["d_prompt"] == 16 and cfg["l"] == 4
    assert net.num_parameters > 1000

    feature = [[math.sin(0.3 * r + 0.7 * c) for c in range(16)] for r in range(3)]
    out = net.forward(feature, 0.0, 0.0)
    assert len(out) == 3 and len(out[0]) == 16
    # Freshly initialized network is exactly the identity map.
    for r in range(3):
        for c in range(16):
            assert out[r][c] == feature[r][c], "identity at initialization"

    # Training on a constant-shift pair reduces the loss.
    shifted = [[x + 0.25 for x in row] for row in feature]
    pairs = [(feature, shifted, (1.0, 1.0)), (feature, shifted, (-1.0, 0.5))]
    first = net.fit(pairs, alpha=1.0, steps=1, batch_size=2, seed=3)
    last = net.fit(pairs, alpha=1.0, steps=120, batch_size=2, seed=3)
    assert last < first, f"loss should drop: {first} -> {last}"
    trained = net.forward(feature, 1.0, 1.0)
    assert trained != feature, "trained network must leave the identity"

    # Save / load round-trips bit-exactly through the checkpoint format.
    with tempfile.TemporaryDirectory() as td:
        ckpt = str(Path(td) / "net.ckpt")
        net.save(ckpt)
        net2 = em.Embedder.load(ckpt)
        assert net2.forward(feature, 1.0, 1.0) == trained

    # --- Loss target ------------------------------------------------------
    t = em.scaled_target([[0.0, 2.0]], [[1.0, 4.0]], 1.5)
    assert t == [[1.5, 5.0]]

    # --- Statistics -------------------------------------------------------
    approx(em.kendall_tau_b([1, 2, 3, 4], [10, 20, 30, 40]), 1.0)
    approx(em.kendall_tau_b([1, 2, 3, 4], [40, 30, 20, 10]), -1.0)

    approx(em.continuity([[0.0, 0.0], [3.0, 4.0], [3.0, 4.0]]), 2.5)

    rep = em.significance_tests(
        [3.1, 2.8, 3.5, 3.0, 2.9, 3.3, 3.2, 2.7],
        [2.0, 2.1, 2.4, 1.9, 2.2, 2.3, 2.0, 1.8],
    )
    assert rep["wilcoxon_exact"] is True
    assert rep["n_effective"] == 8
    assert 0.0 < rep["wilcoxon_p"] < 0.05, "uniform shift should be significant"

    print("smoke test: OK")


if __name__ == "__main__":
    main()
