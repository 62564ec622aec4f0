"""Quick end-to-end check of the python bindings.

Run ./build_module.sh first, then `python3 smoke_test.py` from this
directory.  Exits nonzero on the first failed check.
"""

import math
import sys
import tempfile

sys.path.insert(0, ".")
import levelset_mc as lm


def check(name, ok, detail=""):
    print(f"{'ok  ' if ok else 'FAIL'} {name}  {detail}")
    if not ok:
        sys.exit(1)


def main():
    dim, steps = 3, 256

    # Deterministic path x(t) = t e1: every functional has a closed form.
    values = lm.linear_test_path(steps, dim)
    rec = lm.path_record(values, dim)
    check("g on linear path", abs(rec["g"] - 1 / 6) < 1e-3, f"g={rec['g']:.6f}")
    check("gamma on linear path", abs(rec["gamma"] - 1 / 3) < 1e-3)
    check("delta_u on linear path", abs(rec["delta_u"] - 1.0) < 1e-9)
    check(
        "delta_u/gamma on linear path",
        abs(rec["delta_u_over_gamma"] - 6.0) < 2e-2,
        f"got {rec['delta_u_over_gamma']:.4f}",
    )

    # Small ensemble: the corrected divergence has mean zero.
    table = lm.MalliavinTable(dim, 64, 20_000, seed=7)
    check("no degenerate paths", table.degenerate_count == 0)
    div = table.divergence
    mean = sum(div) / len(div)
    sd = math.sqrt(sum((v - mean) ** 2 for v in div) / (len(div) - 1))
    se = sd / math.sqrt(len(div))
    check("divergence mean zero", abs(mean) < 4 * se, f"mean={mean:.4f} se={se:.4f}")

    # Kernel estimate vs the Malliavin representation of the density.
    g = table.g
    r_grid = [0.5, 0.75, 1.0, 1.25]
    bw = lm.silverman_bandwidth(g)
    kde, kde_se = lm.kde_density(g, r_grid, bw)
    mal, mal_se = lm.malliavin_density(table, r_grid)
    for i, r in enumerate(r_grid):
        gap = abs(kde[i] - mal[i])
        tol = 4 * math.hypot(kde_se[i], mal_se[i]) + 0.1 * mal[i]
        check(f"kde vs malliavin at r={r}", gap < tol, f"gap={gap:.4f}")

    # Laplace transform of g has a closed form; check the exposed oracle
    # and the numerical inversion against it.
    lam = 1.0
    oracle = math.cosh(math.sqrt(lam)) ** (-dim / 2)
    check("laplace oracle", abs(lm.laplace_oracle(lam, dim) - oracle) < 1e-12)
    f_at, flagged = lm.invert_density(1.0, dim)
    check("inversion near malliavin", abs(f_at - mal[2]) < 4 * mal_se[2] + 0.05)

    # Zero potential: every Girsanov weight collapses to 1.
    pot = lm.Potential("zero", dim=dim)
    grec = lm.girsanov_record(pot, values)
    check("zero-potential weights are 1",
          grec["rho1_stochastic"] == 1.0
          and grec["rho1_representation"] == 1.0
          and grec["inv_rho1_of_b"] == 1.0)
    cos = lm.Potential("cosine", a=0.3, dim=dim)
    check("cosine potential value", abs(cos.value([0.0] * dim) - 0.3 * dim) < 1e-12)

    # Tiny invariants suite run through the same driver as the CLI.
    with tempfile.TemporaryDirectory() as out:
        results = lm.run_suite("invariants", out, dim=dim, steps=64,
                               paths=4000, seed=11)
        for name, passed, z in results:
            check(f"suite check {name}", passed, f"z={z:.2f}")

    print("smoke test passed")


if __name__ == "__main__":
    main()
