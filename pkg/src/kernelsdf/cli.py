"""Command-line surface.

Subcommands:

* ``ingest``    CSV -> panel archive, with a rejects report
* ``synth``     synthetic panel generator
* ``kernel``    precompute and cache an in-sample portfolio kernel
* ``backtest``  rolling-window grid run + report emission
* ``validate``  finite-width consistency suite (PASS/FAIL lines)
* ``featlearn`` metric feature-learning loop
* ``report``    re-render report files from a saved summary.json

The kernel cache directory defaults to ``~/.cache/kernelsdf`` and can be
overridden with the ``KERNELSDF_CACHE_DIR`` environment variable.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .backtest import rolling_backtest
from .config import load_config, build_backtest_config, render_config, DEFAULT_OPTIONS
from .kernels import ArchitectureSpec
from .panel import (CsvSchema, SynthSpec, ingest_csv, load_panel, panel_to_csv,
                    save_panel, synth_panel)
from .ptk import (ChunkPlan, NormalizationSpec, assemble_is_kernel,
                  default_cache_dir, save_kernel)

__all__ = ["main"]


def _arch_from_args(args, input_dim: int) -> ArchitectureSpec:
    return ArchitectureSpec(
        depth=args.depth,
        sigma_w=(args.sigma_w,) * (args.depth + 1),
        sigma_b=(args.sigma_b,) * args.depth,
        activation=args.activation,
        input_dim=input_dim,
    )


def cmd_ingest(args) -> int:
    schema = CsvSchema(max_missing_frac=args.max_missing)
    panel, report = ingest_csv(args.csv, schema)
    save_panel(panel, args.output)
    print(f"read {report.n_rows_read} rows; kept {report.n_rows_kept} "
          f"({report.n_rows_dropped_missing} dropped for missing characteristics, "
          f"{len(report.rejects)} rejected)")
    print(f"imputed {report.n_values_imputed} missing values at the scale midpoint")
    print(f"panel: T={panel.n_periods} periods, d={panel.n_chars} characteristics "
          f"-> {args.output}")
    if report.rejects:
        rejects_path = args.rejects or str(args.output) + ".rejects.csv"
        report.to_frame().to_csv(rejects_path, index=False)
        print(f"rejects report -> {rejects_path}")
    return 0


def cmd_synth(args) -> int:
    active = tuple(int(a) for a in args.active.split(",")) if args.active else None
    spec = SynthSpec(
        n_periods=args.periods, n_assets=args.assets, n_chars=args.chars,
        signal=args.signal, noise_scale=args.noise,
        signal_scale=args.signal_scale, active_chars=active,
    )
    panel, _ = synth_panel(spec, args.seed)
    save_panel(panel, args.output)
    print(f"synthetic panel: T={panel.n_periods}, N={args.assets}, d={args.chars}, "
          f"signal={args.signal}, seed={args.seed} -> {args.output}")
    if args.csv:
        panel_to_csv(panel, args.csv)
        print(f"csv export -> {args.csv}")
    return 0


def cmd_kernel(args) -> int:
    panel = load_panel(args.panel)
    stop = args.stop if args.stop is not None else panel.n_periods
    panel = panel.window(args.start, stop)
    arch = _arch_from_args(args, panel.n_chars)
    norm = NormalizationSpec(alpha=args.alpha)
    plan = ChunkPlan.for_panel(panel, args.memory_budget)
    t0 = time.monotonic()
    K = assemble_is_kernel(panel, arch, args.which, norm, plan, n_workers=args.workers)
    elapsed = time.monotonic() - t0
    out = args.output
    if out is None:
        cache = default_cache_dir()
        os.makedirs(cache, exist_ok=True)
        name = f"kbar_{arch.fingerprint()}_{args.which}_a{args.alpha:g}_{panel.data_hash()[:12]}.bin"
        out = os.path.join(cache, name)
    save_kernel(K, out, arch, norm, args.which)
    print(f"assembled {K.shape[0]}x{K.shape[1]} {args.which} portfolio kernel "
          f"in {elapsed:.2f}s -> {out}")
    return 0


def cmd_backtest(args) -> int:
    from .report import emit_report

    panel = load_panel(args.panel)
    options = load_config(args.config)
    config = build_backtest_config(options, panel.n_chars)
    factors = None
    if args.factors:
        import pandas as pd

        factors = pd.read_csv(args.factors, index_col=0)
        factors.index = factors.index.astype(str)
    t0 = time.monotonic()
    report = rolling_backtest(panel, config, factors=factors, n_workers=args.workers)
    elapsed = time.monotonic() - t0
    formats = tuple(args.formats.split(","))
    written = emit_report(report, args.output, formats)
    print(f"backtest: {len(report.cells)} cells x {len(report.oos_periods)} OOS months "
          f"in {elapsed:.1f}s")
    df = report.to_frame().sort_values("sharpe", ascending=False)
    head = df.head(5).to_string(index=False)
    print("top cells by Sharpe:")
    print(head)
    for name, path in written.items():
        print(f"  {name} -> {path}")
    return 0


def cmd_featlearn(args) -> int:
    import pandas as pd

    from .featlearn import alternate_fit, get_profile

    panel = load_panel(args.panel)
    profile = get_profile(args.profile, args.ell)
    result = alternate_fit(
        panel, z=args.z, profile=profile, iters=args.iters,
        norm_rule=args.norm_rule, norm=NormalizationSpec(alpha=args.alpha),
    )
    os.makedirs(args.output, exist_ok=True)
    m_path = os.path.join(args.output, "metric.csv")
    cols = panel.columns or tuple(f"x{j}" for j in range(panel.n_chars))
    pd.DataFrame(result.M.M, index=cols, columns=cols).to_csv(m_path, float_format="%.17g")
    diag_path = os.path.join(args.output, "diagnostics.csv")
    pd.DataFrame([{
        "iteration": h.iteration,
        "objective": h.objective,
        "objective_unsquared": h.objective_unsquared,
        "xi_norm": h.xi_norm,
        "g_trace": h.g_trace,
    } for h in result.history]).to_csv(diag_path, index=False, float_format="%.17g")
    xi_path = os.path.join(args.output, "weights.json")
    with open(xi_path, "w") as fh:
        json.dump(result.xi.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    eigs = result.M.eigenvalues()
    print(f"feature learning: {len(result.history)} iterations"
          + (" (stopped: degenerate gradients)" if result.stopped_degenerate else ""))
    print(f"final objective {result.history[-1].objective:.6g}; "
          f"top metric eigenvalues {np.array2string(eigs[:min(5, eigs.size)], precision=4)}")
    print(f"  metric -> {m_path}\n  diagnostics -> {diag_path}\n  weights -> {xi_path}")
    return 0


def cmd_report(args) -> int:
    from .report import emit_report, read_report_json

    report = read_report_json(args.summary)
    formats = tuple(args.formats.split(","))
    written = emit_report(report, args.output, formats)
    for name, path in written.items():
        print(f"  {name} -> {path}")
    return 0


def _check(label: str, ok: bool, detail: str = "") -> bool:
    tag = "PASS" if ok else "FAIL"
    print(f"[{tag}] {label}" + (f" ({detail})" if detail else ""))
    return ok


def cmd_validate(args) -> int:
    """Finite-width consistency suite; exits nonzero on any failure."""
    from scipy.special import erf as erf_fn

    from .activations import dual_activation
    from .kernels import kernel_gram, ntk_recursion
    from .mlp import (grad_theta, gp_posterior, init_mlp,
                      nngp_distribution_test, ntk_convergence_errors)

    rng = np.random.default_rng(args.seed)
    ok = True
    deep = args.deep

    # 1. closed-form duals vs direct Monte Carlo
    n_draws = 2_000_000 if deep else 300_000
    n_triples = 50 if deep else 12
    tol = 5e-3 if deep else 2e-2
    worst = 0.0
    for kind in ("relu", "erf"):
        for _ in range(n_triples):
            a, b = rng.uniform(0.05, 3.0, size=2)
            rho = rng.uniform(-0.95, 0.95)
            c = rho * np.sqrt(a * b)
            g = rng.standard_normal((n_draws // 2, 2))
            g = np.vstack([g, -g])
            chol = np.linalg.cholesky(np.array([[a, c], [c, b]]))
            uv = g @ chol.T
            if kind == "relu":
                pu, pv = np.maximum(uv, 0.0).T
                du, dv = (uv > 0).astype(float).T
            else:
                pu, pv = erf_fn(uv).T
                scale = 2.0 / np.sqrt(np.pi)
                du, dv = (scale * np.exp(-uv * uv)).T
            v_mc, vd_mc = float(np.mean(pu * pv)), float(np.mean(du * dv))
            v_an, vd_an = dual_activation(a, b, c, kind)
            worst = max(worst, abs(v_an - v_mc), abs(vd_an - vd_mc))
    ok &= _check("dual activations match Monte Carlo", worst < tol,
                 f"max abs dev {worst:.2e} < {tol:g}")

    # 2. reverse-mode gradient vs central differences
    worst = 0.0
    for seed in range(3):
        arch = ArchitectureSpec.flat(2, 5, "erf")
        params = init_mlp(arch, (7, 6), seed)
        x = rng.standard_normal(5)
        g = grad_theta(params, x)
        idx = rng.choice(g.size, size=25, replace=False)
        fd = np.empty(idx.size)
        h = 1e-5
        flat_blocks = list(params.flat_order())
        sizes = np.cumsum([0] + [blk.size for blk in flat_blocks])
        from .mlp import forward

        for j, i in enumerate(idx):
            blk = int(np.searchsorted(sizes, i, side="right") - 1)
            local = i - sizes[blk]
            target = flat_blocks[blk]
            orig = target.flat[local]
            target.flat[local] = orig + h
            fp, _ = forward(params, x)
            target.flat[local] = orig - h
            fm, _ = forward(params, x)
            target.flat[local] = orig
            fd[j] = (fp - fm) / (2 * h)
        worst = max(worst, float(np.linalg.norm(g[idx] - fd) / np.linalg.norm(g[idx])))
    ok &= _check("gradients match finite differences", worst < 1e-5,
                 f"max rel err {worst:.2e}")

    # 3. empirical tangent kernel approaches the analytic limit
    arch = ArchitectureSpec.flat(2, 8, "relu")
    pairs = [(rng.standard_normal(8), rng.standard_normal(8)) for _ in range(2)]
    widths = (64, 1024) if deep else (64, 512)
    n_seeds = 20 if deep else 8
    errs = [np.median(ntk_convergence_errors(arch, w, pairs, n_seeds)) for w in widths]
    ok &= _check("empirical tangent kernel converges", errs[-1] < 0.15 and errs[-1] < errs[0],
                 f"median rel err {errs[0]:.3f} -> {errs[-1]:.3f}")

    # 4. wide-network outputs are Gaussian with the analytic covariance.
    # Clustered batch: inter-point correlations near one make the sampling
    # noise of the covariance estimate a single common mode, so a per-entry
    # relative tolerance is meaningful at a few hundred seeds.
    if deep:
        # Fixed reference configuration, calibrated so the per-entry 10%
        # band sits several sampling standard errors from the truth.
        arch = ArchitectureSpec.flat(2, 10, "erf")
        brng = np.random.default_rng(2026)
        batch = brng.standard_normal(10)[None, :] + 0.2 * brng.standard_normal((6, 10))
        rep = nngp_distribution_test(arch, (2048, 2048), 500, batch, base_seed=20000)
        lim = 0.10
    else:
        arch = ArchitectureSpec.flat(2, 6, "erf")
        base = rng.standard_normal(6)
        batch = base[None, :] + 0.3 * rng.standard_normal((4, 6))
        rep = nngp_distribution_test(arch, (512, 512), 300, batch)
        lim = 0.30
    ok &= _check("wide outputs match the analytic covariance",
                 rep.max_rel_dev < lim and rep.mean_within_bound(),
                 f"max rel dev {rep.max_rel_dev:.3f} < {lim:g}")

    # 5. GP posterior sanity
    arch = ArchitectureSpec.flat(1, 3, "relu")
    kfn = lambda A, B: kernel_gram(A, B, arch, "nngp").values  # noqa: E731
    Xtr = rng.standard_normal((5, 3))
    Ytr = rng.standard_normal(5)
    post = gp_posterior(kfn, Xtr, Ytr, 0.0, Xtr[2])
    interp = abs(post.mean - Ytr[2]) < 1e-7 and post.variance < 1e-7
    prior = float(kernel_gram(Xtr[2][None], Xtr[2][None], arch, "nngp").values[0, 0])
    post2 = gp_posterior(kfn, Xtr[:3], Ytr[:3], 0.1, Xtr[2])
    ok &= _check("GP posterior interpolates and contracts",
                 interp and post2.variance <= prior)

    # 6. scalar recursion agrees with the vectorized gram path
    arch = ArchitectureSpec.flat(3, 4, "erf")
    X = rng.standard_normal((4, 4))
    G = kernel_gram(X, X, arch, "ntk").values
    worst = max(
        abs(G[i, j] - ntk_recursion(X[i], X[j], arch)[0])
        for i in range(4) for j in range(4)
    )
    ok &= _check("gram path matches scalar recursion", worst < 1e-12,
                 f"max abs dev {worst:.1e}")

    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="kernelsdf",
        description="Infinite-width kernel SDF estimation and backtesting",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", help="load a characteristics CSV into a panel archive")
    sp.add_argument("csv")
    sp.add_argument("-o", "--output", required=True, help="output .npz path")
    sp.add_argument("--rejects", help="rejects CSV path (default: <output>.rejects.csv)")
    sp.add_argument("--max-missing", type=float, default=1.0 / 3.0,
                    help="drop rows with a larger missing fraction (default 1/3)")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("synth", help="generate a synthetic panel")
    sp.add_argument("-T", "--periods", type=int, required=True)
    sp.add_argument("-N", "--assets", type=int, required=True)
    sp.add_argument("-d", "--chars", type=int, required=True)
    sp.add_argument("--signal", choices=("linear", "fourier"), default="linear")
    sp.add_argument("--noise", type=float, default=1.0)
    sp.add_argument("--signal-scale", type=float, default=1.0)
    sp.add_argument("--active", help="comma-separated active characteristic indices")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--output", required=True, help="output .npz path")
    sp.add_argument("--csv", help="also export the raw CSV")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("kernel", help="assemble and cache an in-sample portfolio kernel")
    sp.add_argument("--panel", required=True)
    sp.add_argument("--depth", type=int, required=True)
    sp.add_argument("--activation", choices=("relu", "erf"), default="relu")
    sp.add_argument("--sigma-w", type=float, default=1.0)
    sp.add_argument("--sigma-b", type=float, default=0.05)
    sp.add_argument("--which", choices=("ntk", "nngp"), default="ntk")
    sp.add_argument("--alpha", type=float, default=0.5)
    sp.add_argument("--start", type=int, default=0, help="first period index")
    sp.add_argument("--stop", type=int, help="one past the last period index")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--memory-budget", type=int, default=64 * 2**20,
                    help="bytes allowed for one resident kernel block")
    sp.add_argument("-o", "--output",
                    help="output path (default: auto-named file in the cache dir)")
    sp.set_defaults(func=cmd_kernel)

    sp = sub.add_parser("backtest", help="rolling-window grid backtest")
    sp.add_argument("--panel", required=True)
    sp.add_argument("--config", required=True, help="key=value config file")
    sp.add_argument("--factors", help="benchmark factor CSV (period index + columns)")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--formats", default="csv,json,plots")
    sp.add_argument("-o", "--output", required=True, help="report directory")
    sp.set_defaults(func=cmd_backtest)

    sp = sub.add_parser("validate", help="finite-width consistency suite")
    sp.add_argument("--deep", action="store_true",
                    help="full-size checks (slower, tighter tolerances)")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("featlearn", help="metric feature-learning loop")
    sp.add_argument("--panel", required=True)
    sp.add_argument("-z", type=float, default=1.0, help="ridge penalty")
    sp.add_argument("--iters", type=int, default=5)
    sp.add_argument("--profile", choices=("gaussian", "laplace"), default="gaussian")
    sp.add_argument("--ell", type=float, default=1.0)
    sp.add_argument("--alpha", type=float, default=0.5)
    sp.add_argument("--norm-rule", choices=("trace", "sqrt"), default="trace")
    sp.add_argument("-o", "--output", required=True, help="output directory")
    sp.set_defaults(func=cmd_featlearn)

    sp = sub.add_parser("report", help="re-render report files from summary.json")
    sp.add_argument("--summary", required=True, help="path to summary.json")
    sp.add_argument("--formats", default="csv,json,plots")
    sp.add_argument("-o", "--output", required=True, help="report directory")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("write-config", help="print a default config file")
    sp.set_defaults(func=lambda args: (print(render_config(
        dict(DEFAULT_OPTIONS, window=12))), 0)[1])

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
