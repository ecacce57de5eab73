"""Experiment pipeline: solve, then the analysis stages, then a report bundle."""
import platform
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, acf, almgren, blowup
from .certs import Certificate
from .errors import DegenerateError
from .grid import lift_state
from .io import read_csv, save_state, write_csv, write_json
from .solver import solve

# certificate id -> acceptance criterion number
CRITERIA = {
    "friedman_hayman": 4,
    "stereographic": 5,
    "energy_forms": 7,
    "almgren_sweep": 8,
    "uniform_bounds": 9,
    "acf_sweep": 10,
}
C_FLOOR = 0.1
STABLE_REL = 0.10


def _tag(beta):
    return f"{-beta:.0e}".replace("+", "")


def _spread(values, floor):
    """max / min over the sweep, with values below floor raised to it."""
    v = np.maximum(np.asarray(values, dtype=float), floor)
    return float(v.max() / v.min())


def _rel_change(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


# ---------------------------------------------------------------- stages

def stage_almgren(results, opts, out, summary):
    dims = opts.get("dims", [2, 3])
    r_max = opts.get("r_max", 0.8)
    ratio = opts.get("ratio", 1.05)
    center = np.asarray(opts.get("center", [0.0, 0.0]), dtype=float)
    poh = bool(opts.get("pohozaev", False))
    rows, gaps = [], []
    for res in results:
        st, _ = blowup.straighten(res.state, center)
        h = st.grid.h
        radii = almgren.geometric_ladder(h, min(r_max, st.grid.half_width - 2 * h), ratio)
        for N in dims:
            s = st if N == 2 else lift_state(st)
            prof = almgren.monotonicity_report(s, radii, pohozaev=poh)
            head, data = prof.rows()
            write_csv(out / f"almgren_{N}d_beta{_tag(res.beta)}.csv", head, data)
            c = prof.constants
            cert = almgren.monotonicity_certificate(prof, cid=f"almgren[{N}d,beta={res.beta:g}]")
            summary["certificates"].append({**cert.as_dict(), "criterion": 8})
            rows.append((N, res.beta, c["C_star"], c["C_H"], c["N_plus_1_min"], c["H_positive"], cert.passed))
            gap = np.abs(prof.E_vol - prof.E_bdy) / np.abs(prof.E_vol)
            gaps.append((N, res.beta, float(gap.max()), 5 * h + 10 * res.residual_norm))
    ok7 = all(g <= tol for _, _, g, tol in gaps)
    summary["certificates"].append({**Certificate(
        "energy_forms", ok7, fitted={"max_gap": max(g for _, _, g, _ in gaps)},
        tolerance={"bound": "5h + 10*residual", "h": results[0].state.grid.h}).as_dict(), "criterion": 7})
    write_csv(out / "energy_forms.csv", ["dim", "beta", "max_gap", "tolerance"], gaps)
    ok8 = True
    spread = {}
    for N in dims:
        sel = [r for r in rows if r[0] == N]
        C = [r[2] for r in sel]
        spread[N] = _spread(C, C_FLOOR)
        ok8 &= all(r[6] for r in sel) and spread[N] <= 3.0
    summary["certificates"].append({**Certificate(
        "almgren_sweep", ok8, hypothesis={"dims": list(dims)},
        fitted={"C_star": {f"{r[0]}d/{r[1]:g}": r[2] for r in rows}, "decade_spread": spread},
        tolerance={"C_max": almgren.C_MAX, "spread": 3.0, "C_floor": C_FLOOR}).as_dict(), "criterion": 8})
    write_csv(out / "almgren_summary.csv", ["dim", "beta", "C_star", "C_H", "N_plus_1_min", "H_positive", "pass"],
              [[r[0], r[1], r[2], r[3], r[4], float(r[5]), float(r[6])] for r in rows])


def acf_frame(state, pair=(0, 1), radius=0.5):
    """Blowup frame centred at the two-phase point of a pair on the x1 axis."""
    x0 = blowup.two_phase_point(state, pair)
    return blowup.blowup_scale(state, x0, radius)


def stage_acf(results, opts, out, summary):
    eta = opts.get("eta", 0.24)
    pair = tuple(opts.get("pair", [1, 2]))
    pair = (pair[0] - 1, pair[1] - 1)
    n_ang = opts.get("n_ang", 24)
    rows = []
    for res in results:
        try:
            fr = acf_frame(res.state, pair, opts.get("radius", 0.5))
        except DegenerateError as e:
            cert = Certificate(f"acf[beta={res.beta:g}]", False, skipped=True, reason=str(e))
            summary["certificates"].append({**cert.as_dict(), "criterion": 10})
            continue
        v = fr.state
        lo = max(1.0, 4 * v.grid.h)
        hi = v.grid.half_width / 3
        radii = almgren.geometric_ladder(v.grid.h, hi, r_min=lo) if hi > lo * 1.05 else np.array([])
        if len(radii) < 2:
            cert = Certificate(f"acf[beta={res.beta:g}]", False, skipped=True,
                               reason=f"empty radius window [{lo:.3g}, {hi:.3g}] in the blowup frame")
            summary["certificates"].append({**cert.as_dict(), "criterion": 10})
            continue
        prof = acf.acf_profile(v, radii, acf.AcfParams(M=fr.M_comp, eta=eta, pair=pair), n_ang)
        cert = acf.acf_monotonicity_report(prof)
        cert.id = f"acf[beta={res.beta:g}]"
        h = acf.check_h_conditions(prof)
        head, data = prof.rows()
        write_csv(out / f"acf_beta{_tag(res.beta)}.csv", head, data)
        summary["certificates"].append({**cert.as_dict(), "criterion": 10})
        rows.append([res.beta, fr.r_scale, fr.M_comp, cert.fitted.get("C_star", np.nan),
                     cert.fitted.get("violation", np.nan), h["lambda_star"], h["w_star"], h["third_ratio"],
                     h["c_star"], float(cert.passed)])
    if rows:
        write_csv(out / "acf_summary.csv", ["beta", "r_scale", "M_comp", "C_star", "violation", "lambda_star",
                                            "w_star", "third_ratio", "c_star", "pass"], rows)
    ok = len(rows) >= 2 and all(r[9] for r in rows) and all(r[4] <= acf.EPS_MONO + 1e-12 for r in rows)
    stab = {}
    if len(rows) >= 2:
        a, b = rows[-2], rows[-1]
        stab = {"lambda": _rel_change(a[5], b[5]), "w": _rel_change(a[6], b[6])}
        ok = ok and stab["lambda"] <= STABLE_REL and stab["w"] <= STABLE_REL and b[7] < 1e-3
    summary["certificates"].append({**Certificate(
        "acf_sweep", bool(ok), fitted={"stability": stab, "third_ratio_last": rows[-1][7] if rows else np.nan},
        tolerance={"stable_rel": STABLE_REL, "third": 1e-3, "C_max": acf.C_MAX}).as_dict(), "criterion": 10})


def stage_blowup(results, opts, out, summary, boundary_max):
    radius = opts.get("radius", 0.5)
    alphas = opts.get("holder_alphas", [0.5, 0.9])
    inner, outer = opts.get("cutoff_inner", 1.0), opts.get("cutoff_outer", 2.0)
    rows = []
    for res in results:
        st = res.state
        lip = blowup.lipschitz_seminorm(st, radius, inner, outer)
        hol = [blowup.holder_seminorm(st, a, radius) for a in alphas]
        seg = blowup.segregation_metrics(st, radius)
        fr = blowup.blowup_scale(st, "auto", radius, inner, outer)
        gv = blowup.lipschitz_seminorm(fr.state, min(1.0, fr.state.grid.half_width - 2 * fr.state.grid.h),
                                       use_cutoff=False)["plain"]
        rows.append([res.beta, float(np.max(st.values)), lip["L"], lip["plain"], *hol, seg["sup_overlap"][0, 1],
                     seg["interaction"][0, 1], fr.r_scale, fr.M_comp, fr.origin_sum, gv])
    head = ["beta", "max_u", "lipschitz", "lipschitz_plain"] + [f"holder_{a:g}" for a in alphas] + \
        ["sup_overlap_12", "interaction_12", "r_scale", "M_comp", "origin_sum", "blowup_grad_sup"]
    write_csv(out / "blowup.csv", head, rows)
    R = np.array(rows)
    na = len(alphas)
    maxu_ok = bool(np.all(R[:, 1] <= 1.1 * boundary_max))
    overlap = R[:, 4 + na]
    overlap_ok = bool(np.all(np.diff(overlap) < 0))
    big = np.abs(R[:, 0]) >= 1e5 - 1
    lip_ok = True
    lip_change = np.nan
    if big.sum() >= 2:
        a, b = R[big][-2:, 2]
        lip_change = _rel_change(a, b)
        lip_ok = lip_change < STABLE_REL
    hol_ok, hol_spread = True, {}
    last3 = R[-3:] if len(R) >= 3 else R
    for k, a in enumerate(alphas):
        v = last3[:, 4 + k]
        hol_spread[f"{a:g}"] = float(v.max() / v.min() - 1)
        hol_ok &= hol_spread[f"{a:g}"] <= STABLE_REL
    summary["certificates"].append({**Certificate(
        "uniform_bounds", maxu_ok and overlap_ok and lip_ok and hol_ok,
        fitted={"max_u": float(R[:, 1].max()), "overlap": overlap, "lipschitz_change": lip_change,
                "holder_spread": hol_spread},
        hypothesis={"boundary_max": boundary_max},
        tolerance={"max_u": 1.1 * boundary_max, "stable_rel": STABLE_REL}).as_dict(), "criterion": 9})


def stage_blowdown(results, opts, out, summary):
    rhos = opts.get("rhos", [2, 4, 8])
    pair = tuple(p - 1 for p in opts.get("pair", [1, 2]))
    res = results[-1]
    fr = acf_frame(res.state, pair)
    rows = []
    for rho in rhos:
        if rho + 2 * fr.state.grid.h > fr.state.grid.half_width:
            continue
        w = blowup.blowdown_scale(fr.state, rho)
        fit = blowup.profile_fit(w, pair)
        rows.append([rho, fit["residual"], fit["a"], fit["b"], *fit["direction"]])
    head = ["rho", "residual", "a", "b"] + [f"e{k + 1}" for k in range(fr.state.dim)]
    write_csv(out / "blowdown.csv", head, rows)


def stage_spectral(opts, out, summary):
    caps = opts.get("caps", 64)
    fh = acf.friedman_hayman_check(caps)
    write_csv(out / "fh.csv", ["theta", "sum", "lambda"],
              np.column_stack([fh.fitted["theta"], fh.fitted["sums"], fh.fitted["lambda"]]))
    summary["certificates"].append({**fh.as_dict(), "criterion": 4})
    res = opts.get("stereo_res", [64, 128, 256])
    st = stereo_suite(res)
    rows = [[i, r, g] for i, rep in enumerate(st) for r, g in zip(rep["resolutions"], rep["gaps"])]
    write_csv(out / "stereo.csv", ["function", "resolution", "gap"], rows)
    ok = all(np.all(rep["orders"] >= 1.9) for rep in st) and st[0]["gaps"][-1] < 1e-3
    summary["certificates"].append({**Certificate(
        "stereographic", bool(ok), fitted={"orders": [rep["orders"] for rep in st],
                                           "finest_gaps": [rep["gaps"][-1] for rep in st]},
        tolerance={"order": 1.9, "eigen_gap": 1e-3}).as_dict(), "criterion": 5})


STEREO_FUNCTIONS = (
    lambda x: x[..., 2],
    lambda x: x[..., 0] * x[..., 1] + x[..., 2] ** 2,
    lambda x: np.exp(x[..., 0]) * np.sin(x[..., 1]),
)


def stereo_suite(resolutions=(64, 128, 256), Bfun=None):
    Bfun = acf.identity_B if Bfun is None else Bfun
    return [acf.stereographic_divergence_check(Bfun, u, tuple(resolutions)) for u in STEREO_FUNCTIONS]


# ---------------------------------------------------------------- driver

def manifest(config):
    return {
        "package": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "config_sha256": config.digest(),
        "seed": config.seed,
    }


def run_experiment(config, output_dir=None, plots=True):
    """Run every configured stage and write the bundle; returns the summary dict."""
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.random.seed(config.seed)
    timings = {}
    summary = {"manifest": manifest(config), "certificates": [], "errors": []}
    (out / "config.yaml").write_text(config.source)
    t = time.perf_counter()
    results = solve(config.solve, config.spec)
    timings["solve"] = time.perf_counter() - t
    for res in results:
        save_state(res.state, out / "states" / f"beta{_tag(res.beta)}")
    write_csv(out / "solve.csv", ["beta", "iterations", "residual", "energy", "max_u", "sup_overlap_12"],
              [[r.beta, r.iterations, r.residual_norm, r.energy, float(np.max(r.state.values)),
                float(np.max(r.state.values[0] * r.state.values[1]))] for r in results])
    bmax = config.solve.boundary.amplitude
    if config.solve.ncomp >= 3 and config.solve.boundary.third == "bump":
        bmax = max(bmax, config.solve.boundary.third_amplitude)
    for stage in config.analyses:
        t = time.perf_counter()
        try:
            if stage.stage == "almgren":
                stage_almgren(results, stage.options, out, summary)
            elif stage.stage == "acf":
                stage_acf(results, stage.options, out, summary)
            elif stage.stage == "blowup":
                stage_blowup(results, stage.options, out, summary, bmax)
            elif stage.stage == "blowdown":
                stage_blowdown(results, stage.options, out, summary)
            elif stage.stage == "spectral":
                stage_spectral(stage.options, out, summary)
        except DegenerateError as e:
            summary["errors"].append({"stage": stage.stage, "error": type(e).__name__, "message": str(e)})
        timings[stage.stage] = time.perf_counter() - t
    write_json(out / "summary.json", summary)
    write_json(out / "manifest.json", summary["manifest"])
    write_json(out / "timings.json", timings)
    if plots:
        emit_plots(out)
    return summary


# ---------------------------------------------------------------- plots

def _figure():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "competlab"
    return plt


def _save(plt, fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_plots(bundle):
    """Line plots for whatever CSVs the bundle holds; returns the written paths."""
    bundle = Path(bundle)
    written = []
    alm = sorted(bundle.glob("almgren_2d_beta*.csv"))
    summ = bundle / "almgren_summary.csv"
    if alm:
        plt = _figure()
        fig, ax = plt.subplots(1, 2, figsize=(10, 4))
        Cs = {}
        if summ.exists():
            _, S = read_csv(summ)
            Cs = {(int(r[0]), r[1]): r[2] for r in S}
        for p in alm:
            head, D = read_csv(p)
            r, N = D[:, 0], D[:, head.index("N")]
            beta = -float(p.stem.split("beta")[1])
            ax[0].plot(r, N, label=f"beta={beta:g}")
            C = Cs.get((2, beta), 0.0)
            y = (N + 1) * np.exp(C * r)
            ax[1].plot(r, y)
            drop = np.nonzero(np.diff(y) < 0)[0]
            for k in drop:
                ax[1].axvspan(r[k], r[k + 1], color="red", alpha=0.15, lw=0)
        ax[0].set(xlabel="r", ylabel="N(r)")
        ax[1].set(xlabel="r", ylabel="(N+1) exp(C* r)")
        ax[0].legend(fontsize=7)
        path = bundle / "almgren.svg"
        _save(plt, fig, path)
        written.append(path)
    acfs = sorted(bundle.glob("acf_beta*.csv"))
    if acfs:
        plt = _figure()
        fig, ax = plt.subplots(figsize=(6, 4))
        for p in acfs:
            head, D = read_csv(p)
            line, = ax.plot(D[:, 0], D[:, 3], label=p.stem)
            ax.plot(D[:, 0], D[:, 6], ls="--", color=line.get_color())
        ax.set(xlabel="r (blowup frame)", ylabel="J1 J2 / r^4 (solid), corrected (dashed)", xscale="log")
        ax.legend(fontsize=7)
        path = bundle / "acf.svg"
        _save(plt, fig, path)
        written.append(path)
    if (bundle / "blowup.csv").exists():
        head, D = read_csv(bundle / "blowup.csv")
        plt = _figure()
        fig, ax = plt.subplots(figsize=(6, 4))
        lb = np.log10(np.abs(D[:, 0]))
        ax.plot(lb, D[:, 2], "o-", label="Lipschitz")
        for k, name in enumerate(head):
            if name.startswith("holder_"):
                ax.plot(lb, D[:, k], "s--", label=name)
        if len(lb) >= 2:
            ax.annotate(f"last decade change {abs(D[-1, 2] - D[-2, 2]) / D[-1, 2]:.1%}",
                        (lb[-1], D[-1, 2]), textcoords="offset points", xytext=(-120, 10), fontsize=8)
        ax.set(xlabel="log10 |beta|", ylabel="seminorm on K")
        ax.legend(fontsize=7)
        path = bundle / "seminorms.svg"
        _save(plt, fig, path)
        written.append(path)
    if (bundle / "fh.csv").exists():
        _, D = read_csv(bundle / "fh.csv")
        plt = _figure()
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(D[:, 0], D[:, 1], ".-")
        ax.axhline(2.0, color="k", lw=0.5)
        ax.set(xlabel="cap angle", ylabel="gamma(l1(t)) + gamma(l1(pi - t))")
        path = bundle / "fh.svg"
        _save(plt, fig, path)
        written.append(path)
    return written
