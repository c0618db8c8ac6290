"""Batch driver: `riccatilab <subcommand> --seed N [--config PATH] [--out DIR] [--set a.b=v ...]`.

Every run writes its artifacts plus manifest.json (config, its hash, seed,
library versions, summary statistics, and a sha256 for every file) into
the output directory. Identical config and seed give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger("riccatilab")

EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2


# ---------------------------------------------------------------------------
# configuration


@dataclass
class LyapunovBudget:
    T: float = 2000.0
    ensemble: int = 100
    n_boot: int = 1000
    attraction_frames: int = 200
    attraction_t_max: float = 12.0


@dataclass
class RayBudget:
    n: int = 1000
    T: float = 60.0
    tail: float = 10.0
    tol: float = 1e-4
    sigma_tol: float = 1e-6
    base: list = field(default_factory=lambda: [0.0, 1.0])
    n_sections: int = 3


@dataclass
class BrownianBudget:
    exit_paths: int = 10_000
    exit_eps: float = 1e-4
    exit_h: float = 1e-3
    n_paths: int = 2000
    T: float = 200.0
    h: float = 0.02
    dump_paths: int = 5


@dataclass
class MeasuresBudget:
    n_rays: int = 10_000
    ray_T: float = 60.0
    n_paths: int = 10_000
    bm_T: float = 200.0
    bm_h: float = 0.02
    grid_size: int = 2048
    n_sigma: int = 10_000
    bins: int = 256
    n_boot: int = 500
    limit_word_length: int = 8
    base: list = field(default_factory=lambda: [0.0, 1.0])


@dataclass
class IntegrabilityBudget:
    y0: float = 10.0
    resolution: int = 64
    Y_max: float = 1e6
    Xi_max: float = 1e6
    n_mc: int = 100_000
    levels: int = 14
    lemma_samples: int = 10_000


@dataclass
class Budgets:
    lyapunov: LyapunovBudget = field(default_factory=LyapunovBudget)
    ray: RayBudget = field(default_factory=RayBudget)
    brownian: BrownianBudget = field(default_factory=BrownianBudget)
    measures: MeasuresBudget = field(default_factory=MeasuresBudget)
    integrability: IntegrabilityBudget = field(default_factory=IntegrabilityBudget)


@dataclass
class RunConfig:
    representation: str = "fuchsian"
    family_a: list | None = None  # [re, im]
    model: str | None = None
    seed: int | None = None
    out: str = "runs/out"
    force: bool = False
    budgets: Budgets = field(default_factory=Budgets)

    def validate(self):
        if self.seed is None:
            raise ValueError("a seed is mandatory (--seed or config 'seed')")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        for path, value in _leaves(dataclasses.asdict(self.budgets), "budgets"):
            if isinstance(value, (int, float)) and not isinstance(value, bool) and value <= 0:
                if not path.endswith("base"):
                    raise ValueError(f"budget {path} must be positive, got {value}")

    @property
    def family_parameter(self):
        if self.family_a is None:
            return None
        if isinstance(self.family_a, str):
            return complex(self.family_a.replace("i", "j"))
        if isinstance(self.family_a, (int, float)):
            return complex(self.family_a)
        re, im = self.family_a
        return complex(re, im)

    def canonical(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("out")
        return d


def _leaves(d, prefix):
    for k, v in d.items():
        p = f"{prefix}.{k}"
        if isinstance(v, dict):
            yield from _leaves(v, p)
        elif isinstance(v, list) and p.endswith("base"):
            continue
        else:
            yield p, v


def _build(cls, data):
    if not dataclasses.is_dataclass(cls):
        return data
    kw = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for k, v in (data or {}).items():
        if k not in names:
            raise ValueError(f"unknown config key {k!r} in {cls.__name__}")
        f = names[k]
        sub = f.default_factory if f.default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub):
            kw[k] = _build(sub, v)
        elif isinstance(v, dict) and sub is not None and dataclasses.is_dataclass(sub()):
            kw[k] = _build(type(sub()), v)
        else:
            kw[k] = v
    return cls(**kw)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_dotted(d: dict, path: str, value):
    keys = path.split(".")
    cur = d
    for k in keys[:-1]:
        if k not in cur or not isinstance(cur[k], dict):
            raise ValueError(f"--set path {path!r} does not name a config leaf")
        cur = cur[k]
    if keys[-1] not in cur:
        raise ValueError(f"--set path {path!r} does not name a config leaf")
    cur[keys[-1]] = value


def load_config(path=None, overrides=(), seed=None, out=None, force=False) -> RunConfig:
    base = dataclasses.asdict(RunConfig())
    if path:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        _merge(base, doc)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        set_dotted(base, k, _parse_value(v))
    if seed is not None:
        base["seed"] = seed
    if out is not None:
        base["out"] = out
    if force:
        base["force"] = True
    cfg = _build(RunConfig, base)
    cfg.validate()
    return cfg


def _merge(dst, src):
    for k, v in src.items():
        if k not in dst:
            raise ValueError(f"unknown config key {k!r}")
        if isinstance(v, dict) and isinstance(dst[k], dict):
            _merge(dst[k], v)
        else:
            dst[k] = v


# ---------------------------------------------------------------------------
# output plumbing


def jsonable(x):
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if np.isfinite(v) else str(v)
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if dataclasses.is_dataclass(x):
        return jsonable(dataclasses.asdict(x))
    return x


class Run:
    """Collects artifacts for one subcommand and writes the manifest."""

    def __init__(self, command, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.out = cfg.out
        os.makedirs(self.out, exist_ok=True)
        self.files = []
        self.summary = {}
        seq = np.random.SeedSequence(cfg.seed)
        self._streams = iter(seq.spawn(64))

    def rng(self):
        """Independent stream per pipeline, fixed by the seed and call order."""
        return np.random.default_rng(next(self._streams))

    def _path(self, name):
        self.files.append(name)
        return os.path.join(self.out, name)

    def write_json(self, name, doc):
        with open(self._path(name), "w", encoding="utf-8") as fh:
            json.dump(jsonable(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, name, header, rows):
        with open(self._path(name), "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([f"{v:.17g}" if isinstance(v, (float, np.floating)) else v for v in r])

    def svg_path(self, name):
        return self._path(name)

    def finish(self, status="ok", reason=None):
        if status != "ok":
            with open(self._path("FAILED"), "w", encoding="utf-8") as fh:
                fh.write(f"{reason}\n")
        entries = []
        for name in self.files:
            with open(os.path.join(self.out, name), "rb") as fh:
                entries.append({"path": name, "sha256": hashlib.sha256(fh.read()).hexdigest()})
        canon = json.dumps(jsonable(self.cfg.canonical()), sort_keys=True)
        manifest = {
            "command": self.command,
            "status": status,
            "reason": reason,
            "seed": self.cfg.seed,
            "config": self.cfg.canonical(),
            "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
            "versions": _versions(),
            "summary": self.summary,
            "files": entries,
        }
        with open(os.path.join(self.out, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(jsonable(manifest), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return manifest


def _versions():
    import scipy

    from . import __version__

    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__, "riccatilab": __version__}


# ---------------------------------------------------------------------------
# subcommands


class ValidationFailure(Exception):
    def __init__(self, reasons):
        super().__init__("; ".join(reasons))
        self.reasons = reasons


def _representation(cfg):
    from .riccati import load_representation

    try:
        return load_representation(cfg.representation, cfg.family_parameter)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValidationFailure([f"constructor precondition: {exc}"]) from exc


def _require(rep, cfg):
    from .riccati import HypothesisError

    try:
        rep.require_hypotheses(False)
    except HypothesisError as exc:
        if not cfg.force:
            raise ValidationFailure([str(exc)]) from exc
        log.warning("hypotheses fail (%s); continuing because of --force", exc)
        return False
    return True


def validation_report(rep, rng):
    from .surface import validate_model

    reasons = []
    model_report = validate_model(rep.model, rng)
    reasons += model_report["reasons"]
    par = rep.parabolic_report
    for c in par.cusps:
        if not c.parabolic:
            reasons.append(f"peripheral trace {c.trace.real:.6g}{c.trace.imag:+.6g}i at {c.word} is not +-2")
    verdict = rep.elementary_verdict
    if verdict != "non-elementary":
        reasons.append(f"elementarity: {verdict}")
    return {
        "ok": not reasons,
        "reasons": reasons,
        "model": model_report,
        "representation": rep.to_json(),
    }


def cmd_validate(run: Run):
    rep = _representation(run.cfg)
    rep_report = validation_report(rep, run.rng())
    run.write_json("validate.json", rep_report)
    run.summary = {"ok": rep_report["ok"], "reasons": rep_report["reasons"]}
    if not rep_report["ok"]:
        raise ValidationFailure(rep_report["reasons"])


def cmd_lyapunov(run: Run):
    from .lyapunov import attraction_slope, estimate_top_exponent
    from .surface import sample_liouville_frames
    from .svg import series_plot

    b = run.cfg.budgets.lyapunov
    rep = _representation(run.cfg)
    hypotheses = _require(rep, run.cfg)
    est = estimate_top_exponent(rep, rep.model, b.T, b.ensemble, run.rng(), force=True, n_boot=b.n_boot)
    rng = run.rng()
    mean = est.series.mean(axis=0)
    se = est.series.std(axis=0, ddof=1) / np.sqrt(est.ensemble)
    run.write_csv("exponent_series.csv", ["t", "mean_log_norm_over_t", "stderr"], zip(est.times, mean, se))
    series_plot(run.svg_path("exponent_series.svg"), est.times, {"(1/t) log|A_t|": mean}, "top exponent")
    run.summary = {**est.summary(), "representation": rep.name}
    if hypotheses and est.lambda_plus > 3 * est.stderr:
        frames = sample_liouville_frames(rep.model, b.attraction_frames, rng)
        fit = attraction_slope(rep, rep.model, frames, 2.0, b.attraction_t_max, rng)
        run.write_csv("attraction.csv", ["t", "mean_log_distance"], zip(fit.times, fit.mean_log_distance))
        series_plot(run.svg_path("attraction.svg"), fit.times, {"mean log distance": fit.mean_log_distance}, "attraction")
        run.summary.update(attraction_slope=fit.slope, attraction_target=-2 * est.lambda_plus)
    else:
        # forced study run: no Oseledets gap to measure an attraction rate against
        run.summary.update(attraction_slope=None, attraction_target=None)
    run.write_json("lyapunov.json", run.summary)


def _base(b):
    re, im = b
    return complex(re, im)


def cmd_ray(run: Run):
    from .developed import GlobalSection, ray_limits, section_independence
    from .hyperbolic import frames_from_point_angle
    from .lyapunov import sigma_minus_frames
    from .projective import chordal_pairs, to_xyz
    from .svg import sphere_scatter

    b = run.cfg.budgets.ray
    rep = _representation(run.cfg)
    _require(rep, run.cfg)
    model = rep.model
    rng = run.rng()
    p = _base(b.base)
    theta = np.sort(rng.uniform(0, 2 * np.pi, b.n))
    F = frames_from_point_angle(np.full(b.n, p), theta)
    section = GlobalSection.for_representation(rep)
    lim, conv, osc = ray_limits(rep, model, section, F, b.T, b.tail, tol=b.tol)
    sm = sigma_minus_frames(rep, model, F, tol=b.sigma_tol, strict=False)
    err = chordal_pairs(lim, sm.points)
    sections = [section] + [GlobalSection.constant(c) for c in (0.3 + 0.7j, -2.0 + 0.5j, 5j)][: b.n_sections - 1]
    ind = section_independence(rep, model, F, sections, b.T, b.tol)
    xyz = to_xyz(lim)
    run.write_csv(
        "ray_limits.csv",
        ["theta", "x", "y", "z", "converged", "tail_oscillation", "sigma_minus_distance"],
        [(t, *v, int(c), o, e) for t, v, c, o, e in zip(theta, xyz, conv, osc, err)],
    )
    sphere_scatter(run.svg_path("ray_limits.svg"), {"ray limits": xyz[conv], "sigma-": to_xyz(sm.points)}, rep.name)
    run.summary = {
        "representation": rep.name,
        "converged_fraction": float(conv.mean()),
        "sigma_minus_match_fraction": float(np.mean(err[conv] < 1e-3)) if conv.any() else 0.0,
        "sigma_minus_p95": float(np.quantile(err[conv], 0.95)) if conv.any() else None,
        "section_independence": ind.to_json(),
    }
    run.write_json("ray.json", run.summary)


def cmd_brownian(run: Run):
    from .brownian import (
        cesaro_limit,
        developed_brownian,
        disc_angle_uniformity,
        exit_law,
        ks_bootstrap_sigma,
        simulate_bm,
    )
    from .developed import GlobalSection
    from .projective import to_xyz
    from .svg import sphere_scatter

    b = run.cfg.budgets.brownian
    rep = _representation(run.cfg)
    _require(rep, run.cfg)
    model = rep.model
    ex = exit_law(1j, b.exit_eps, b.exit_h, run.rng(), b.exit_paths)
    ex_half = exit_law(1j, b.exit_eps, b.exit_h / 2, run.rng(), b.exit_paths)
    rng = run.rng()
    sig = [ks_bootstrap_sigma(e.exit_x, 1j, 200, rng) for e in (ex, ex_half)]
    path = simulate_bm(model, 1j, b.T, b.h, run.rng(), b.n_paths, sample_dt=0.5)
    x = developed_brownian(rep, model, GlobalSection.for_representation(rep), path)
    res = cesaro_limit(x, max(1, x.shape[1] // 10))
    lengths = path.word_lengths(model)
    rows = []
    for i in range(min(b.dump_paths, path.n_paths)):
        for j, t in enumerate(path.times):
            z = path.positions[i, j]
            rows.append((i, t, z.real, z.imag, int(lengths[i, j])))
    run.write_csv("paths.csv", ["path", "t", "x", "y", "word_length"], rows)
    run.write_csv("exit_points.csv", ["x"], ((v,) for v in ex.exit_x))
    sphere_scatter(run.svg_path("cesaro.svg"), {"e(omega)": to_xyz(res.e[res.valid])}, rep.name)
    run.summary = {
        "representation": rep.name,
        "exit_ks": ex.ks,
        "exit_ks_pvalue": ex.ks_pvalue,
        "exit_ks_half_step": ex_half.ks,
        "exit_ks_bootstrap_sigma": sig,
        "exit_halving_stable": bool(abs(ex.ks - ex_half.ks) <= 2 * float(np.hypot(*sig))),
        "disc_angle_pvalue": disc_angle_uniformity(ex.exit_x),
        "rejections": ex.rejections,
        "cesaro_valid_fraction": float(res.valid.mean()),
        "n_events": path.n_events,
    }
    run.write_json("brownian.json", run.summary)


def cmd_measures(run: Run, task="theorem-c"):
    from .measures import SuiteBudgets, SuiteError, limit_set_estimate, theorem_c_suite
    from .svg import sphere_scatter

    b = run.cfg.budgets.measures
    rep = _representation(run.cfg)
    _require(rep, run.cfg)
    if task == "limit-set":
        cloud = limit_set_estimate(rep, b.limit_word_length)
        run.write_csv("limit_set.csv", ["x", "y", "z"], cloud)
        sphere_scatter(run.svg_path("limit_set.svg"), {"limit set": cloud}, rep.name, max_points=20000)
        run.summary = {"representation": rep.name, "points": len(cloud)}
        run.write_json("limit_set.json", run.summary)
        return
    sb = SuiteBudgets(
        n_rays=b.n_rays,
        ray_T=b.ray_T,
        n_paths=b.n_paths,
        bm_T=b.bm_T,
        bm_h=b.bm_h,
        grid_size=b.grid_size,
        n_sigma=b.n_sigma,
        bins=b.bins,
        n_boot=b.n_boot,
        limit_word_length=b.limit_word_length,
    )
    try:
        rep_ = theorem_c_suite(rep, rep.model, _base(b.base), sb, run.rng(), force=True)
    except SuiteError as exc:
        run.write_json("theorem_c_partial.json", {k: v.to_json() for k, v in exc.partial["measures"].items()})
        raise
    doc = rep_.to_json()
    run.write_json("theorem_c.json", doc)
    for name, m in rep_.measures.items():
        run.write_csv(f"bins_{name}.csv", ["bin", "weight"], enumerate(m.weights))
    sphere_scatter(
        run.svg_path("theorem_c_overlay.svg"),
        {"geodesic limits": rep_.measures["geodesic_limits"].samples, "brownian cesaro": rep_.measures["brownian_cesaro"].samples},
        rep.name,
    )
    run.summary = {
        "representation": rep.name,
        "pass": rep_.passed,
        "pairwise": [c.to_json() for c in rep_.comparisons[:6]],
        "sigma_consistency": rep_.comparisons[6].to_json(),
        "checks_ok": all(v["ok"] for v in rep_.checks.values()),
    }


def cmd_integrability(run: Run):
    from .integrability import (
        ModelCuspConfig,
        fitted_slice_constant,
        lemma_checks,
        log_puncture_model,
        truncated_liouville_integral,
    )
    from .svg import series_plot

    b = run.cfg.budgets.integrability
    cfg = ModelCuspConfig(b.y0, b.resolution)
    fit = fitted_slice_constant(cfg)
    series = truncated_liouville_integral(cfg, b.Y_max, b.Xi_max, b.n_mc, run.rng(), levels=b.levels)
    control = truncated_liouville_integral(
        cfg, b.Y_max, b.Xi_max, b.n_mc, run.rng(), develop=log_puncture_model, levels=b.levels
    )
    lemmas = lemma_checks(cfg, run.rng(), b.lemma_samples)
    head, rows = series.rows()
    run.write_csv("truncation_series.csv", head, rows)
    head, rows = control.rows()
    run.write_csv("control_series.csv", head, rows)
    series_plot(
        run.svg_path("truncation_series.svg"),
        np.log2(series.Y),
        {"inclusion": series.estimates, "inclusion + 1/q (control)": control.estimates},
        "truncated integral vs log2 Y",
    )
    run.summary = {
        "y0": cfg.y0,
        "slice_constant": fit.max_ratio,
        "slice_constant_growth": fit.growth,
        "slice_constant_stable": fit.stable,
        "slice_ratios": fit.ratios,
        "truncation_cauchy_3sigma": series.cauchy_3sigma(),
        "truncation_final": float(series.estimates[-1]),
        "truncation_final_stderr": float(series.stderr[-1]),
        "control_final": float(control.estimates[-1]),
        "infinite_events": series.infinite_events,
        "lemmas": lemmas.to_json(),
    }
    run.write_json("integrability.json", run.summary)


COMMANDS = {
    "validate": cmd_validate,
    "lyapunov": cmd_lyapunov,
    "ray": cmd_ray,
    "brownian": cmd_brownian,
    "measures": cmd_measures,
    "integrability": cmd_integrability,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="riccatilab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="mandatory unless set in the config")
        p.add_argument("--out", help="output directory")
        p.add_argument("--force", action="store_true", help="run even when the hypotheses fail")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config leaf")
        p.add_argument("--rep", help="shortcut for --set representation=...")
        p.add_argument("--a", help="shortcut for the family parameter, e.g. 2+0.4i")
        if name == "measures":
            p.add_argument("task", nargs="?", default="theorem-c", choices=["theorem-c", "limit-set"])
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    if args.rep:
        overrides.append(f"representation={json.dumps(args.rep)}")
    if args.a:
        overrides.append(f"family_a={json.dumps(args.a)}")
    try:
        cfg = load_config(args.config, overrides, args.seed, args.out, args.force)
    except (ValueError, OSError, TypeError) as exc:
        print(json.dumps({"status": "invalid", "reasons": [str(exc)]}))
        return EXIT_INVALID
    run = Run(args.command, cfg)
    try:
        if args.command == "measures":
            cmd_measures(run, args.task)
        else:
            COMMANDS[args.command](run)
    except ValidationFailure as exc:
        run.finish("invalid", "; ".join(exc.reasons))
        print(json.dumps({"status": "invalid", "reasons": exc.reasons}))
        return EXIT_INVALID
    except Exception as exc:  # sub-pipeline failure: keep partial artifacts
        log.exception("run failed")
        run.finish("failed", f"{type(exc).__name__}: {exc}")
        return EXIT_FAILED
    manifest = run.finish()
    print(json.dumps({"status": "ok", "out": cfg.out, "summary": jsonable(run.summary)}, sort_keys=True)[:2000])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
