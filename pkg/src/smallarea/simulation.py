"""Seeded Monte Carlo study of variance and MSE estimators.

Every replicate draws from its own Philox stream keyed by
``(seed, scenario, replicate)``, so results never depend on how replicates
are scheduled across worker processes.  Normal variates are produced by the
inverse-CDF method from 53-bit uniforms.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtri

from . import __version__
from .adjustment import factor_yl
from .exceptions import DomainError, SimulationAbortedError, SmallAreaError, TooFewAreasError
from .model import Dataset
from .mse import MseForm, factor_from_c, g_terms, mse_values
from .prediction import eblup
from .variance import METHOD_NAMES, VarianceMethod, estimate_per_area, estimate_variance

DEFAULT_B_TARGETS = (0.1, 0.3, 0.5, 0.7, 0.9)
MAX_FAILURE_RATE = 0.01
TABLE1_LABELS = {"reml": "RE", "nre": "NRE", "pml": "PML", "ll": "LL", "yl": "YL"}
TABLE2_LABELS = {"naive": "Naive.RE", "dl": "DL.RE", "naive-n": "Naive.N"}


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo design.

    Give either ``b_targets`` (balanced designs only, ``A = D (1 - B) / B``)
    or ``a_true``.  ``x`` defaults to an intercept column and ``beta`` to 0.
    """

    m: int = 15
    d: tuple = (1.0,)
    x: Optional[tuple] = None
    beta: tuple = (0.0,)
    a_true: Optional[tuple] = None
    b_targets: Optional[tuple] = DEFAULT_B_TARGETS
    replications: int = 10_000
    seed: int = 20160901
    reml_zero_floor: float = 0.01
    methods: tuple = ("reml", "nre")
    mse_forms: tuple = ("naive", "dl", "naive-n")
    tol: float = 1e-8

    def __post_init__(self):
        for name in ("d", "beta", "methods", "mse_forms"):
            object.__setattr__(self, name, tuple(np.atleast_1d(getattr(self, name)).tolist()))
        if self.x is not None:
            object.__setattr__(self, "x", tuple(tuple(float(v) for v in row) for row in self.x))
        if self.a_true is not None:
            object.__setattr__(self, "a_true", tuple(float(a) for a in np.atleast_1d(self.a_true)))
            object.__setattr__(self, "b_targets", None)
        elif self.b_targets is not None:
            object.__setattr__(self, "b_targets", tuple(float(b) for b in np.atleast_1d(self.b_targets)))
        self.validate()

    def validate(self):
        if self.replications < 1:
            raise DomainError("replications must be >= 1")
        if self.m < 1:
            raise DomainError("m must be >= 1")
        if len(self.d) not in (1, self.m) or any(not v > 0 for v in self.d):
            raise DomainError("d must hold one positive value or m positive values")
        if self.a_true is None and self.b_targets is None:
            raise DomainError("give a_true or b_targets")
        if self.b_targets is not None:
            if len(set(self.d)) != 1:
                raise DomainError("b_targets need a balanced design; give a_true instead")
            if any(not 0.0 < b < 1.0 for b in self.b_targets):
                raise DomainError("B targets must lie in (0, 1)")
        if self.a_true is not None and any(a < 0 for a in self.a_true):
            raise DomainError("a_true must be non-negative")
        unknown = set(self.methods) - set(METHOD_NAMES)
        if unknown:
            raise DomainError(f"unknown methods {sorted(unknown)}")
        forms = [MseForm.from_name(f) for f in self.mse_forms]
        for f in forms:
            need = {"naive": "reml", "dl": "reml", "naive-n": "nre"}.get(f.name)
            if need and need not in self.methods:
                raise DomainError(f"MSE form {f} needs method {need!r}")
        if not self.reml_zero_floor >= 0:
            raise DomainError("reml_zero_floor must be non-negative")

    @classmethod
    def from_dict(cls, raw: dict) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise DomainError(f"unknown config keys {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_json(cls, path, env=None) -> "SimConfig":
        """Read a JSON config; ``SAE_SEED`` in ``env`` overrides the seed."""
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        env = os.environ if env is None else env
        if env.get("SAE_SEED"):
            raw["seed"] = int(env["SAE_SEED"])
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    def design(self) -> Dataset:
        X = np.ones((self.m, 1)) if self.x is None else np.array(self.x, dtype=float)
        d = np.broadcast_to(np.array(self.d, dtype=float), (self.m,))
        if X.shape[1] != len(self.beta):
            raise DomainError("beta length must match the columns of x")
        return Dataset.from_arrays(X, np.zeros(self.m), d)

    def scenarios(self) -> list[tuple[Optional[float], float]]:
        """``(B, A)`` pairs; ``B`` is ``None`` when ``a_true`` is given."""
        if self.a_true is not None:
            return [(None, a) for a in self.a_true]
        d = self.d[0]
        return [(b, d * (1.0 - b) / b) for b in self.b_targets]


def _normals(seed: int, scenario: int, replicate: int, size: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(scenario, replicate))
    bits = np.random.Generator(np.random.Philox(ss)).integers(0, 2**53, size=size, dtype=np.uint64)
    return ndtri((bits.astype(np.float64) + 0.5) * 2.0**-53)


def generate_replicate(config: SimConfig, replicate: int, scenario: int = 0, design: Dataset | None = None):
    """Draw ``theta ~ N(x'beta, A)`` and ``y ~ N(theta, D)`` for one replicate.

    Returns ``(dataset, theta)``.
    """
    design = config.design() if design is None else design
    a = config.scenarios()[scenario][1]
    z = _normals(config.seed, scenario, replicate, 2 * design.m)
    mean = design.X @ np.array(config.beta, dtype=float)
    theta = mean + math.sqrt(a) * z[: design.m]
    y = theta + np.sqrt(design.d) * z[design.m :]
    return design.with_y(y), theta


def _fit_replicate(config, forms, design, scenario, replicate):
    data, theta = generate_replicate(config, replicate, scenario, design)
    out = {}
    for name in config.methods:
        method = VarianceMethod.from_name(name)
        if name == "nre":
            est = estimate_per_area(data, method, tol=config.tol)
            a_raw = a_plug = np.array([e.a_hat for e in est])
        else:
            e = estimate_variance(data, method, tol=config.tol)
            a_raw = np.full(data.m, e.a_hat)
            a_plug = a_raw
            if name == "reml" and e.a_hat == 0.0:
                a_plug = np.full(data.m, config.reml_zero_floor)
            est = e
        pred = eblup(data, _plugged(est, a_plug, data))
        out[f"a:{name}"] = a_raw
        out[f"a_plug:{name}"] = a_plug
        out[f"sqerr:{name}"] = (pred.theta_hat - theta) ** 2
    for form in forms:
        if form.name in ("naive", "dl"):
            a = out["a_plug:reml"]
        elif form.name == "naive-n":
            a = out["a_plug:nre"]
        else:
            a = _general_c_estimates(data, form, config.tol)
            out[f"a:{form}"] = a
            if _is_reml_weight(form.c) and a[0] == 0.0:
                a = np.full(data.m, config.reml_zero_floor)
        out[f"mse:{form}"] = mse_values(data, form, a)
    return out


def _plugged(est, a_plug, data):
    if isinstance(est, list):
        return [replace(e, a_hat=float(a)) for e, a in zip(est, a_plug)]
    return replace(est, a_hat=float(a_plug[0]))


def _is_reml_weight(c) -> bool:
    return not callable(c) and float(c) == 2.0


def _general_c_estimates(data, form, tol):
    c = form.c
    if _is_reml_weight(c):
        return np.full(data.m, estimate_variance(data, "reml", tol=tol).a_hat)
    l_add = factor_yl(data)
    est = estimate_per_area(
        data,
        VarianceMethod.reml(),
        tol=tol,
        factor_for_area=lambda i: factor_from_c(c, float(data.d[i]), l_add, area=i, validate_add=False),
    )
    return np.array([e.a_hat for e in est])


def _run_chunk(args):
    config, scenario, replicates = args
    design = config.design()
    forms = [MseForm.from_name(f) for f in config.mse_forms]
    results = []
    for r in replicates:
        try:
            results.append(_fit_replicate(config, forms, design, scenario, r))
        except (SmallAreaError, FloatingPointError, np.linalg.LinAlgError) as exc:
            results.append({"error": f"{type(exc).__name__}: {exc}"})
    return results


def _run_replicates(config, scenario, workers, chunk=250):
    reps = range(config.replications)
    chunks = [(config, scenario, reps[i : i + chunk]) for i in range(0, len(reps), chunk)]
    if workers <= 1:
        parts = map(_run_chunk, chunks)
        return [r for part in parts for r in part]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return [r for part in pool.map(_run_chunk, chunks) for r in part]


def prb(mean_mse_hat: float, mse_reference: float) -> float:
    """Percent relative bias ``100 (mean_mse_hat - reference) / reference``."""
    if not mse_reference > 0:
        raise DomainError("reference MSE must be positive")
    return 100.0 * (mean_mse_hat - mse_reference) / mse_reference


def _moments(a_hat: np.ndarray, a_true: float) -> dict:
    dev = a_hat - a_true
    n = dev.shape[0]
    sq = dev * dev
    return {
        "mean": float(a_hat.mean()),
        "mean_bias": float(dev.mean()),
        "mean_sq_dev": float(sq.mean()),
        "bias_se": float(dev.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        "msd_se": float(sq.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
    }


def _summarize(config, scenario, b, a_true, results, design):
    ok = [r for r in results if "error" not in r]
    failures = len(results) - len(ok)
    if failures > MAX_FAILURE_RATE * len(results):
        raise SimulationAbortedError(failures, len(results))
    stack = {k: np.stack([r[k] for r in ok]) for k in ok[0]} if ok else {}
    analytic = g_terms(a_true, design)
    analytic_mse = analytic.total(1.0)
    out = {
        "b": b,
        "a_true": a_true,
        "replications": len(results),
        "failures": failures,
        "errors": sorted({r["error"] for r in results if "error" in r})[:5],
        "blup_mse": float(np.mean(analytic.g1 + analytic.g2)),
        "analytic_mse_re": float(analytic_mse.mean()),
        "eblup_mse": {},
        "eblup_mse_by_area": {},
        "variance_moments": {},
        "positive_replicates": {},
        "mse_mean": {},
        "prb": {},
        "prb_by_area": {},
        "prb_analytic": {},
        "mse_positive_replicates": {},
    }
    if not ok:
        return out
    for name in config.methods:
        per_area = stack[f"sqerr:{name}"].mean(axis=0)
        out["eblup_mse"][name] = float(per_area.mean())
        out["eblup_mse_by_area"][name] = per_area.tolist()
        a = stack[f"a:{name}"]
        # pooled methods give one estimate per replicate, per-area ones m
        out["variance_moments"][name] = _moments(a[:, 0] if name != "nre" else a.ravel(), a_true)
        out["positive_replicates"][name] = int(np.sum(np.all(a > 0, axis=1)))
    reference = stack["sqerr:reml"].mean(axis=0) if "reml" in config.methods else None
    for form_name in config.mse_forms:
        form = str(MseForm.from_name(form_name))
        values = stack[f"mse:{form}"]
        means = values.mean(axis=0)
        out["mse_mean"][form] = float(means.mean())
        out["mse_positive_replicates"][form] = int(np.sum(np.all(values > 0, axis=1)))
        out["prb_analytic"][form] = float(np.mean(100.0 * (means - analytic_mse) / analytic_mse))
        if reference is not None and np.all(reference > 0):
            by_area = 100.0 * (means - reference) / reference
            out["prb_by_area"][form] = by_area.tolist()
            out["prb"][form] = float(by_area.mean())
    return out


@dataclass
class SimulationReport:
    config: dict
    scenarios: list
    replications: int
    seed: int
    runtime: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        """Payload for ``report.json``; runtime lives only in the sidecar."""
        return {
            "config": self.config,
            "replications": self.replications,
            "seed": self.seed,
            "scenarios": self.scenarios,
            "version": __version__,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"

    def _column(self, s):
        return repr(s["b"]) if s["b"] is not None else f"A={s['a_true']!r}"

    def table1(self) -> list[list]:
        """Rows ``[method, EBLUP MSE x 100 per scenario...]``."""
        rows = [["method"] + [self._column(s) for s in self.scenarios]]
        for name in self.config["methods"]:
            label = TABLE1_LABELS.get(name, name)
            rows.append([label] + [100.0 * s["eblup_mse"].get(name, math.nan) for s in self.scenarios])
        return rows

    def table2(self) -> list[list]:
        """Rows ``[scenario, PRB per MSE form...]``."""
        forms = [str(MseForm.from_name(f)) for f in self.config["mse_forms"]]
        rows = [["B"] + [TABLE2_LABELS.get(f, f) for f in forms]]
        for s in self.scenarios:
            rows.append([self._column(s)] + [s["prb"].get(f, math.nan) for f in forms])
        return rows

    def write(self, outdir, workers: int = 1) -> dict:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {
            "report": outdir / "report.json",
            "table1": outdir / "table1_mse.csv",
            "table2": outdir / "table2_prb.csv",
            "metadata": outdir / "run_metadata.json",
        }
        paths["report"].write_text(self.to_json(), encoding="utf-8")
        for key, rows in (("table1", self.table1()), ("table2", self.table2())):
            with open(paths[key], "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                for row in rows:
                    writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
        meta = {
            "runtime_seconds": self.runtime,
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "workers": workers,
            "version": __version__,
        }
        paths["metadata"].write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
        return paths

    def summary(self) -> str:
        lines = ["EBLUP MSE x 100"]
        for row in self.table1():
            lines.append("  " + "  ".join(f"{v:>9.2f}" if isinstance(v, float) else f"{v:>9}" for v in row))
        lines.append("PRB of MSE estimators (reference: empirical MSE of EBLUP with REML)")
        for row in self.table2():
            lines.append("  " + "  ".join(f"{v:>9.2f}" if isinstance(v, float) else f"{v:>9}" for v in row))
        return "\n".join(lines)


def run_simulation(config: SimConfig, workers: int = 1) -> SimulationReport:
    """Run every scenario of ``config`` and aggregate in replicate order."""
    start = time.perf_counter()
    design = config.design()
    if "nre" in config.methods and design.m <= design.p + 4:
        raise TooFewAreasError(design.m, design.p + 5)
    scenarios = []
    for k, (b, a_true) in enumerate(config.scenarios()):
        results = _run_replicates(config, k, workers)
        scenarios.append(_summarize(config, k, b, a_true, results, design))
    return SimulationReport(
        config=config.to_dict(),
        scenarios=scenarios,
        replications=config.replications,
        seed=config.seed,
        runtime=time.perf_counter() - start,
    )


def nre_moments(
    config: SimConfig, area_i: int = 0, scenario: int = 0, workers: int = 1, l_add=None
) -> dict:
    """Monte Carlo bias and mean squared deviation of the per-area NRE estimate.

    Compared with ``4 / (tr(V^-2) (A + D_i))`` and ``2 / tr(V^-2)``.
    """
    design = config.design()
    if design.m <= design.p + 4:
        raise TooFewAreasError(design.m, design.p + 5)
    a_true = config.scenarios()[scenario][1]
    args = [(config, scenario, area_i, range(i, min(i + 500, config.replications)))
            for i in range(0, config.replications, 500)]
    if workers <= 1:
        parts = list(map(_nre_chunk, args))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_nre_chunk, args))
    a_hat = np.concatenate(parts)
    tr_v2 = float(np.sum(1.0 / (a_true + design.d) ** 2))
    mom = _moments(a_hat, a_true)
    return {
        "m": design.m,
        "area": area_i,
        "a_true": a_true,
        "replications": int(a_hat.size),
        "empirical_bias": mom["mean_bias"],
        "predicted_bias": 4.0 / (tr_v2 * (a_true + float(design.d[area_i]))),
        "bias_se": mom["bias_se"],
        "empirical_msd": mom["mean_sq_dev"],
        "predicted_msd": 2.0 / tr_v2,
        "msd_se": mom["msd_se"],
        "positivity_rate": float(np.mean(a_hat > 0)),
    }


def _nre_chunk(args):
    config, scenario, area_i, reps = args
    design = config.design()
    method = VarianceMethod.nre(area_i)
    out = np.empty(len(reps))
    for k, r in enumerate(reps):
        data, _ = generate_replicate(config, r, scenario, design)
        out[k] = estimate_variance(data, method, tol=config.tol).a_hat
    return out
