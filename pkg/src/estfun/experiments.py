"""Build Experiments from declarative configuration documents."""
from __future__ import annotations

import re
import sys
from dataclasses import fields
from typing import Any, Optional

from estfun import asymptotics as asy
from estfun.catalog import ESTIMATOR_IDS, SDE_MODELS, build_estimator
from estfun.mc import Experiment, ergodic_schedule, fixed_horizon_schedule
from estfun.simulate import (
    EULER_SUBSTEPS,
    AR_BURN_IN,
    simulate_ar,
    simulate_ou_exact,
    simulate_ou_longitudinal,
    simulate_sde_euler,
)
from estfun.solver import SolverConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


MODEL_KEYS = {
    "ar": {"family", "coeffs", "noise_sd", "burn_in"},
    "ou_exact": {"family", "theta", "sigma", "x0"},
    "sde_euler": {"family", "sde", "alpha", "beta", "substeps", "x0"},
    "ou_longitudinal": {"family", "theta", "sigma", "m"},
}
SECTION_KEYS = {
    "model": None,  # depends on family
    "estimator": {"id", "model"},
    "sampling": {"n", "delta", "sizes", "schedule", "horizon"},
    "mc": {"replications", "master_seed", "level", "threads", "name"},
    "solver": {f.name for f in fields(SolverConfig)},
    "limits": {"formula", "quadrature"},
    "output": {"summary", "replications_csv"},
}
REQUIRED_SECTIONS = ("model", "estimator", "sampling", "mc", "limits")
LIMIT_FORMULAS = ("ar1", "ar2_misspec", "ou_euler", "fixed_T_constant", "longitudinal_ou", "ergodic_quadrature")
SCHEDULES = ("ergodic", "fixed_T")


def _locate(text: str, section: str, key: Optional[str] = None) -> Optional[int]:
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return lineno
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return lineno
    return None


def load_config(path) -> tuple[dict, str]:
    with open(path, "rb") as fh:
        raw = fh.read()
    text = raw.decode("utf-8")
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"invalid config syntax: {exc}", int(m.group(1)) if m else None) from None
    return doc, text


def validate_config(doc: dict, text: str = "") -> None:
    """Exhaustive schema check; raises ConfigError naming the offending key."""
    for name in doc:
        if name not in SECTION_KEYS:
            raise ConfigError(f"unknown section [{name}]", _locate(text, name))
        if not isinstance(doc[name], dict):
            raise ConfigError(f"[{name}] must be a section", _locate(text, name))
    for name in REQUIRED_SECTIONS:
        if name not in doc:
            raise ConfigError(f"missing section [{name}]")

    family = doc["model"].get("family")
    if family not in MODEL_KEYS:
        raise ConfigError(
            f"unknown model.family {family!r}; choose from {', '.join(MODEL_KEYS)}", _locate(text, "model", "family")
        )
    allowed = {"model": MODEL_KEYS[family], **{k: v for k, v in SECTION_KEYS.items() if k != "model"}}
    for section, body in doc.items():
        for key in body:
            if key not in allowed[section]:
                raise ConfigError(f"unknown key {section}.{key}", _locate(text, section, key))

    est = doc["estimator"].get("id")
    if est not in ESTIMATOR_IDS:
        raise ConfigError(
            f"unknown estimator.id {est!r}; choose from {', '.join(ESTIMATOR_IDS)}", _locate(text, "estimator", "id")
        )
    sde = doc["estimator"].get("model")
    if sde is not None and sde not in SDE_MODELS:
        raise ConfigError(f"unknown estimator.model {sde!r}", _locate(text, "estimator", "model"))
    if family == "sde_euler" and doc["model"].get("sde", "ou") not in SDE_MODELS:
        raise ConfigError(f"unknown model.sde {doc['model']['sde']!r}", _locate(text, "model", "sde"))

    lim = doc["limits"]
    if ("formula" in lim) == bool(lim.get("quadrature", False)):
        raise ConfigError("[limits] needs exactly one of formula = <id> or quadrature = true", _locate(text, "limits"))
    if "formula" in lim and lim["formula"] not in LIMIT_FORMULAS:
        raise ConfigError(
            f"unknown limits.formula {lim['formula']!r}; choose from {', '.join(LIMIT_FORMULAS)}",
            _locate(text, "limits", "formula"),
        )

    samp = doc["sampling"]
    if "schedule" in samp and samp["schedule"] not in SCHEDULES:
        raise ConfigError(f"unknown sampling.schedule {samp['schedule']!r}", _locate(text, "sampling", "schedule"))
    if "sizes" not in samp and "n" not in samp:
        raise ConfigError("[sampling] needs sizes = [[n, delta], ...] or n = [...]", _locate(text, "sampling"))

    mc = doc["mc"]
    for key in ("replications", "master_seed"):
        if key not in mc:
            raise ConfigError(f"missing mc.{key}", _locate(text, "mc"))
    if "solver" in doc:
        try:
            SolverConfig(**doc["solver"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid [solver]: {exc}", _locate(text, "solver")) from None


def _sizes(samp: dict) -> tuple[tuple[int, float], ...]:
    if "sizes" in samp:
        return tuple((int(n), float(d)) for n, d in samp["sizes"])
    ns = [int(n) for n in samp["n"]]
    sched = samp.get("schedule")
    if sched == "ergodic":
        return ergodic_schedule(ns)
    if sched == "fixed_T":
        return fixed_horizon_schedule(ns, float(samp.get("horizon", 1.0)))
    delta = samp.get("delta", 0.0)
    deltas = delta if isinstance(delta, list) else [delta] * len(ns)
    if len(deltas) != len(ns):
        raise ConfigError("sampling.delta list must match sampling.n")
    return tuple((n, float(d)) for n, d in zip(ns, deltas))


def _simulator(model: dict):
    fam = model["family"]
    if fam == "ar":
        coeffs = list(model["coeffs"])
        sd = float(model.get("noise_sd", 1.0))
        burn = int(model.get("burn_in", AR_BURN_IN))
        return lambda n, delta, rng: simulate_ar(coeffs, sd, n, rng, burn_in=burn)
    if fam == "ou_exact":
        theta, sigma = float(model["theta"]), float(model.get("sigma", 1.0))
        x0 = model.get("x0", 0.0)
        x0 = None if x0 == "stationary" else float(x0)
        return lambda n, delta, rng: simulate_ou_exact(theta, sigma, delta, n, rng, x0=x0)
    if fam == "sde_euler":
        sde = SDE_MODELS[model.get("sde", "ou")](float(model.get("x0", 0.0)))
        theta = (float(model.get("alpha", 0.0)), float(model["beta"]))
        sub = int(model.get("substeps", EULER_SUBSTEPS))
        return lambda n, delta, rng: simulate_sde_euler(sde, theta, delta, n, rng, substeps=sub)
    if fam == "ou_longitudinal":
        theta, sigma, m = float(model["theta"]), float(model.get("sigma", 1.0)), int(model["m"])
        return lambda n, delta, rng: simulate_ou_longitudinal(theta, sigma, delta, m, n, rng)
    raise ConfigError(f"unknown model family {fam!r}")


def _theta0(model: dict, est_id: str) -> list[float]:
    fam = model["family"]
    if fam == "ar":
        return [float(model["coeffs"][0])]
    if fam == "sde_euler":
        if est_id == "hf_ergodic":
            return [float(model.get("alpha", 0.0)), float(model["beta"])]
        return [float(model["beta"])]
    if fam == "ou_exact" and est_id == "hf_ergodic":
        return [float(model["theta"]), float(model.get("sigma", 1.0))]
    return [float(model["theta"])]


def _limit(doc: dict):
    model, lim = doc["model"], doc["limits"]
    est_id = doc["estimator"]["id"]
    if lim.get("quadrature"):
        theta0 = _theta0(model, "hf_ergodic")
        spec = asy.limit_ergodic_quadrature(SDE_MODELS[doc["estimator"].get("model", "ou")](), theta0)
        return spec
    formula = lim["formula"]
    try:
        if formula == "ar1":
            return asy.limit_ar1(float(model["coeffs"][0]))
        if formula == "ar2_misspec":
            t1, t2 = (float(v) for v in model["coeffs"])
            return asy.limit_ar2_misspec(t1, t2)
        if formula == "ou_euler":
            theta0 = float(model["theta"])
            return lambda n, delta: asy.limit_ou_euler(theta0, delta)
        if formula == "fixed_T_constant":
            return asy.limit_fixed_T_constant(_theta0(model, est_id)[-1])
        if formula == "longitudinal_ou":
            theta0, m = float(model["theta"]), int(model["m"])
            return lambda n, delta: asy.limit_longitudinal_ou(theta0, delta, m)
        if formula == "ergodic_quadrature":
            return asy.limit_ergodic_quadrature(SDE_MODELS["ou"](), _theta0(model, "hf_ergodic"))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"limits.formula {formula!r} does not fit model parameters: {exc}") from None
    raise ConfigError(f"unknown limits.formula {formula!r}")


def experiment_from_config(doc: dict, text: str = "", threads: Optional[int] = None, seed: Optional[int] = None) -> Experiment:
    validate_config(doc, text)
    est_id = doc["estimator"]["id"]
    sde_name = doc["estimator"].get("model", "ou")
    sizes = _sizes(doc["sampling"])
    for n, delta in sizes:
        build_estimator(est_id, delta=delta if delta > 0 else None, model=sde_name)
    mc: dict[str, Any] = doc["mc"]

    def estimator(delta):
        return build_estimator(est_id, delta=delta if delta > 0 else None, model=sde_name)

    return Experiment(
        name=str(mc.get("name", est_id)),
        simulate=_simulator(doc["model"]),
        estimator=estimator,
        sizes=sizes,
        replications=int(mc["replications"]),
        master_seed=int(seed if seed is not None else mc["master_seed"]),
        limit=_limit(doc),
        solver=SolverConfig(**doc.get("solver", {})),
        level=float(mc.get("level", 0.95)),
        threads=int(threads if threads is not None else mc.get("threads", 1)),
        theta0=_theta0(doc["model"], est_id),
    )
