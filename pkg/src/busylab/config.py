"""Experiment configuration: one YAML document drives every run.

Strictly validated: unknown keys anywhere are rejected, numbers must be
decimal scalars, and the perturbation-stability condition
lambda + max(eps)*sup|p| < mu is checked up front.  Nothing outside the
config (and the --seed/--replications CLI overrides, which are folded into
the effective config before hashing) influences the numerics, so the
sha256 of the effective config identifies a run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
import yaml

from .environment import MarkovEnv
from .exact import QueueParams

__all__ = ["ExperimentConfig", "load_config", "ConfigError"]

_TOP_KEYS = {"experiment", "seed", "replications", "output_path",
             "queue", "environment", "epsilons", "alphas"}
_QUEUE_KEYS = {"lambda", "mu"}
_ENV_KEYS = {"generator", "p", "alpha"}

EXPERIMENTS = ("validate-baseline", "coeffs", "eps-sweep", "fast-slow",
               "special-cases")


class ConfigError(ValueError):
    pass


def _require_keys(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def _num(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a decimal number, got {value!r}")
    return float(value)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str | None
    seed: int
    replications: int
    output_path: str | None
    queue: QueueParams
    env: MarkovEnv
    epsilons: tuple
    alphas: tuple
    effective: dict            # the canonical post-override document

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.effective, sort_keys=True,
                          separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def env_at(self, alpha: float) -> MarkovEnv:
        """The configured environment with its time scale replaced."""
        return MarkovEnv(self.env.generator, self.env.p, alpha=alpha)


def _build(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    _require_keys(doc, _TOP_KEYS, "top level")
    for key in ("queue", "environment", "seed", "replications"):
        if key not in doc:
            raise ConfigError(f"missing required key {key!r}")

    experiment = doc.get("experiment")
    if experiment is not None and experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment tag {experiment!r}; "
                          f"one of {EXPERIMENTS}")

    seed = doc["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must fit in 64 bits")

    reps = doc["replications"]
    if isinstance(reps, bool) or not isinstance(reps, int) or reps <= 0:
        raise ConfigError("replications must be a positive integer")

    qd = doc["queue"]
    if not isinstance(qd, dict):
        raise ConfigError("queue must be a mapping")
    _require_keys(qd, _QUEUE_KEYS, "queue")
    if _QUEUE_KEYS - set(qd):
        raise ConfigError("queue needs both lambda and mu")
    try:
        queue = QueueParams(lam=_num(qd["lambda"], "queue.lambda"),
                            mu=_num(qd["mu"], "queue.mu"))
    except ValueError as exc:
        raise ConfigError(f"queue rejected: {exc}") from exc

    ed = doc["environment"]
    if not isinstance(ed, dict):
        raise ConfigError("environment must be a mapping")
    _require_keys(ed, _ENV_KEYS, "environment")
    if {"generator", "p"} - set(ed):
        raise ConfigError("environment needs generator rows and p values")
    gen = ed["generator"]
    if not isinstance(gen, list) or not all(isinstance(r, list) for r in gen):
        raise ConfigError("environment.generator must be a list of rows")
    rows = [[_num(v, "environment.generator") for v in r] for r in gen]
    pvals = ed["p"]
    if not isinstance(pvals, list):
        raise ConfigError("environment.p must be a list")
    p = [_num(v, "environment.p") for v in pvals]
    alpha = _num(ed.get("alpha", 1.0), "environment.alpha")
    try:
        env = MarkovEnv(np.array(rows), np.array(p), alpha=alpha)
    except ValueError as exc:
        raise ConfigError(f"environment rejected: {exc}") from exc

    eps = doc.get("epsilons", [])
    if not isinstance(eps, list) or any(
            isinstance(e, bool) or not isinstance(e, (int, float)) or e < 0
            for e in eps):
        raise ConfigError("epsilons must be a list of nonnegative numbers")
    epsilons = tuple(float(e) for e in eps)
    if epsilons:
        try:
            queue.require_perturbation_stable(env, max(epsilons))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    alphas = doc.get("alphas", [])
    if not isinstance(alphas, list) or any(
            isinstance(a, bool) or not isinstance(a, (int, float)) or a < 0
            for a in alphas):
        raise ConfigError("alphas must be a list of nonnegative numbers")

    return ExperimentConfig(
        experiment=experiment,
        seed=seed,
        replications=reps,
        output_path=doc.get("output_path"),
        queue=queue,
        env=env,
        epsilons=epsilons,
        alphas=tuple(float(a) for a in alphas),
        effective=doc,
    )


def load_config(path: str, seed: int | None = None,
                replications: int | None = None) -> ExperimentConfig:
    """Parse and validate a YAML config; fold in any CLI overrides."""
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    if doc is None:
        raise ConfigError(f"{path} is empty")
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    doc = dict(doc)
    if seed is not None:
        doc["seed"] = int(seed)
    if replications is not None:
        doc["replications"] = int(replications)
    return _build(doc)
