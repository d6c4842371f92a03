"""Experiment configuration: one INI file per experiment.

See ``docs/config.md`` for the full key list. The only environment variable
consulted is ``HYBRID_DISTILL_OUT_DIR``, which overrides ``[run] out_dir``.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..estimator import HybridConfig, PRESETS
from ..exceptions import ConfigError
from ..policy import TabularPolicy, load_policy
from ..returns import REWARD_KINDS, RewardSpec
from ..validation import check_scalar

OUT_DIR_ENV = "HYBRID_DISTILL_OUT_DIR"


@dataclass
class VerifySettings:
    instances: int = 20
    score_instances: int = 100
    kernel_pairs: int = 100
    vocab_size: int = 3
    horizon: int = 3
    fd_step: float = 1e-5
    lambdas: tuple[float, ...] = (0.0, 0.5, 2.0)
    betas: tuple[float, ...] = (0.5, 1.0, 2.0)
    cap: int = 10**6


@dataclass
class BenchSettings:
    vocab_sizes: tuple[int, ...] = (1024, 32768, 128000)
    topk: tuple[int, ...] = (16, 32, 256)
    repeats: int = 20
    float32: bool = True


@dataclass
class ExperimentConfig:
    seed: int = 0
    iterations: int = 100
    prompts: tuple[int, ...] = (0,)
    threads: int = 1
    verification_mode: bool = False
    out_dir: Path = Path("runs/default")
    vocab_size: int = 3
    horizon: int = 2
    eos_token: int | None = None
    student: str = "uniform"
    teachers: tuple[str, ...] = ("random",)
    init_scale: float = 2.0
    hybrid: HybridConfig = field(default_factory=HybridConfig)
    rewards: list[RewardSpec] = field(default_factory=list)
    track_exact: bool = True
    enumeration_cap: int = 10**6
    verify: VerifySettings = field(default_factory=VerifySettings)
    bench: BenchSettings = field(default_factory=BenchSettings)
    source: Path | None = None

    # -- policies ----------------------------------------------------------

    def _policy(self, spec: str, role: int) -> TabularPolicy:
        eos = self.vocab_size - 1 if self.eos_token is None else self.eos_token
        if spec == "uniform":
            return TabularPolicy(self.vocab_size, self.horizon, eos)
        if spec == "random":
            rng = np.random.default_rng([self.seed, role])
            return TabularPolicy.random(self.vocab_size, self.horizon, rng, eos_token=eos,
                                        scale=self.init_scale, prompt_ids=sorted(set(self.prompts)))
        pol = load_policy(self._resolve(spec))
        if (pol.vocab_size, pol.horizon, pol.eos_token) != (self.vocab_size, self.horizon, eos):
            raise ConfigError(f"policy file {spec} does not match [policy] vocab_size/horizon/eos")
        return pol

    def _resolve(self, path: str) -> Path:
        p = Path(path)
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p

    def build_student(self) -> TabularPolicy:
        return self._policy(self.student, 0)

    def build_teachers(self) -> list[TabularPolicy]:
        return [self._policy(spec, i + 1) for i, spec in enumerate(self.teachers)]

    def validate(self) -> "ExperimentConfig":
        check_scalar(self.seed, "seed", lo=0, integer=True, exc=ConfigError)
        check_scalar(self.iterations, "iterations", lo=0, integer=True, exc=ConfigError)
        check_scalar(self.threads, "threads", lo=1, integer=True, exc=ConfigError)
        check_scalar(self.vocab_size, "vocab_size", lo=2, integer=True, exc=ConfigError)
        check_scalar(self.horizon, "horizon", lo=1, integer=True, exc=ConfigError)
        if self.eos_token is not None:
            check_scalar(self.eos_token, "eos", lo=0, hi=self.vocab_size - 1, integer=True, exc=ConfigError)
        if not self.prompts:
            raise ConfigError("[run] prompts must list at least one prompt id")
        if not self.teachers:
            raise ConfigError("[policy] teachers must list at least one teacher")
        for spec in (self.student, *self.teachers):
            if spec not in ("uniform", "random") and not self._resolve(spec).is_file():
                raise ConfigError(f"policy file not found: {self._resolve(spec)}")
        self.hybrid.validate(self.vocab_size, len(self.teachers))
        if self.hybrid.lambda0 > 0 and not self.rewards:
            raise ConfigError("lambda0 > 0 requires at least one [reward.*] section")
        if self.verification_mode and self.threads != 1:
            raise ConfigError("verification_mode requires threads = 1")
        return self


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace(",", " ").split())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _reward_section(name: str, sec: configparser.SectionProxy) -> RewardSpec:
    kind = sec.get("kind")
    if kind not in REWARD_KINDS or kind == "custom":
        raise ConfigError(f"[{name}] kind must be one of constant, target_token_count, exact_match")
    params: dict = {}
    if "value" in sec:
        params["value"] = sec.getfloat("value")
    if "token" in sec:
        params["token"] = sec.getint("token")
    if "target" in sec:
        params["target"] = _ints(sec["target"])
    return RewardSpec(kind, params, weight=sec.getfloat("weight", 1.0))


def load_config(path: str | os.PathLike | None = None, *, text: str | None = None,
                seed: int | None = None, out_dir: str | None = None) -> ExperimentConfig:
    """Parse and validate an experiment config; ``seed``/``out_dir`` override the file."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    source = None
    if path is not None:
        source = Path(path)
        if not source.is_file():
            raise ConfigError(f"config file not found: {source}")
        cp.read(source)
    if text is not None:
        cp.read_string(text)

    known = {"run", "policy", "hybrid", "enumeration", "verify", "bench"}
    for name in cp.sections():
        if name not in known and not name.startswith("reward."):
            raise ConfigError(f"unknown config section [{name}]")

    try:
        cfg = ExperimentConfig(source=source)
        if cp.has_section("run"):
            run = cp["run"]
            cfg.seed = run.getint("seed", cfg.seed)
            cfg.iterations = run.getint("iterations", cfg.iterations)
            cfg.prompts = _ints(run.get("prompts", "0"))
            cfg.threads = run.getint("threads", cfg.threads)
            cfg.verification_mode = run.getboolean("verification_mode", cfg.verification_mode)
            cfg.out_dir = Path(run.get("out_dir", str(cfg.out_dir)))
        if cp.has_section("policy"):
            pol = cp["policy"]
            cfg.vocab_size = pol.getint("vocab_size", cfg.vocab_size)
            cfg.horizon = pol.getint("horizon", cfg.horizon)
            cfg.eos_token = pol.getint("eos", fallback=None)
            cfg.student = pol.get("student", cfg.student)
            cfg.teachers = tuple(x.strip() for x in pol.get("teachers", "random").split(",") if x.strip())
            cfg.init_scale = pol.getfloat("init_scale", cfg.init_scale)
            weights = pol.get("teacher_weights")
        else:
            weights = None

        hybrid_kw: dict = {}
        if cp.has_section("hybrid"):
            hy = cp["hybrid"]
            name = hy.get("preset")
            if name is not None:
                if name not in PRESETS:
                    raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
                hybrid_kw.update(PRESETS[name])
            for key in ("lambda0", "alpha", "gamma", "learning_rate"):
                if key in hy:
                    hybrid_kw[key] = hy.getfloat(key)
            if "group_size" in hy:
                hybrid_kw["group_size"] = hy.getint("group_size")
            if "topk" in hy:
                hybrid_kw["topk"] = "full" if hy["topk"] == "full" else hy.getint("topk")
            for key in ("baseline", "use_dense"):
                if key in hy:
                    hybrid_kw[key] = hy.getboolean(key)
        hybrid_kw["teacher_weights"] = (_floats(weights) if weights else (1.0,) * len(cfg.teachers))
        hybrid_kw["seed"] = cfg.seed
        cfg.hybrid = HybridConfig(**hybrid_kw)

        cfg.rewards = [_reward_section(n, cp[n]) for n in cp.sections() if n.startswith("reward.")]

        if cp.has_section("enumeration"):
            en = cp["enumeration"]
            cfg.track_exact = en.getboolean("track_exact", cfg.track_exact)
            cfg.enumeration_cap = en.getint("cap", cfg.enumeration_cap)
        if cp.has_section("verify"):
            ve = cp["verify"]
            v = cfg.verify
            v.instances = ve.getint("instances", v.instances)
            v.score_instances = ve.getint("score_instances", v.score_instances)
            v.kernel_pairs = ve.getint("kernel_pairs", v.kernel_pairs)
            v.vocab_size = ve.getint("vocab_size", v.vocab_size)
            v.horizon = ve.getint("horizon", v.horizon)
            v.fd_step = ve.getfloat("fd_step", v.fd_step)
            v.cap = ve.getint("cap", cfg.enumeration_cap)
            if "lambdas" in ve:
                v.lambdas = _floats(ve["lambdas"])
            if "betas" in ve:
                v.betas = _floats(ve["betas"])
        if cp.has_section("bench"):
            be = cp["bench"]
            b = cfg.bench
            if "vocab_sizes" in be:
                b.vocab_sizes = _ints(be["vocab_sizes"])
            if "topk" in be:
                b.topk = _ints(be["topk"])
            b.repeats = be.getint("repeats", b.repeats)
            b.float32 = be.getboolean("float32", b.float32)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config value: {exc}") from exc

    if seed is not None:
        cfg.seed = seed
        cfg.hybrid = cfg.hybrid.replace(seed=seed)
    if out_dir is not None:
        cfg.out_dir = Path(out_dir)
    elif os.environ.get(OUT_DIR_ENV):
        cfg.out_dir = Path(os.environ[OUT_DIR_ENV])
    return cfg.validate()
