"""Run configuration read from an INI file.

Every key is optional; the defaults reproduce the standard setup (training
cohorts 1781-1830, targets 1870/1890/1910, S=20, w=110, theta=0.995,
delta=0.95). Relative paths are resolved against the config file's folder.

Example::

    [paths]
    hmd_files = mltper_1x1.txt    ; cohort life tables, comma separated
    out_dir = out

    [sem]
    x = 1000
    kappa = -0.25
    sigma = 0.001
    cond_age = 20
    terminal_age = 110

    [pipeline]
    kinds = ID, IG
    train_first = 1781
    train_last = 1830
    targets = 1870, 1890, 1910
    eval_age = 30
    theta = 0.995
    deltas = 0.95
    basis_L = 20
    basis_order = 4
    max_p = 2
    max_d = 2
    max_q = 2
    last_data_year =              ; blank means train_last + terminal_age
    mse_from_first_forecast_age = false

    [synthetic]
    enabled = false               ; true replaces the HMD files by a synthetic panel
    a0 = 0.062
    a_slope = 0.00008
    b0 = 1.0
    b_slope = 0.01
    wiggle = 0
    cohort_size = 0               ; 0 means no sampling noise

    [verify]
    n_paths = 1000000
    fault = none

    [run]
    seed = 20240601
"""

from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .core import KeyKind, SemParams
from .errors import ParseError, SemError

DEFAULT_SEED = 20240601
FAULTS = ("none", "q_ig_sign")


@dataclass
class PipelineConfig:
    kinds: tuple = (KeyKind.ID, KeyKind.IG)
    train_first: int = 1781
    train_last: int = 1830
    targets: tuple = (1870, 1890, 1910)
    eval_age: int = 30
    theta: float = 0.995
    deltas: tuple = (0.95,)
    basis_L: int = 20
    basis_order: int = 4
    max_p: int = 2
    max_d: int = 2
    max_q: int = 2
    last_data_year: int | None = None
    mse_from_first_forecast_age: bool = False


@dataclass
class SyntheticConfig:
    """Parameters of a synthetic panel drawn from the parametric IG key family.

    Cohort ``i`` (counted from the first training cohort) gets
    ``a = a0 + a_slope i`` and ``b = b0 + b_slope i``.
    """

    enabled: bool = False
    a0: float = 0.062
    a_slope: float = 0.00008
    b0: float = 1.0
    b_slope: float = 0.01
    wiggle: float = 0.0  # amplitude of a smooth sinusoidal cohort effect on (a, b)
    cohort_size: int = 0  # 0 means exact closed-form curves without sampling noise


@dataclass
class VerifyConfig:
    n_paths: int = 1_000_000
    fault: str = "none"


@dataclass
class RunConfig:
    sem: SemParams = field(default_factory=SemParams)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    hmd_files: tuple = ()
    out_dir: Path = Path("out")
    seed: int = DEFAULT_SEED
    source: str | None = None

    def __post_init__(self):
        pc = self.pipeline
        if pc.train_last - pc.train_first + 1 < 2:
            raise SemError(
                f"training range {pc.train_first}-{pc.train_last} has fewer than m >= 2 cohorts"
            )
        if not 0 < pc.theta <= 1:
            raise SemError(f"theta must lie in (0, 1], got {pc.theta}")
        if any(not 0 < d < 1 for d in pc.deltas):
            raise SemError(f"deltas must lie in (0, 1), got {pc.deltas}")
        if any(t <= pc.train_last for t in pc.targets):
            raise SemError(f"target cohorts must follow the last training cohort {pc.train_last}")
        if not self.sem.S <= pc.eval_age <= self.sem.w:
            raise SemError(f"eval_age must lie in [{self.sem.S}, {self.sem.w}]")
        if self.verify.fault not in FAULTS:
            raise SemError(f"unknown fault {self.verify.fault!r}; choose from {FAULTS}")
        if not 0 <= self.seed < 2**64:
            raise SemError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    @property
    def last_data_year(self) -> int:
        ly = self.pipeline.last_data_year
        return self.pipeline.train_last + self.sem.w if ly is None else ly

    @property
    def training_cohorts(self) -> list[int]:
        return list(range(self.pipeline.train_first, self.pipeline.train_last + 1))

    def echo(self) -> dict:
        """Plain-data view of every setting, for manifests."""
        doc = {
            "sem": self.sem.to_dict(),
            "pipeline": asdict(self.pipeline),
            "synthetic": asdict(self.synthetic),
            "verify": asdict(self.verify),
            "hmd_files": [str(p) for p in self.hmd_files],
            "seed": self.seed,
        }
        doc["pipeline"]["kinds"] = [KeyKind(k).value for k in self.pipeline.kinds]
        doc["pipeline"]["last_data_year"] = self.last_data_year
        return doc


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _kinds(text: str) -> tuple:
    return tuple(KeyKind(t.strip().upper()) for t in text.replace(",", " ").split())


def load_config(path=None, seed: int | None = None, out_dir=None) -> RunConfig:
    """Read a config file; ``seed`` and ``out_dir`` override the file when given."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as err:
            raise ParseError(f"{path}: {err}") from None
        base = path.resolve().parent
    known = {"paths", "sem", "pipeline", "synthetic", "verify", "run"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ParseError(f"{path}: unknown sections {sorted(unknown)}")
    try:
        cfg = _build(parser, base)
    except (ValueError, KeyError) as err:
        if isinstance(err, SemError):
            raise
        raise ParseError(f"{path}: {err}") from None
    if seed is not None:
        cfg.seed = int(seed)
        cfg.__post_init__()
    if out_dir is not None:
        cfg.out_dir = Path(out_dir)
    return cfg


def _build(parser: configparser.ConfigParser, base: Path) -> RunConfig:
    def section(name):
        return parser[name] if parser.has_section(name) else {}

    def check_keys(name, allowed):
        extra = set(section(name)) - set(allowed)
        if extra:
            raise ParseError(f"[{name}] unknown keys {sorted(extra)}")

    paths, sem, pipe = section("paths"), section("sem"), section("pipeline")
    syn, ver, run = section("synthetic"), section("verify"), section("run")
    check_keys("paths", ("hmd_files", "out_dir"))
    check_keys("sem", ("x", "kappa", "sigma", "cond_age", "terminal_age"))
    check_keys("pipeline", PipelineConfig.__dataclass_fields__)
    check_keys("synthetic", SyntheticConfig.__dataclass_fields__)
    check_keys("verify", VerifyConfig.__dataclass_fields__)
    check_keys("run", ("seed",))

    d = SemParams()
    sem_params = SemParams(
        x=float(sem.get("x", d.x)),
        kappa=float(sem.get("kappa", d.kappa)),
        sigma=float(sem.get("sigma", d.sigma)),
        cond_age=int(sem.get("cond_age", d.cond_age)),
        terminal_age=int(sem.get("terminal_age", d.terminal_age)),
    )
    pd = PipelineConfig()
    ly = pipe.get("last_data_year", "").strip()
    pipeline = PipelineConfig(
        kinds=_kinds(pipe["kinds"]) if "kinds" in pipe else pd.kinds,
        train_first=int(pipe.get("train_first", pd.train_first)),
        train_last=int(pipe.get("train_last", pd.train_last)),
        targets=_ints(pipe["targets"]) if "targets" in pipe else pd.targets,
        eval_age=int(pipe.get("eval_age", pd.eval_age)),
        theta=float(pipe.get("theta", pd.theta)),
        deltas=_floats(pipe["deltas"]) if "deltas" in pipe else pd.deltas,
        basis_L=int(pipe.get("basis_L", pd.basis_L)),
        basis_order=int(pipe.get("basis_order", pd.basis_order)),
        max_p=int(pipe.get("max_p", pd.max_p)),
        max_d=int(pipe.get("max_d", pd.max_d)),
        max_q=int(pipe.get("max_q", pd.max_q)),
        last_data_year=int(ly) if ly else None,
        mse_from_first_forecast_age=_bool(pipe.get("mse_from_first_forecast_age", "false")),
    )
    sd = SyntheticConfig()
    synthetic = SyntheticConfig(
        enabled=_bool(syn.get("enabled", "false")),
        a0=float(syn.get("a0", sd.a0)),
        a_slope=float(syn.get("a_slope", sd.a_slope)),
        b0=float(syn.get("b0", sd.b0)),
        b_slope=float(syn.get("b_slope", sd.b_slope)),
        wiggle=float(syn.get("wiggle", sd.wiggle)),
        cohort_size=int(syn.get("cohort_size", sd.cohort_size)),
    )
    verify = VerifyConfig(
        n_paths=int(ver.get("n_paths", VerifyConfig.n_paths)),
        fault=ver.get("fault", "none").strip(),
    )
    files = tuple(
        _resolve(base, f.strip()) for f in paths.get("hmd_files", "").split(",") if f.strip()
    )
    return RunConfig(
        sem=sem_params,
        pipeline=pipeline,
        synthetic=synthetic,
        verify=verify,
        hmd_files=files,
        out_dir=_resolve(base, paths.get("out_dir", "out").strip()),
        seed=int(run.get("seed", DEFAULT_SEED)),
    )


def _resolve(base: Path, p: str) -> Path:
    q = Path(os.path.expanduser(p))
    return q if q.is_absolute() else base / q


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off", ""):
        return False
    raise ParseError(f"not a boolean: {text!r}")


def thread_count() -> int:
    """Worker cap from ``SEM_THREADS`` (default 1)."""
    raw = os.environ.get("SEM_THREADS", "1").strip()
    try:
        n = int(raw)
    except ValueError:
        raise ParseError(f"SEM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ParseError(f"SEM_THREADS must be a positive integer, got {raw!r}")
    return n
