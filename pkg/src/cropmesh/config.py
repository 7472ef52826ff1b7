"""Run configuration: one JSON document plus command-line overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .baselines import parse_policy
from .mesh import CHANNELS_24
from .sim import SimParams
from .te import TeParams

GENERATORS = ("scenario1", "scenario2")
GATEWAY_LAYOUTS = ("centered", "spread")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    policy: str = "cornet"
    seed: int = 0
    workload: dict = field(default_factory=lambda: {"generator": "scenario1", "scale": 1.0})
    topology: dict = field(default_factory=dict)  # gateways layout, fixed 2.4GHz channels
    trace: str | None = None
    te: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    out: str | None = None

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict, base_dir=None) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(**copy.deepcopy(doc))
        cfg._resolve_paths(base_dir)
        return cfg.validated()

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, path.parent)

    def override(self, policy=None, seed=None, scale=None, trace=None, out=None) -> "RunConfig":
        cfg = copy.deepcopy(self)
        if policy is not None:
            cfg.policy = policy
        if seed is not None:
            cfg.seed = seed
        if scale is not None:
            if "file" in cfg.workload:
                raise ConfigError("--scale applies to generated workloads only")
            cfg.workload["scale"] = scale
        if trace is not None:
            cfg.trace = str(Path(trace).resolve())
        if out is not None:
            cfg.out = str(out)
        return cfg.validated()

    def _resolve_paths(self, base_dir):
        base = Path(base_dir) if base_dir is not None else Path.cwd()
        if self.trace:
            self.trace = str((base / self.trace).resolve())
        for key in ("file", "topology_file"):
            if self.workload.get(key):
                self.workload[key] = str((base / self.workload[key]).resolve())

    # -- validation --------------------------------------------------------

    def validated(self) -> "RunConfig":
        """Fill defaults and check every field; returns self."""
        try:
            self.policy = parse_policy(self.policy).value
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        self._check_workload()
        self._check_topology()
        if self.trace is not None and not Path(self.trace).is_file():
            raise ConfigError(f"trace file {self.trace} not found")
        try:
            self.te = asdict(TeParams(**self.te))
            sim = dict(self.sim)
            sim.pop("seed", None)
            self.sim = {k: v for k, v in asdict(SimParams(**sim)).items() if k != "seed"}
        except TypeError as exc:
            raise ConfigError(f"unknown parameter: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def _check_workload(self):
        w = self.workload
        if not isinstance(w, dict):
            raise ConfigError("workload must be an object")
        if "file" in w:
            bad = set(w) - {"file", "topology_file"}
            if bad:
                raise ConfigError(f"workload file configs take no {sorted(bad)}")
            if not Path(w["file"]).is_file():
                raise ConfigError(f"workload file {w['file']} not found")
            topo = w.get("topology_file") or str(Path(w["file"]).with_suffix(".topology.json"))
            if not Path(topo).is_file():
                raise ConfigError(f"workload topology file {topo} not found")
            return
        w.setdefault("generator", "scenario1")
        w.setdefault("scale", 1.0)
        bad = set(w) - {"generator", "scale", "seed"}
        if bad:
            raise ConfigError(f"unknown workload keys {sorted(bad)}")
        if w["generator"] not in GENERATORS:
            raise ConfigError(f"workload generator must be one of {GENERATORS}")
        if not isinstance(w["scale"], (int, float)) or not 0 < w["scale"] <= 1:
            raise ConfigError(f"workload scale must be in (0, 1], got {w['scale']!r}")
        w["scale"] = float(w["scale"])
        if "seed" in w and (isinstance(w["seed"], bool) or not isinstance(w["seed"], int)):
            raise ConfigError("workload seed must be an integer")

    def _check_topology(self):
        t = self.topology
        if not isinstance(t, dict):
            raise ConfigError("topology must be an object")
        bad = set(t) - {"gateways", "channels24"}
        if bad:
            raise ConfigError(f"unknown topology keys {sorted(bad)}")
        t.setdefault("gateways", "centered")
        if t["gateways"] not in GATEWAY_LAYOUTS:
            raise ConfigError(f"topology.gateways must be one of {GATEWAY_LAYOUTS}")
        chans = t.get("channels24")
        if chans is not None:
            if not isinstance(chans, dict):
                raise ConfigError("topology.channels24 maps router ids to channels")
            for rid, ch in chans.items():
                if not str(rid).isdigit():
                    raise ConfigError(f"channels24: router id {rid!r} is not a number")
                if ch not in CHANNELS_24:
                    raise ConfigError(f"channels24: router {rid} has invalid channel {ch!r}; use one of {CHANNELS_24}")
            t["channels24"] = {str(int(k)): int(v) for k, v in sorted(chans.items(), key=lambda kv: int(kv[0]))}

    # -- derived -----------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def effective(self) -> dict:
        """Everything that determines a run except where it is written."""
        d = self.to_dict()
        d.pop("out")
        return d

    def config_hash(self) -> str:
        d = self.effective()
        d.pop("seed")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def run_dir_name(self) -> str:
        return f"{self.config_hash()}-seed{self.seed}"

    @property
    def workload_seed(self) -> int:
        return int(self.workload.get("seed", self.seed))

    def te_params(self) -> TeParams:
        return TeParams(**self.te)

    def sim_params(self) -> SimParams:
        return SimParams(seed=self.seed, **self.sim)
