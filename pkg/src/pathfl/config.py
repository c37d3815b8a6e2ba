"""Run configuration: a flat JSON object; unknown keys are rejected."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from pathfl.errors import ValidationError
from pathfl.synth import ClientProfile

METHODS = ("fedavg", "fedprox", "pathfl")


@dataclass
class RunConfig:
    method: str = "pathfl"
    cse: bool = True
    afa: bool = True
    ssa: bool = True
    clients: int = 3
    rounds: int = 30
    local_epochs: int = 2
    batch_size: int = 4
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    prox_mu: float = 0.01
    eps: float = 1e-5
    probe_batch: int = 4
    height: int = 48
    width: int = 48
    train_per_client: int = 60
    test_per_client: int = 16
    base_channels: int = 8
    depth: int = 2
    seed: int = 1
    data_seed: int | None = None
    similarity_norm: str = "layer"
    style_per_channel: bool = True
    workers: int = 1
    profiles: list = field(default_factory=list)
    out_dir: str | None = None

    def __post_init__(self):
        self.profiles = [p if isinstance(p, ClientProfile) else ClientProfile.from_json(p)
                         for p in self.profiles]

    # -- derived views ------------------------------------------------------
    @property
    def use_cse(self):
        return self.method == "pathfl" and self.cse

    @property
    def use_afa(self):
        return self.method == "pathfl" and self.afa

    @property
    def use_ssa(self):
        return self.method == "pathfl" and self.ssa

    @property
    def effective_prox_mu(self):
        return self.prox_mu if self.method == "fedprox" else 0.0

    @property
    def effective_data_seed(self):
        return self.seed if self.data_seed is None else self.data_seed

    @property
    def label(self):
        if self.method != "pathfl":
            return self.method
        on = [n for n in ("cse", "afa", "ssa") if getattr(self, n)]
        return "pathfl" if len(on) == 3 else "pathfl[" + "+".join(on or ["none"]) + "]"

    def validate(self):
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.clients < 2:
            raise ValidationError("need at least 2 clients")
        if len(self.profiles) != self.clients:
            raise ValidationError(f"{self.clients} clients but {len(self.profiles)} profiles")
        if self.rounds < 1:
            raise ValidationError("rounds must be >= 1")
        if self.local_epochs < 0 or self.batch_size < 1 or self.probe_batch < 1:
            raise ValidationError("local_epochs >= 0, batch_size >= 1 and probe_batch >= 1 required")
        if self.lr < 0 or self.prox_mu < 0 or self.eps <= 0 or self.adam_eps <= 0:
            raise ValidationError("lr, prox_mu >= 0 and eps, adam_eps > 0 required")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("Adam betas must lie in [0, 1)")
        step = 2 ** self.depth
        if self.height % step or self.width % step or self.height < 16 or self.width < 16:
            raise ValidationError(f"image size must be >= 16 and divisible by {step}")
        if self.train_per_client < 1 or self.test_per_client < 1:
            raise ValidationError("every client needs training and test samples")
        if self.similarity_norm not in ("layer", "global"):
            raise ValidationError("similarity_norm must be 'layer' or 'global'")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        for p in self.profiles:
            if p.channels != 3:
                raise ValidationError("profiles must describe 3-channel images")
        return self

    def to_json(self):
        d = asdict(self)
        d["profiles"] = [p.to_json() for p in self.profiles]
        return d

    def dumps(self):
        return json.dumps(self.to_json(), indent=1, sort_keys=True)

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def config_from_dict(obj):
    if not isinstance(obj, dict):
        raise ValidationError("config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ValidationError(f"unknown config keys: {unknown}")
    try:
        return RunConfig(**obj)
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc


def load_config(path):
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(obj).validate()


def default_config():
    """The bundled desk-scale configuration (three stylistically distinct clients)."""
    text = resources.files("pathfl").joinpath("configs/desk.json").read_text()
    return config_from_dict(json.loads(text)).validate()
