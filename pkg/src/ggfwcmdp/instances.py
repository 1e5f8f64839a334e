"""Machine-replacement WCMDP instances.

Each machine ages through S states when operated (passive action 0) and is
reset by replacement (active action 1), which uses one unit of the shared
budget. Costs are normalised by their maximum and turned into rewards
``1 - cost``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .model import SubMdp, WcmdpSpec

OPERATE_KINDS = ("linear", "quadratic", "exponential", "random")
REPLACE_KINDS = ("rccc",)
PRESETS = {
    "exponential-rccc": ("exponential", "rccc"),
    "quadratic-rccc": ("quadratic", "rccc"),
}


class ConfigInvalid(ValueError):
    pass


@dataclass(frozen=True)
class MachineReplacementConfig:
    num_machines: int
    num_states: int = 3
    stay_prob: float = 0.8
    reset_success: float = 1.0
    operate_cost_kind: str = "exponential"
    replace_cost_kind: str = "rccc"
    budget: float = 1.0
    discount: float = 0.95
    rng_seed: int = 0

    def validate(self):
        if self.num_machines < 1:
            raise ConfigInvalid("need at least one machine")
        if self.num_states < 2:
            raise ConfigInvalid("need at least two states")
        if not 0.0 <= self.stay_prob <= 1.0 or not 0.0 <= self.reset_success <= 1.0:
            raise ConfigInvalid("probabilities must lie in [0, 1]")
        if self.operate_cost_kind not in OPERATE_KINDS:
            raise ConfigInvalid(f"unknown operate cost {self.operate_cost_kind!r}")
        if self.replace_cost_kind not in REPLACE_KINDS:
            raise ConfigInvalid(f"unknown replace cost {self.replace_cost_kind!r}")
        if self.budget < 0:
            raise ConfigInvalid("budget must be nonnegative")
        if not 0.0 <= self.discount < 1.0:
            raise ConfigInvalid("discount must lie in [0, 1)")

    @classmethod
    def preset(cls, name: str, num_machines: int, **kw) -> "MachineReplacementConfig":
        try:
            op, rep = PRESETS[name]
        except KeyError:
            raise ConfigInvalid(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
        return cls(num_machines=num_machines, operate_cost_kind=op, replace_cost_kind=rep, **kw)


def operate_cost(s: int, kind: str, S: int, rng=None) -> float:
    """Cost of operating a machine in 1-based state ``s``."""
    if not 1 <= s <= S:
        raise ValueError(f"state {s} outside [1, {S}]")
    if kind == "linear":
        return float(s - 1)
    if kind == "quadratic":
        return float((s - 1) ** 2)
    if kind == "exponential":
        return float(np.exp(s - 1))
    if kind == "random":
        if rng is None:
            raise ValueError("random costs need an rng")
        return float(rng.uniform(0.0, 1.0))
    raise ConfigInvalid(f"unknown operate cost {kind!r}")


def replace_cost_rccc(S: int) -> float:
    if S < 2:
        raise ValueError("S must be >= 2")
    return 1.5 * (S - 1) ** 2


def cost_table(cfg: MachineReplacementConfig) -> np.ndarray:
    """Raw (S, 2) cost matrix, generated once and shared by all machines."""
    S = cfg.num_states
    rng = np.random.default_rng(cfg.rng_seed)
    c = np.empty((S, 2))
    for s in range(1, S + 1):
        c[s - 1, 0] = operate_cost(s, cfg.operate_cost_kind, S, rng)
    c[:, 1] = replace_cost_rccc(S)
    return c


def deterioration_matrix(S: int, stay_prob: float) -> np.ndarray:
    P = np.zeros((S, S))
    for s in range(S - 1):
        P[s, s] = stay_prob
        P[s, s + 1] = 1.0 - stay_prob
    P[S - 1, S - 1] = 1.0
    return P


def machine_submdp(cfg: MachineReplacementConfig) -> SubMdp:
    S = cfg.num_states
    passive = deterioration_matrix(S, cfg.stay_prob)
    active = (1.0 - cfg.reset_success) * passive
    active[:, 0] += cfg.reset_success
    P = np.stack([passive, active], axis=1)
    c = cost_table(cfg)
    reward = 1.0 - c / c.max()
    return SubMdp(P, reward, np.full(S, 1.0 / S))


def build_instance(cfg: MachineReplacementConfig) -> WcmdpSpec:
    cfg.validate()
    sub = machine_submdp(cfg)
    N = cfg.num_machines
    d = np.zeros((1, N, 2))
    d[0, :, 1] = 1.0
    meta = {"generator": "machine-replacement", **asdict(cfg)}
    return WcmdpSpec([sub] * N, d, [cfg.budget], cfg.discount, meta)
