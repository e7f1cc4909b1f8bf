"""Epoch-indexed schedules for sparsity, mask learning rate and weight learning rate."""

from dataclasses import dataclass
import math

from .errors import ConfigError, InputError


def _sigmoid_gate(alpha, k, tau):
    """1 / (1 + exp(-alpha (k - tau/2))), overflow-safe."""
    z = alpha * (k - 0.5 * tau)
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _check_k(k, tau):
    if not 0 <= k <= tau:
        raise InputError(f"epoch {k} outside [0, {tau}]")


@dataclass(frozen=True)
class SparsitySchedule:
    """Target-sparsity ramp.

    ``variant='sigmoid'`` is the smooth ramp ``P / (1 + exp(-alpha (k - tau/2)))``.
    ``variant='zhu-cubic'`` is the cubic ramp ``P (1 - (1 - k/k_final)^3)``
    that reaches P at ``k_final`` (default ``round(0.75 tau)``).

    ``snap_final`` forces ``P`` at ``k == tau`` so short runs end on budget.
    """

    P: float
    alpha: float = 0.5
    tau: int = 160
    clamp_eps: float = None
    variant: str = "sigmoid"
    k_final: int = None
    snap_final: bool = True

    def __post_init__(self):
        if not 0.0 <= self.P < 1.0:
            raise ConfigError(f"must satisfy 0 <= P < 1, got {self.P}", field="sparsity")
        if not self.alpha > 0:
            raise ConfigError(f"must be > 0, got {self.alpha}", field="alpha")
        if self.tau < 1:
            raise ConfigError(f"must be >= 1, got {self.tau}", field="epochs")
        if self.variant not in ("sigmoid", "zhu-cubic"):
            raise ConfigError(f"unknown schedule {self.variant!r}", field="schedule")
        if self.k_final is not None and not 1 <= self.k_final <= self.tau:
            raise ConfigError(f"k_final must lie in [1, {self.tau}]", field="k_final")

    @property
    def eps(self):
        return 1e-6 * self.P if self.clamp_eps is None else self.clamp_eps

    @property
    def ramp_end(self):
        return self.k_final if self.k_final is not None else max(1, round(0.75 * self.tau))

    def raw(self, k):
        """Unclamped schedule value."""
        if self.variant == "zhu-cubic":
            if k >= self.ramp_end:
                return self.P
            return self.P * (1.0 - (1.0 - k / self.ramp_end) ** 3)
        return self.P * _sigmoid_gate(self.alpha, k, self.tau)

    def gate(self, k):
        """Shared sigmoid factor of the sparsity and mask-LR schedules."""
        return _sigmoid_gate(self.alpha, k, self.tau)


def sparsity_at_epoch(s, k):
    _check_k(k, s.tau)
    if s.snap_final and k == s.tau:
        return s.P
    value = s.raw(k)
    if s.P - value <= s.eps:
        return s.P
    return value


@dataclass(frozen=True)
class LrSchedule:
    """Cosine-annealed weight learning rate, one cycle over ``tau`` epochs."""

    eta0: float = 0.1
    tau: int = 160

    def __post_init__(self):
        if self.eta0 < 0:
            raise ConfigError("must be >= 0", field="lr")
        if self.tau < 1:
            raise ConfigError("must be >= 1", field="epochs")


def weight_lr_at_epoch(l, k):
    _check_k(k, l.tau)
    return 0.5 * l.eta0 * (1.0 + math.cos(math.pi * k / l.tau))


def mask_lr_from_weight_lr(lr_w, s, k, mode="paradox", constant=0.1):
    """Mask-score learning rate given the weight learning rate of the same epoch.

    ``paradox``: ``lr_w`` scaled by the sparsity sigmoid (default);
    ``weight``: ``lr_w`` itself; ``constant``: a fixed ``constant``.
    """
    if mode == "paradox":
        return lr_w * s.gate(k)
    if mode == "weight":
        return lr_w
    if mode == "constant":
        return constant
    raise ConfigError(f"unknown mask lr mode {mode!r}", field="mask_lr_mode")


def mask_lr_at_epoch(l, s, k, mode="paradox", constant=0.1):
    _check_k(k, s.tau)
    return mask_lr_from_weight_lr(weight_lr_at_epoch(l, k), s, k, mode, constant)
