"""Reward functions of the distance D = 1 - Tr(rho_d rho).

The partitioned nonlinear reward splits [0, 1] at d into a proximity zone (D < d, positive rewards)
and an exploration zone (D >= d, small penalties), and maps D to a reward inside each zone with

    r = ((D_hi - D_lo) / (f (D - D_lo) - e (D - D_hi)) - 1 / f) * e f (R_hi - R_lo) / (f - e) + R_lo

which runs from R_hi at D_lo to R_lo at D_hi. e < f makes the curve steeper towards D_lo.
The other variants replace parts of this design for ablation studies.

"""

import typing as ty

import numpy as np
import pandas as pd
from immutabledict import immutabledict

import qstab

export, __all__ = qstab.exporter()
__all__.extend(["VARIANTS", "PARTITIONED_VARIANTS", "NONLINEAR_VARIANTS"])

VARIANTS = ("PNR", "PNR1", "PLR", "PSR", "NPNR", "NPLNR", "NPLPR", "FPR")
PARTITIONED_VARIANTS = ("PNR", "PNR1", "PLR", "PSR")
NONLINEAR_VARIANTS = ("PNR", "PNR1", "NPNR")
# Variants that carry the per-step penalty by default
_PENALIZED = ("PNR", "PNR1", "PLR")

_FORMS = immutabledict(
    PNR="nonlinear",
    PNR1="nonlinear",
    PLR="linear",
    PSR="sparse",
    NPNR="nonlinear",
    NPLNR="linear",
    NPLPR="linear",
    FPR="fidelity F^4 + 4 F^25",
)


@export
class ZoneBounds(ty.NamedTuple):
    d_low: float
    d_high: float
    r_low: float
    r_high: float

    def contains(self, distance, slack=1e-12) -> bool:
        return self.d_low - slack <= distance <= self.d_high + slack


@export
class RewardSpec:
    """Reward variant and its parameters.

    :param variant: one of VARIANTS
    :param d: partition between proximity and exploration zone
    :param proximity: bounds of the proximity zone [0, d)
    :param exploration: bounds of the exploration zone [d, 1]
    :param span: bounds used by the non-partitioned variants over [0, 1]
    :param e: slope parameter near the upper distance bound
    :param f: slope parameter near the lower distance bound
    :param step_penalty: whether -step_index * step_penalty_unit is added
    :param sparse_reward: proximity-zone reward of the sparse variant
    """

    def __init__(
        self,
        variant: str = "PNR",
        d: float = 0.001,
        proximity: ty.Optional[ty.Sequence[float]] = None,
        exploration: ty.Optional[ty.Sequence[float]] = None,
        span: ty.Optional[ty.Sequence[float]] = None,
        e: float = 2.0,
        f: float = 10.0,
        step_penalty_unit: float = 1e-6,
        step_penalty: ty.Optional[bool] = None,
        sparse_reward: float = 1.0,
    ):
        if variant not in VARIANTS:
            raise qstab.InvalidConfiguration(
                f"Unknown reward variant {variant!r}, choose from {', '.join(VARIANTS)}"
            )
        self.variant = variant
        self.d = float(d)
        if not 0 < self.d < 1:
            raise qstab.InvalidConfiguration(f"Partition d must be in (0, 1), got {d}")
        self.proximity = ZoneBounds(*(proximity or (0.0, self.d, 1.0, 100.0)))
        self.exploration = ZoneBounds(*(exploration or (self.d, 1.0, -0.1, 0.0)))
        if span is None:
            span = (0.0, 1.0, 0.0, 100.0) if variant == "NPLPR" else (0.0, 1.0, -1.0, 0.0)
        self.span = ZoneBounds(*span)
        self.e = float(e)
        self.f = float(f)
        self.step_penalty_unit = float(step_penalty_unit)
        self.step_penalty = variant in _PENALIZED if step_penalty is None else bool(step_penalty)
        self.sparse_reward = float(sparse_reward)
        self._check()

    def _check(self):
        for name in ("proximity", "exploration", "span"):
            zone = getattr(self, name)
            if not zone.d_low < zone.d_high:
                raise qstab.InvalidConfiguration(f"{name} zone needs D_lo < D_hi, got {zone}")
            if not zone.r_low <= zone.r_high:
                raise qstab.InvalidConfiguration(f"{name} zone needs R_lo <= R_hi, got {zone}")
        if not (self.e > 0 and self.f > 0):
            raise qstab.InvalidConfiguration(f"Slopes must be positive, got e={self.e} f={self.f}")
        if self.nonlinear and self.e == self.f:
            raise qstab.InvalidConfiguration(
                f"{self.variant} needs e != f (the reward formula divides by f - e)"
            )
        if self.step_penalty_unit < 0:
            raise qstab.InvalidConfiguration("step_penalty_unit must be >= 0")

    @property
    def partitioned(self) -> bool:
        return self.variant in PARTITIONED_VARIANTS

    @property
    def nonlinear(self) -> bool:
        return self.variant in NONLINEAR_VARIANTS

    def to_dict(self) -> dict:
        return dict(
            variant=self.variant,
            d=self.d,
            proximity=list(self.proximity),
            exploration=list(self.exploration),
            span=list(self.span),
            e=self.e,
            f=self.f,
            step_penalty_unit=self.step_penalty_unit,
            step_penalty=self.step_penalty,
            sparse_reward=self.sparse_reward,
        )

    @classmethod
    def from_dict(cls, d: ty.Mapping) -> "RewardSpec":
        try:
            return cls(**d)
        except TypeError as e:
            raise qstab.InvalidConfiguration(f"Invalid reward definition {dict(d)}: {e}")

    def replace(self, **changes) -> "RewardSpec":
        d = self.to_dict()
        if "d" in changes:
            # Zone edges follow a new partition unless given explicitly
            for zone in ("proximity", "exploration"):
                d.pop(zone)
        d.update(changes)
        return RewardSpec(**d)

    def __eq__(self, other):
        return isinstance(other, RewardSpec) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"RewardSpec({self.variant}, d={self.d}, e={self.e}, f={self.f})"


@export
def pnr_core(distance: float, zone: ZoneBounds, e: float, f: float) -> float:
    """Nonlinear map of distance inside zone onto [zone.r_low, zone.r_high]."""
    if not zone.contains(distance):
        raise ValueError(f"Distance {distance} outside of zone [{zone.d_low}, {zone.d_high}]")
    d_low, d_high, r_low, r_high = zone
    denominator = f * (distance - d_low) - e * (distance - d_high)
    return ((d_high - d_low) / denominator - 1 / f) * (e * f * (r_high - r_low) / (f - e)) + r_low


@export
def linear_core(distance: float, zone: ZoneBounds) -> float:
    """Linear map of distance inside zone, r_high at d_low down to r_low at d_high."""
    if not zone.contains(distance):
        raise ValueError(f"Distance {distance} outside of zone [{zone.d_low}, {zone.d_high}]")
    fraction = (distance - zone.d_low) / (zone.d_high - zone.d_low)
    return zone.r_high + fraction * (zone.r_low - zone.r_high)


@export
def fidelity_reward(distance: float) -> float:
    """F^4 + 4 F^25 with the fidelity F = 1 - D of a pure target."""
    fidelity = 1.0 - distance
    return fidelity**4 + 4 * fidelity**25


@export
def evaluate(spec: RewardSpec, distance: float, step_index: int) -> float:
    """Reward for reaching distance at step step_index (1 for the first step)."""
    if not -1e-9 <= distance <= 1 + 1e-9:
        raise ValueError(f"Distance must be in [0, 1], got {distance}")
    distance = min(max(distance, 0.0), 1.0)
    variant = spec.variant

    if variant in ("PNR", "PNR1"):
        zone = spec.proximity if distance < spec.d else spec.exploration
        reward = pnr_core(distance, zone, spec.e, spec.f)
    elif variant == "PLR":
        zone = spec.proximity if distance < spec.d else spec.exploration
        reward = linear_core(distance, zone)
    elif variant == "PSR":
        reward = spec.sparse_reward if distance < spec.d else 0.0
    elif variant == "NPNR":
        reward = pnr_core(distance, spec.span, spec.e, spec.f)
    elif variant in ("NPLNR", "NPLPR"):
        reward = linear_core(distance, spec.span)
    else:
        reward = fidelity_reward(distance)

    if spec.step_penalty:
        reward -= step_index * spec.step_penalty_unit
    return reward


@export
def reward_floor(spec: RewardSpec) -> float:
    """Lowest reward of the variant, ignoring the step penalty."""
    if spec.variant in ("PNR", "PNR1", "PLR"):
        return spec.exploration.r_low
    if spec.variant in ("PSR", "FPR"):
        return 0.0
    return spec.span.r_low


@export
def default_specs() -> ty.Mapping[str, RewardSpec]:
    """The eight reward configurations of the ablation study."""
    return immutabledict(
        PNR=RewardSpec("PNR"),
        PNR1=RewardSpec("PNR1", e=10.0, f=2.0),
        PLR=RewardSpec("PLR"),
        PSR=RewardSpec("PSR"),
        NPNR=RewardSpec("NPNR"),
        NPLNR=RewardSpec("NPLNR"),
        NPLPR=RewardSpec("NPLPR"),
        FPR=RewardSpec("FPR"),
    )


@export
def describe_reward(spec: RewardSpec) -> dict:
    """Summary of a reward design, one row of an ablation table."""
    slopes = f"{spec.e:g}/{spec.f:g}" if spec.nonlinear else "-"
    if spec.partitioned:
        if spec.variant == "PSR":
            proximity, exploration = f"{spec.sparse_reward:g}", "0"
        else:
            proximity = f"[{spec.proximity.r_low:g}, {spec.proximity.r_high:g}]"
            exploration = f"[{spec.exploration.r_low:g}, {spec.exploration.r_high:g}]"
        non_partitioned = "-"
    else:
        proximity = exploration = "-"
        if spec.variant == "FPR":
            non_partitioned = "[0, 5]"
        else:
            non_partitioned = f"[{spec.span.r_low:g}, {spec.span.r_high:g}]"
    return {
        "variant": spec.variant,
        "partitioned": spec.partitioned,
        "e/f": slopes,
        "reward form": _FORMS[spec.variant],
        "proximity zone reward": proximity,
        "exploration zone reward": exploration,
        "non-partitioned reward": non_partitioned,
        "step penalty": spec.step_penalty_unit if spec.step_penalty else 0.0,
    }


@export
def reward_curve(spec: RewardSpec, n_points=1001, step_index=0) -> pd.DataFrame:
    """Reward as a function of distance on a uniform grid over [0, 1], for plotting."""
    distances = np.linspace(0, 1, n_points)
    return pd.DataFrame(
        dict(
            distance=distances,
            reward=[evaluate(spec, x, step_index) for x in distances],
        )
    )
