# Copyright (c) tclsim authors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.
"""Thermostatically controlled load (TCL) model shared by both simulation backends.

A single unit is a stochastic hybrid system with a continuous temperature,
a discrete mode (0 = off, 1 = on) and a dwell clock. Temperatures follow
`dT = u_m(T, t) dt + sigma_m(T, t) dw`, the thermostat switches the mode at the
dead-band boundaries (cooling convention) and the broadcast `(eps0, eps1)`
triggers random switches at rate `lambda(eps, T)` inside the safe zones.
"""

from dataclasses import dataclass
import enum
import hashlib
import math
import typing as tp


class ParameterError(ValueError):
    pass


class Direction(enum.Enum):
    """Direction of a rate switch. `ON` acts on units that are off, `OFF` on units that are on."""
    ON = "on"
    OFF = "off"

    @property
    def source_mode(self) -> int:
        return 0 if self is Direction.ON else 1

    @property
    def target_mode(self) -> int:
        return 1 - self.source_mode


@dataclass(frozen=True)
class TclParams:
    """Physical and control constants of one TCL class.

    Defaults approximate a refrigerator unit. `rated_power` and the safe zone / dwell
    values are not part of the reference parameter set, see DESIGN.md.
    """
    a: float = -1.5247e-5
    b0: float = 3.6593e-4
    b1: float = -0.0026
    sigma: float = 0.0065
    t_min: float = 2.
    t_max: float = 5.
    delta_t0: float = 0.5
    delta_t1: float = 0.5
    m0: float = 300.
    m1: float = 300.
    rated_power: float = 100.

    def __post_init__(self):
        for name in ['a', 'b0', 'b1', 'sigma', 't_min', 't_max', 'delta_t0', 'delta_t1',
                     'm0', 'm1', 'rated_power']:
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ParameterError(f"params.{name} must be a finite number, got {value!r}.")
        if self.t_min >= self.t_max:
            raise ParameterError(
                f"params.t_min ({self.t_min}) must be lower than params.t_max ({self.t_max}).")
        if self.delta_t0 < 0 or self.delta_t1 < 0:
            raise ParameterError("params.delta_t0 and params.delta_t1 must be non negative.")
        if self.delta_t0 + self.delta_t1 >= self.band:
            raise ParameterError(
                "params.delta_t0 + params.delta_t1 must be smaller than the dead-band "
                f"width {self.band}, got {self.delta_t0 + self.delta_t1}.")
        if self.sigma < 0:
            raise ParameterError(f"params.sigma must be non negative, got {self.sigma}.")
        if self.rated_power <= 0:
            raise ParameterError(f"params.rated_power must be positive, got {self.rated_power}.")
        if self.m0 < 0 or self.m1 < 0:
            raise ParameterError("params.m0 and params.m1 must be non negative.")

    @property
    def band(self) -> float:
        return self.t_max - self.t_min

    def offset(self, mode: int) -> float:
        return self.b1 if mode else self.b0

    def min_dwell(self, mode: int) -> float:
        return self.m1 if mode else self.m0

    def equilibrium(self, mode: int) -> float:
        """Temperature where the drift of `mode` vanishes."""
        if self.a == 0:
            raise ParameterError("params.a is zero, the drift has no equilibrium.")
        return -self.offset(mode) / self.a


@dataclass(frozen=True)
class HybridState:
    temp: float
    mode: int
    dwell: float = 0.

    def __post_init__(self):
        if self.mode not in (0, 1):
            raise ParameterError(f"mode must be 0 or 1, got {self.mode!r}.")
        if self.dwell < 0:
            raise ParameterError(f"dwell must be non negative, got {self.dwell}.")


EpsPair = tp.Tuple[float, float]


@dataclass(frozen=True)
class ActuationSignal:
    """Piecewise constant broadcast. Sample `k` holds on `[k * period, (k + 1) * period)`."""
    period: float
    samples: tp.Tuple[EpsPair, ...]

    def __post_init__(self):
        if not self.period > 0:
            raise ParameterError(f"signal.period must be positive, got {self.period}.")
        if len(self.samples) == 0:
            raise ParameterError("signal.samples must contain at least one sample.")
        samples = []
        for idx, pair in enumerate(self.samples):
            if len(pair) != 2:
                raise ParameterError(f"signal.samples[{idx}] must be a pair [eps0, eps1].")
            eps0, eps1 = float(pair[0]), float(pair[1])
            if not (eps0 >= 0 and eps1 >= 0) or not math.isfinite(eps0 + eps1):
                raise ParameterError(
                    f"signal.samples[{idx}] has a negative or invalid rate: {list(pair)}.")
            samples.append((eps0, eps1))
        object.__setattr__(self, 'samples', tuple(samples))

    @property
    def duration(self) -> float:
        return self.period * len(self.samples)

    def covers(self, horizon: float) -> bool:
        return self.duration >= horizon

    def is_zero(self) -> bool:
        return all(eps0 == 0 and eps1 == 0 for eps0, eps1 in self.samples)

    def checksum(self, length: int = 16) -> str:
        """SHA-256 prefix of the canonical text form of the signal."""
        sha = hashlib.sha256()
        sha.update(f"{self.period!r}\n".encode())
        for eps0, eps1 in self.samples:
            sha.update(f"{eps0!r} {eps1!r}\n".encode())
        return sha.hexdigest()[:length]


def zero_signal(period: float, horizon: float) -> ActuationSignal:
    count = max(1, math.ceil(horizon / period))
    return ActuationSignal(period, ((0., 0.),) * count)


def pulse_signal(period: float, horizon: float, amplitude: float, start: float,
                 length: float, direction: Direction = Direction.ON) -> ActuationSignal:
    """Single rectangular pulse on one channel, zero elsewhere."""
    count = max(1, math.ceil(horizon / period))
    samples = []
    for k in range(count):
        active = start <= k * period < start + length
        value = amplitude if active else 0.
        samples.append((0., value) if direction is Direction.ON else (value, 0.))
    return ActuationSignal(period, tuple(samples))


def pulse_train_signal(period: float, horizon: float, amplitude: float, start: float,
                       length: float, gap: float) -> ActuationSignal:
    """Alternating pulses: switch-on pulse, pause of `gap`, switch-off pulse, pause, ..."""
    count = max(1, math.ceil(horizon / period))
    cycle = 2 * (length + gap)
    samples = []
    for k in range(count):
        time = k * period
        eps0 = eps1 = 0.
        if time >= start:
            phase = (time - start) % cycle
            if phase < length:
                eps1 = amplitude
            elif length + gap <= phase < 2 * length + gap:
                eps0 = amplitude
        samples.append((eps0, eps1))
    return ActuationSignal(period, tuple(samples))


def drift(params: TclParams, mode, temp, time: float = 0.):
    """Affine drift `a * T + b_mode` [K/s]. `mode` and `temp` may be arrays or tensors."""
    offset = params.b0 + (params.b1 - params.b0) * mode
    return params.a * temp + offset


def diffusion(params: TclParams, mode, temp, time: float = 0.) -> float:
    return params.sigma


def thermostat_transition(state: HybridState, params: TclParams) -> int:
    if state.mode == 0 and state.temp >= params.t_max:
        return 1
    if state.mode == 1 and state.temp <= params.t_min:
        return 0
    return state.mode


def rate_function(eps, temp):
    """Switching rate for a broadcast value. Temperature independent: `lambda(eps, T) = eps`."""
    if eps < 0:
        raise ParameterError(f"Switching rate control must be non negative, got {eps}.")
    return eps


def in_safe_zone(temp, direction: Direction, params: TclParams):
    """True where rate switching in `direction` is allowed.

    Switch-on: `[t_min + delta_t1, t_max)`. Switch-off: `(t_min, t_max - delta_t0]`.
    Works elementwise on numpy arrays and torch tensors.
    """
    if direction is Direction.ON:
        return (temp >= params.t_min + params.delta_t1) & (temp < params.t_max)
    return (temp > params.t_min) & (temp <= params.t_max - params.delta_t0)


def masked_rate(eps: float, temp: float, direction: Direction, params: TclParams) -> float:
    rate = rate_function(eps, temp)
    if in_safe_zone(temp, direction, params):
        return rate
    return 0.


def actuation_at(signal: ActuationSignal, time: float) -> EpsPair:
    """Broadcast in force at `time`, holding the last sample past the end of the signal."""
    if time < 0:
        raise ParameterError(f"time must be non negative, got {time}.")
    # times built as k * dt may land a rounding error below a sample boundary.
    index = min(int(math.floor(time / signal.period + 1e-9)), len(signal.samples) - 1)
    return signal.samples[index]


def power_output(state: HybridState, params: TclParams) -> float:
    return params.rated_power * state.mode
