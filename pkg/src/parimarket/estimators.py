"""Decoding market forecasts back into estimates.

When the outcome stream encodes some quantity of interest (event indicators,
a bounded scalar, its powers), the market's bet proportions can be mapped back
to estimates of probabilities, expectations and moments. Forecasts are noisy
market quantities, so out-of-range decodes are reported both raw and
sanitized, never silently discarded.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import SimplexPoint


@dataclass(frozen=True)
class DecodedValue:
    """A decoded estimate: sanitized value, the raw decode, and whether
    sanitizing changed it."""

    value: float
    raw: float
    clipped: bool = False


@dataclass(frozen=True)
class MomentEstimate:
    """Estimated moments of a [0, 1]-valued variable.

    ``variance`` is only available from two or more moments; a negative
    variance (possible for noisy forecasts, impossible for exact conditional
    means) is kept as-is and flagged via ``variance_suspect``.
    """

    moments: tuple[float, ...]
    mean: float
    variance: float | None = None
    variance_suspect: bool = False


def decode_partition(forecast: SimplexPoint, n_events: int | None = None) -> tuple[float, ...]:
    """Event probabilities when the components partition the sample space:
    the forecast already is the estimate."""
    if n_events is not None and forecast.dim != n_events:
        raise ValueError(f"forecast has {forecast.dim} components, expected {n_events}")
    return forecast.weights


def decode_overlapping(forecast: SimplexPoint, n_events: int) -> tuple[DecodedValue, ...]:
    """Event probabilities when indicators share a damping factor and a slack
    component: each event estimate is its component scaled back up by the
    number of events, clipped into [0, 1] with a flag."""
    if n_events < 1:
        raise ValueError("need at least one event")
    if forecast.dim != n_events + 1:
        raise ValueError(
            f"forecast has {forecast.dim} components, expected {n_events + 1}"
        )
    out = []
    for n in range(n_events):
        raw = n_events * forecast[n]
        value = min(max(raw, 0.0), 1.0)
        out.append(DecodedValue(value=value, raw=raw, clipped=value != raw))
    return tuple(out)


def decode_bounded_mean(forecast: SimplexPoint, lower: float, upper: float) -> float:
    """Expectation of a bounded scalar from its two-component position
    encoding: the first component locates the mean within [lower, upper]."""
    if upper <= lower:
        raise ValueError("upper bound must exceed lower bound")
    if forecast.dim != 2:
        raise ValueError(f"forecast has {forecast.dim} components, expected 2")
    return lower + (upper - lower) * forecast[0]


def decode_moments(forecast: SimplexPoint, n_moments: int) -> MomentEstimate:
    """Moments of a [0, 1]-valued scalar from its power encoding.

    Component n carries the n-th power damped by ``n_moments``, so each moment
    estimate is its component scaled back up. From two moments the variance
    follows; it is flagged (not clipped) when negative.
    """
    if n_moments < 1:
        raise ValueError("need at least one moment")
    if forecast.dim != n_moments + 1:
        raise ValueError(
            f"forecast has {forecast.dim} components, expected {n_moments + 1}"
        )
    moments = tuple(n_moments * forecast[n] for n in range(n_moments))
    mean = moments[0]
    if n_moments < 2:
        return MomentEstimate(moments=moments, mean=mean)
    variance = moments[1] - mean * mean
    return MomentEstimate(
        moments=moments,
        mean=mean,
        variance=variance,
        variance_suspect=variance < 0.0,
    )
