"""Time-by-channel table used for inputs, targets, voltage traces and spectra."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class SeriesFrame:
    """A (time x channel) float table with channel names.

    ``values`` is always a 2-D float64 array; 1-D input is promoted to a
    single channel. Channel names default to ``ch0, ch1, ...``.
    """

    values: np.ndarray
    channels: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ContractError(f"SeriesFrame requires 1-D or 2-D data, got shape {arr.shape}")
        names = tuple(self.channels) if self.channels else tuple(f"ch{i}" for i in range(arr.shape[1]))
        if len(names) != arr.shape[1]:
            raise ContractError(
                f"SeriesFrame has {arr.shape[1]} channels but {len(names)} channel names"
            )
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "channels", names)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def channel(self, name: str) -> np.ndarray:
        """Column by channel name."""
        try:
            idx = self.channels.index(name)
        except ValueError:
            raise ContractError(f"no channel named {name!r}; have {self.channels}") from None
        return self.values[:, idx]

    def with_values(self, values: np.ndarray) -> "SeriesFrame":
        """Same channel names, new data."""
        return SeriesFrame(values, self.channels)


def as_frame(data: "SeriesFrame | np.ndarray", channels: tuple[str, ...] = ()) -> SeriesFrame:
    """Coerce an array (or pass through a frame) to a SeriesFrame."""
    if isinstance(data, SeriesFrame):
        return data
    return SeriesFrame(np.asarray(data, dtype=np.float64), channels)
