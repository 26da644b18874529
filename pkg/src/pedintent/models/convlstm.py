"""Convolutional LSTM and the auxiliary intention head built from it.

Gate order in the fused convolution is (input, forget, output, candidate):

    i = sigmoid(W_i * [x, h] + b_i)     f = sigmoid(W_f * [x, h] + b_f)
    o = sigmoid(W_o * [x, h] + b_o)     g = tanh(W_g * [x, h] + b_g)
    c' = f . c + i . g                  h' = o . tanh(c')
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from pedintent.errors import ConfigError, NumericError


def convlstm_cell(x, h_prev, c_prev, weight, bias):
    """One ConvLSTM step. ``weight`` has shape (4*hidden, in + hidden, kh, kw)."""
    for name, t in (("x", x), ("h_prev", h_prev), ("c_prev", c_prev)):
        if not torch.isfinite(t).all():
            raise NumericError(f"non-finite values in {name}")
    pad = (weight.shape[2] // 2, weight.shape[3] // 2)
    gates = F.conv2d(torch.cat([x, h_prev], dim=1), weight, bias, padding=pad)
    i, f, o, g = gates.chunk(4, dim=1)
    c = torch.sigmoid(f) * c_prev + torch.sigmoid(i) * torch.tanh(g)
    h = torch.sigmoid(o) * torch.tanh(c)
    return h, c


class ConvLSTMCell(nn.Module):
    def __init__(self, in_channels: int, hidden_channels: int, kernel=(3, 3), forget_bias: float = 1.0):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.gates = nn.Conv2d(in_channels + hidden_channels, 4 * hidden_channels, kernel, padding=(kernel[0] // 2, kernel[1] // 2))
        with torch.no_grad():
            self.gates.bias.zero_()
            self.gates.bias[hidden_channels : 2 * hidden_channels] = forget_bias

    def zero_state(self, x):
        b, _, h, w = x.shape
        z = x.new_zeros(b, self.hidden_channels, h, w)
        return z, z.clone()

    def forward(self, x, state=None):
        h, c = state if state is not None else self.zero_state(x)
        return convlstm_cell(x, h, c, self.gates.weight, self.gates.bias)


@dataclass(frozen=True)
class AuxiliaryConfig:
    tap_channels: int
    downsample: int  # tap resolution / grid resolution
    hidden_channels: tuple[int, ...] = (32, 32, 32)
    kernel: tuple[int, int] = (3, 3)
    seq_len: int = 8
    n_anchors: int = 5
    n_intents: int = 2
    forget_bias: float = 1.0

    @property
    def n_layers(self) -> int:
        return len(self.hidden_channels)

    def validate(self) -> "AuxiliaryConfig":
        if self.n_layers != 3:
            raise ConfigError("hidden_channels", "the intention head uses exactly three ConvLSTM layers")
        if self.downsample < 1:
            raise ConfigError("downsample", "tap feature map is spatially smaller than the grid")
        if self.seq_len < 1:
            raise ConfigError("seq_len", "must be >= 1")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_channels"] = list(self.hidden_channels)
        d["kernel"] = list(self.kernel)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AuxiliaryConfig":
        d = dict(d)
        d["hidden_channels"] = tuple(d["hidden_channels"])
        d["kernel"] = tuple(d["kernel"])
        return cls(**d)


class AuxiliaryHead(nn.Module):
    """Strided adapter -> three stacked ConvLSTM layers -> 1x1 intent head.

    Consumes the tap feature maps of ``seq_len`` frames and returns intent
    logits shaped ``(B, H, W, A, N_I)`` for the last frame.
    """

    def __init__(self, config: AuxiliaryConfig):
        super().__init__()
        config.validate()
        self.config = config
        d = config.downsample
        self.adapter = nn.Conv2d(config.tap_channels, config.hidden_channels[0], d, stride=d)
        self.act = nn.LeakyReLU(0.1)
        cells = []
        c = config.hidden_channels[0]
        for hidden in config.hidden_channels:
            cells.append(ConvLSTMCell(c, hidden, config.kernel, config.forget_bias))
            c = hidden
        self.cells = nn.ModuleList(cells)
        self.head = nn.Conv2d(c, config.n_anchors * config.n_intents, 1)

    def forward(self, taps: torch.Tensor) -> torch.Tensor:
        """``taps``: (B, t, C, h, w)."""
        if taps.dim() != 5 or taps.shape[1] != self.config.seq_len:
            raise ConfigError("seq_len", f"expected {self.config.seq_len} frames, got shape {tuple(taps.shape)}")
        b, t = taps.shape[:2]
        x_all = self.act(self.adapter(taps.flatten(0, 1)))
        x_all = x_all.view(b, t, *x_all.shape[1:])
        states = [None] * len(self.cells)
        h = None
        for step in range(t):
            x = x_all[:, step]
            for n, cell in enumerate(self.cells):
                states[n] = cell(x, states[n])
                x = states[n][0]
            h = x
        logits = self.head(h)
        _, _, gh, gw = logits.shape
        return logits.view(b, self.config.n_anchors, self.config.n_intents, gh, gw).permute(0, 3, 4, 1, 2)
