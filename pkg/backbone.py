# backbone.py
"""Patch embedding, shifted-window transformer blocks and the output projection."""
import logging

import torch
import torch.nn as nn
import torch.nn.functional as F

logger = logging.getLogger(__name__)


def window_partition(x, window_h, window_w):
    """
    Args:
        x: (B, H, W, D) with H, W multiples of the window

    Returns:
        windows: (B * num_windows, window_h * window_w, D)
    """
    batch, height, width, dim = x.shape
    x = x.view(batch, height // window_h, window_h, width // window_w, window_w, dim)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window_h * window_w, dim)


def window_reverse(windows, window_h, window_w, height, width):
    """Inverse of window_partition."""
    per_image = (height // window_h) * (width // window_w)
    batch = windows.shape[0] // per_image
    x = windows.view(batch, height // window_h, width // window_w, window_h, window_w, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(batch, height, width, -1)


class PatchEmbed(nn.Module):
    """Non-overlapping p_h x p_w patches projected to D, zero-padding ragged edges."""

    def __init__(self, channels, embed_dim, patch_size=(8, 8)):
        super().__init__()
        self.patch_size = tuple(patch_size)
        self.proj = nn.Conv2d(channels, embed_dim, kernel_size=self.patch_size, stride=self.patch_size)
        self.norm = nn.LayerNorm(embed_dim)

    def forward(self, x):
        """(B, H, W, C) -> (B, ceil(H / p_h), ceil(W / p_w), D)"""
        _, height, width, _ = x.shape
        pad_h = (-height) % self.patch_size[0]
        pad_w = (-width) % self.patch_size[1]
        x = F.pad(x.permute(0, 3, 1, 2), (0, pad_w, 0, pad_h))
        return self.norm(self.proj(x).permute(0, 2, 3, 1))


class Mlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class WindowAttention(nn.Module):
    """
    Multi-head self-attention inside windows with a learned relative position bias.

    The bias table is sized for the configured window; smaller effective
    windows index a sub-table of it.
    """

    def __init__(self, dim, window_size, num_heads):
        super().__init__()
        self.dim = dim
        self.window_size = window_size
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.relative_position_bias_table = nn.Parameter(
            torch.zeros((2 * window_size - 1) ** 2, num_heads)
        )
        nn.init.trunc_normal_(self.relative_position_bias_table, std=0.02)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def relative_position_index(self, window_h, window_w):
        """(N, N) indices into the bias table for a window_h x window_w window."""
        coords = torch.stack(torch.meshgrid(
            torch.arange(window_h), torch.arange(window_w), indexing="ij"
        )).flatten(1)
        relative = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0)
        span = 2 * self.window_size - 1
        return (relative[..., 0] + self.window_size - 1) * span + relative[..., 1] + self.window_size - 1

    def forward(self, windows, window_h, window_w, mask=None):
        """
        Args:
            windows: (B * num_windows, N, D)
            window_h: Effective window height
            window_w: Effective window width
            mask: Optional (num_windows, N, N) bool, True where attention is blocked

        Returns:
            torch.Tensor: (B * num_windows, N, D)
        """
        count, tokens, dim = windows.shape
        qkv = self.qkv(windows).reshape(count, tokens, 3, self.num_heads, dim // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q * self.scale) @ k.transpose(-2, -1)

        index = self.relative_position_index(window_h, window_w).to(attn.device)
        bias = self.relative_position_bias_table[index.reshape(-1)].view(tokens, tokens, -1)
        attn = attn + bias.permute(2, 0, 1)[None]

        if mask is not None:
            num_windows = mask.shape[0]
            attn = attn.view(count // num_windows, num_windows, self.num_heads, tokens, tokens)
            attn = attn.masked_fill(mask[None, :, None], float("-inf"))
            attn = attn.view(count, self.num_heads, tokens, tokens)
        attn = torch.softmax(attn, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(count, tokens, dim)
        return self.proj(out)


def shift_mask(height, width, window_h, window_w, shift_h, shift_w, device=None):
    """Block attention between tokens that the cyclic shift brought together."""
    labels = torch.zeros((1, height, width, 1), device=device)
    slices_h = (slice(0, -window_h), slice(-window_h, -shift_h), slice(-shift_h, None)) if shift_h else (slice(None),)
    slices_w = (slice(0, -window_w), slice(-window_w, -shift_w), slice(-shift_w, None)) if shift_w else (slice(None),)
    label = 0
    for sh in slices_h:
        for sw in slices_w:
            labels[:, sh, sw, :] = label
            label += 1
    windows = window_partition(labels, window_h, window_w).squeeze(-1)
    return windows[:, None, :] != windows[:, :, None]


class SwinBlock(nn.Module):
    """Pre-norm window attention and FFN, with an optional half-window cyclic shift."""

    def __init__(self, dim, num_heads, window_size, shifted=False):
        super().__init__()
        self.window_size = window_size
        self.shifted = shifted
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, window_size, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, 4 * dim)

    def forward(self, x):
        """(B, H, W, D) -> (B, H, W, D)"""
        _, height, width, _ = x.shape
        # A token grid no larger than the window is one unshifted window
        window_h = min(self.window_size, height)
        window_w = min(self.window_size, width)
        shift_h = self.window_size // 2 if self.shifted and height > self.window_size else 0
        shift_w = self.window_size // 2 if self.shifted and width > self.window_size else 0

        shortcut = x
        x = self.norm1(x)
        pad_h = (-height) % window_h
        pad_w = (-width) % window_w
        x = F.pad(x, (0, 0, 0, pad_w, 0, pad_h))
        padded_h, padded_w = height + pad_h, width + pad_w

        mask = None
        if shift_h or shift_w:
            x = torch.roll(x, shifts=(-shift_h, -shift_w), dims=(1, 2))
            mask = shift_mask(padded_h, padded_w, window_h, window_w, shift_h, shift_w, x.device)

        windows = self.attn(window_partition(x, window_h, window_w), window_h, window_w, mask)
        x = window_reverse(windows, window_h, window_w, padded_h, padded_w)
        if shift_h or shift_w:
            x = torch.roll(x, shifts=(shift_h, shift_w), dims=(1, 2))
        x = shortcut + x[:, :height, :width]
        return x + self.mlp(self.norm2(x))


class OutputHead(nn.Module):
    """Per-token projection back to p_h x p_w x C pixels, cropped to H x W."""

    def __init__(self, embed_dim, channels, patch_size=(8, 8)):
        super().__init__()
        self.patch_size = tuple(patch_size)
        self.channels = channels
        self.proj = nn.Linear(embed_dim, self.patch_size[0] * self.patch_size[1] * channels)

    def forward(self, tokens, height, width):
        batch, rows, cols, _ = tokens.shape
        p_h, p_w = self.patch_size
        x = self.proj(tokens).view(batch, rows, cols, p_h, p_w, self.channels)
        x = x.permute(0, 1, 3, 2, 4, 5).reshape(batch, rows * p_h, cols * p_w, self.channels)
        return x[:, :height, :width]


class Backbone(nn.Module):
    """Patch embedding, L blocks (odd ones shifted) and the output head."""

    def __init__(self, channels, embed_dim=64, depth=4, num_heads=4, window_size=4, patch_size=(8, 8)):
        super().__init__()
        self.embed = PatchEmbed(channels, embed_dim, patch_size)
        self.blocks = nn.ModuleList([
            SwinBlock(embed_dim, num_heads, window_size, shifted=(i % 2 == 1))
            for i in range(depth)
        ])
        self.head = OutputHead(embed_dim, channels, patch_size)
        logger.debug(f"Backbone: D={embed_dim}, {depth} blocks, {num_heads} heads, window {window_size}")

    def forward(self, x):
        """(B, H, W, C) -> (B, H, W, C)"""
        _, height, width, _ = x.shape
        tokens = self.embed(x)
        for block in self.blocks:
            tokens = block(tokens)
        return self.head(tokens, height, width)
