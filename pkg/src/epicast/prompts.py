"""Prompted spatio-temporal graph: learnable cross-slice edges and time gates.

The token window's w per-day mobility graphs are stacked into one block
adjacency over w*N nodes.  Two learnable scalars add direction-aware edges
between the same region at consecutive time slices (forward: past -> present,
backward: present -> past), shared across all regions and slice pairs.  A
length-w gate vector weights the per-slice embeddings when they are blended
into the final token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Parameter, Tensor, add, constant, mul

FORWARD_INIT = 1.0
BACKWARD_INIT = 0.5
GATE_INIT = 1.0


@dataclass
class PromptParams:
    """Learnable forward/backward edge weights and per-slice gating weights."""

    w_forward: Parameter  # scalar
    w_backward: Parameter  # scalar
    gamma: Parameter  # (w,)

    @property
    def window(self) -> int:
        return self.gamma.data.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.w_forward, self.w_backward, self.gamma]

    def summary(self) -> dict:
        """Final weights for the explainability report (raw and squashed gates)."""
        gates = 1.0 / (1.0 + np.exp(-self.gamma.data))
        return {
            "forward_edge": float(self.w_forward.data),
            "backward_edge": float(self.w_backward.data),
            "gamma": [float(g) for g in self.gamma.data],
            "gate": [float(g) for g in gates],
        }


def init_prompts(w: int) -> PromptParams:
    """Fresh prompt parameters: forward 1.0, backward 0.5, gates all 1.0."""
    if w < 1:
        raise ValueError(f"window length must be >= 1, got {w}")
    return PromptParams(
        w_forward=Parameter(FORWARD_INIT, name="prompts.forward"),
        w_backward=Parameter(BACKWARD_INIT, name="prompts.backward"),
        gamma=Parameter(np.full(w, GATE_INIT), name="prompts.gamma"),
    )


@dataclass
class PromptedGraph:
    """Block adjacency over w time slices of N regions each."""

    n_slices: int
    n_regions: int
    block_adjacency: Tensor  # (w*N, w*N), differentiable w.r.t. the prompt scalars
    slice_offsets: list[range]  # node-index range of each slice


def _cross_slice_masks(w: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    size = w * n
    fwd = np.zeros((size, size))
    bwd = np.zeros((size, size))
    for k in range(1, w):
        for i in range(n):
            fwd[(k - 1) * n + i, k * n + i] = 1.0
            bwd[k * n + i, (k - 1) * n + i] = 1.0
    return fwd, bwd


def build_prompted_graph(A_window: np.ndarray, prompts: PromptParams) -> PromptedGraph:
    """Assemble the (w*N)^2 block matrix from per-slice adjacencies and prompts.

    Within-slice blocks are the given adjacencies; the only cross-slice
    entries link each region to itself in the neighbouring slices, all drawn
    from the two shared learnable scalars.
    """
    A_window = np.asarray(A_window, dtype=np.float64)
    if A_window.ndim != 3 or A_window.shape[1] != A_window.shape[2]:
        raise ValueError(f"expected (w, N, N) adjacency stack, got {A_window.shape}")
    w, n, _ = A_window.shape
    if w != prompts.window:
        raise ValueError(f"adjacency stack has {w} slices but prompts cover {prompts.window}")
    size = w * n
    base = np.zeros((size, size))
    for k in range(w):
        base[k * n : (k + 1) * n, k * n : (k + 1) * n] = A_window[k]
    fwd_mask, bwd_mask = _cross_slice_masks(w, n)
    block = add(
        add(constant(base), mul(prompts.w_forward, constant(fwd_mask))),
        mul(prompts.w_backward, constant(bwd_mask)),
    )
    return PromptedGraph(
        n_slices=w,
        n_regions=n,
        block_adjacency=block,
        slice_offsets=[range(k * n, (k + 1) * n) for k in range(w)],
    )
