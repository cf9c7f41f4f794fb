import numpy as np
import pytest
import torch


def central_difference(fn, param: torch.Tensor, index, h: float = 1e-5) -> float:
    """Numerical d fn / d param[index] by central differences (param modified in place, restored)."""
    with torch.no_grad():
        orig = param[index].item()
        param[index] = orig + h
        up = fn().item()
        param[index] = orig - h
        down = fn().item()
        param[index] = orig
    return (up - down) / (2 * h)


def relative_error(a: float, n: float, floor: float = 1e-6) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def sample_parameters(model: torch.nn.Module, count: int, rng: np.random.Generator, min_grad: float = 1e-5):
    """Pick ``count`` distinct (name, param, index) entries whose populated ``.grad`` exceeds ``min_grad``.

    Entries with a structurally zero gradient (single-key attention, conv taps
    that only ever see padding) are excluded; see ``structural_zeros``.
    """
    cands = [(n, p, tuple(idx)) for n, p in model.named_parameters() if p.grad is not None
             for idx in torch.nonzero(p.grad.abs() > min_grad).tolist()]
    assert len(cands) >= count, f"only {len(cands)} entries carry gradient"
    return [cands[k] for k in rng.choice(len(cands), size=count, replace=False)]


def structural_zeros(model: torch.nn.Module, count: int, rng: np.random.Generator):
    cands = [(n, p, tuple(idx)) for n, p in model.named_parameters() if p.grad is not None
             for idx in torch.nonzero(p.grad == 0).tolist()]
    if not cands:
        return []
    return [cands[k] for k in rng.choice(len(cands), size=min(count, len(cands)), replace=False)]


def randomize_affine(model: torch.nn.Module, seed: int = 0) -> None:
    """Perturb 1-d parameters (norm scales, biases) so channel sums are not degenerate."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for n, p in model.named_parameters():
            if p.dim() == 1:
                noise = torch.randn(p.shape, generator=g, dtype=p.dtype) * 0.5
                p.copy_(noise + (1.0 if "norm" in n and n.endswith("weight") else 0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
