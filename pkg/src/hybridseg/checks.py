"""Independent oracle suites runnable from the ``check`` command.

Each suite pits a fast implementation against a deliberately naive
counterpart: brute-force region membership for shift masks, dense
per-window attention, central finite differences for gradients, all-pairs
surface distances for the metrics, and byte-level layout checks for file
formats. The naive side is written from the definitions, not from the
code it checks.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import geometry
from .cnn import CnnConfig
from .data import SynthSpec, generate_case, read_volume, write_volume
from .geometry import MASK_VALUE, GridDims, TokenGrid, WindowSpec
from .metrics import asd, dice, hd95
from .model import HybridSegNet, ModelConfig, segmentation_loss
from .swin import SwinBlock, SwinEncoderConfig
from .volume import LabelVolume, Volume

SUITES = ("geometry", "attention", "gradients", "metrics", "io")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


# ---------------------------------------------------------------------------
# Brute-force oracles
# ---------------------------------------------------------------------------

def _region_of(coord: int, extent: int, win: int, shift: int) -> int:
    """Pre-shift contiguous segment of one axis coordinate: [0, n-win),
    [n-win, n-shift), [n-shift, n). Zero shift means a single segment."""
    if shift == 0:
        return 0
    if coord < extent - win:
        return 0
    if coord < extent - shift:
        return 1
    return 2


def brute_force_shift_mask(dims: tuple[int, int, int], spec: WindowSpec) -> torch.Tensor:
    """O(T^2)-per-window oracle: a pair is masked iff the two tokens came
    from different pre-shift contiguous blocks. Enumerates every window and
    every token pair explicitly."""
    d, h, w = dims
    wd, wh, ww = spec.window
    sd, sh, sw = spec.shift
    nw = (d // wd) * (h // wh) * (w // ww)
    t = wd * wh * ww
    mask = torch.zeros(nw, t, t)
    widx = 0
    for bd in range(d // wd):
        for bh in range(h // wh):
            for bw in range(w // ww):
                tokens = []
                for i in range(wd):
                    for j in range(wh):
                        for k in range(ww):
                            # post-shift grid position of this window slot
                            pd_, ph_, pw_ = bd * wd + i, bh * wh + j, bw * ww + k
                            # the token there came from this pre-shift position
                            qd, qh, qw = (pd_ + sd) % d, (ph_ + sh) % h, (pw_ + sw) % w
                            tokens.append((
                                _region_of(qd, d, wd, sd),
                                _region_of(qh, h, wh, sh),
                                _region_of(qw, w, ww, sw),
                            ))
                for a in range(t):
                    for b in range(t):
                        if tokens[a] != tokens[b]:
                            mask[widx, a, b] = MASK_VALUE
                widx += 1
    return mask


def dense_window_attention(windows: np.ndarray, mask: np.ndarray | None,
                           qkv_w: np.ndarray, qkv_b: np.ndarray,
                           proj_w: np.ndarray, proj_b: np.ndarray,
                           bias_table: np.ndarray | None, bias_index: np.ndarray | None,
                           heads: int) -> np.ndarray:
    """Per-window dense re-implementation of multi-head window attention in
    plain numpy, computed window by window and head by head."""
    nw_total, t, c = windows.shape
    hd = c // heads
    out = np.zeros_like(windows)
    nw_mask = mask.shape[0] if mask is not None else 1
    for wi in range(nw_total):
        x = windows[wi]
        qkv = x @ qkv_w.T + qkv_b  # (t, 3c)
        q, k, v = qkv[:, :c], qkv[:, c:2 * c], qkv[:, 2 * c:]
        merged = np.zeros((t, c))
        for head in range(heads):
            sl = slice(head * hd, (head + 1) * hd)
            scores = (q[:, sl] / np.sqrt(hd)) @ k[:, sl].T
            if bias_table is not None:
                scores = scores + bias_table[bias_index, head]
            if mask is not None:
                scores = scores + mask[wi % nw_mask]
            scores = scores - scores.max(axis=1, keepdims=True)
            attn = np.exp(scores)
            attn /= attn.sum(axis=1, keepdims=True)
            merged[:, sl] = attn @ v[:, sl]
        out[wi] = merged @ proj_w.T + proj_b
    return out


def brute_force_surface(mask: np.ndarray, spacing) -> list[tuple[float, float, float]]:
    """Definition-level 6-connectivity boundary extraction by explicit loops."""
    d, h, w = mask.shape
    pts = []
    for i in range(d):
        for j in range(h):
            for k in range(w):
                if not mask[i, j, k]:
                    continue
                boundary = False
                for di, dj, dk in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                                   (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    ni, nj, nk = i + di, j + dj, k + dk
                    if not (0 <= ni < d and 0 <= nj < h and 0 <= nk < w) \
                            or not mask[ni, nj, nk]:
                        boundary = True
                        break
                if boundary:
                    pts.append((i * spacing[0], j * spacing[1], k * spacing[2]))
    return pts


def brute_force_distances(pred_mask: np.ndarray, gt_mask: np.ndarray,
                          spacing) -> tuple[float, float] | None:
    """All-pairs (ASD, HD95) oracle with hand-rolled percentile interpolation."""
    sa = brute_force_surface(pred_mask, spacing)
    sb = brute_force_surface(gt_mask, spacing)
    if not sa or not sb:
        return None

    def nearest(p, pts):
        best = float("inf")
        for q in pts:
            dist = np.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2)
            best = min(best, dist)
        return best

    pool = [nearest(p, sb) for p in sa] + [nearest(q, sa) for q in sb]
    mean = float(np.mean(pool))  # pool order: pred->gt then gt->pred
    ranked = sorted(pool)
    n = len(ranked)
    pos = 0.95 * (n - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    p95 = ranked[lo] + (ranked[hi] - ranked[lo]) * frac
    return mean, float(p95)


def finite_difference_check(params: list[torch.nn.Parameter], loss_fn,
                            num_samples: int, seed: int = 0,
                            step: float = 1e-5) -> float:
    """Max relative error between autograd gradients and central finite
    differences over ``num_samples`` randomly sampled parameter entries.
    Everything must already be double precision."""
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    rng = np.random.default_rng(seed)
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    picks = rng.choice(total, size=min(num_samples, total), replace=False)
    worst = 0.0
    with torch.no_grad():
        for flat in sorted(int(p) for p in picks):
            pi = 0
            while flat >= sizes[pi]:
                flat -= sizes[pi]
                pi += 1
            param = params[pi]
            g = grads[pi]
            analytic = 0.0 if g is None else float(g.view(-1)[flat])
            original = float(param.view(-1)[flat])
            param.view(-1)[flat] = original + step
            plus = float(loss_fn())
            param.view(-1)[flat] = original - step
            minus = float(loss_fn())
            param.view(-1)[flat] = original
            fd = (plus - minus) / (2 * step)
            err = abs(fd - analytic) / max(abs(analytic), abs(fd), 1e-6)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def _random_geom_config(rng: np.random.Generator) -> tuple[tuple[int, int, int],
                                                           tuple[int, int, int]]:
    window = tuple(int(rng.integers(1, 5)) for _ in range(3))
    dims = tuple(int(w * rng.integers(1, 4)) for w in window)
    return dims, window


def check_geometry(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    ok = True
    for _ in range(100):
        dims, window = _random_geom_config(rng)
        c = int(rng.integers(1, 5))
        grid = TokenGrid(torch.from_numpy(rng.standard_normal(dims + (c,))))
        batch = geometry.window_partition(grid, WindowSpec(window))
        back = geometry.window_reverse(batch)
        ok &= torch.equal(back.values, grid.values)
    results.append(CheckResult("window partition/reverse roundtrip x100", ok))

    ok = True
    for _ in range(100):
        dims, window = _random_geom_config(rng)
        grid = TokenGrid(torch.from_numpy(rng.standard_normal(dims + (2,))))
        shift = tuple(int(rng.integers(0, n)) for n in dims)
        rolled = geometry.cyclic_shift(geometry.cyclic_shift(grid, shift),
                                       tuple(-s for s in shift))
        ok &= torch.equal(rolled.values, grid.values)
    results.append(CheckResult("cyclic shift inverse x100", ok))

    configs = [((4, 4, 4), WindowSpec((2, 2, 2), (1, 1, 1))),
               ((4, 1, 1), WindowSpec((2, 1, 1), (1, 0, 0)))]
    while len(configs) < 52:
        dims, window = _random_geom_config(rng)
        configs.append((dims, WindowSpec.half_shift(window)))
    ok = True
    for dims, spec in configs:
        fast = geometry.build_shift_mask(GridDims(*dims), spec)
        slow = brute_force_shift_mask(dims, spec)
        ok &= torch.equal(fast, slow)
    results.append(CheckResult(f"shift mask vs brute-force region oracle x{len(configs)}", ok))

    zero = geometry.build_shift_mask(GridDims(4, 4, 4), WindowSpec((2, 2, 2)))
    results.append(CheckResult("zero-shift mask identically zero",
                               bool((zero == 0).all())))
    return results


def check_attention(seed: int = 0) -> list[CheckResult]:
    torch.manual_seed(seed)
    results = []
    from .swin import WindowAttention

    dims, window = (4, 4, 4), (2, 2, 2)
    spec = WindowSpec.half_shift(window)
    mask = geometry.shift_attention_mask(dims, spec)
    attn_mod = WindowAttention(dim=8, heads=2, window=window)
    windows = torch.randn(mask.shape[0] * 2, 8, 8)
    attn, _ = attn_mod.attention_weights(windows, mask)
    row_sums = attn.sum(dim=-1)
    results.append(CheckResult("softmax rows sum to 1 within 1e-5",
                               bool((row_sums - 1).abs().max() < 1e-5)))
    masked = mask.repeat(2, 1, 1)[:, None].expand_as(attn) < 0
    max_masked = attn[masked].max().item() if masked.any() else 0.0
    results.append(CheckResult("masked-pair attention weight < 1e-8",
                               max_masked < 1e-8, f"max={max_masked:.3e}"))

    unbias = WindowAttention(dim=8, heads=2, window=window, use_relative_bias=False)
    ok = True
    for _ in range(20):
        x = torch.randn(3, 8, 8)
        perm = torch.randperm(8)
        direct = unbias(x)[:, perm]
        permuted = unbias(x[:, perm])
        ok &= bool((direct - permuted).abs().max() < 1e-6)
    results.append(CheckResult("permutation equivariance (bias off) x20", ok))

    torch.manual_seed(seed + 1)
    mod = WindowAttention(dim=6, heads=3, window=window)
    with torch.no_grad():
        mod.relative_bias_table.normal_(0, 0.5)
    x = torch.randn(mask.shape[0], 8, 6)
    got = mod(x, mask).detach().numpy()
    want = dense_window_attention(
        x.numpy(), mask.numpy(),
        mod.qkv.weight.detach().numpy(), mod.qkv.bias.detach().numpy(),
        mod.proj.weight.detach().numpy(), mod.proj.bias.detach().numpy(),
        mod.relative_bias_table.detach().numpy(), mod.relative_index.numpy(), heads=3)
    err = float(np.abs(got - want).max())
    results.append(CheckResult("attention vs dense per-window oracle within 1e-6",
                               err < 1e-6, f"max err={err:.3e}"))
    return results


def micro_model_config(num_classes: int = 2) -> ModelConfig:
    return ModelConfig(
        swin=SwinEncoderConfig(patch_size=(2, 2, 2), embed_dim=4, heads=(1, 1),
                               window=(2, 2, 2), num_stages=2, mlp_ratio=2.0),
        cnn=CnnConfig(levels=3, base_channels=4, num_classes=num_classes),
        in_channels=1,
    )


def check_gradients(seed: int = 0, samples: int = 60) -> list[CheckResult]:
    torch.manual_seed(seed)
    results = []

    block = SwinBlock(dim=4, heads=1, window=(2, 2, 2), shifted=True).double()
    x = torch.randn(1, 2, 2, 2, 4, dtype=torch.float64)
    weight = torch.randn(1, 2, 2, 2, 4, dtype=torch.float64)
    params = [p for p in block.parameters() if p.requires_grad]
    err = finite_difference_check(params, lambda: (block(x) * weight).sum(),
                                  num_samples=samples, seed=seed)
    results.append(CheckResult("micro swin block gradients, rel err < 1e-4",
                               err < 1e-4, f"max rel err={err:.3e}"))

    model = HybridSegNet(micro_model_config()).double()
    vol = torch.rand(1, 1, 8, 8, 8, dtype=torch.float64)
    labels = torch.randint(0, 2, (1, 8, 8, 8))
    params = [p for p in model.parameters() if p.requires_grad]
    err = finite_difference_check(params,
                                  lambda: segmentation_loss(model(vol), labels),
                                  num_samples=samples, seed=seed + 1)
    results.append(CheckResult("full micro model gradients, rel err < 1e-4",
                               err < 1e-4, f"max rel err={err:.3e}"))
    return results


def check_metrics(seed: int = 0, cases: int = 50) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    ok_asd = ok_hd = ok_dice = True
    tested = 0
    while tested < cases:
        shape = tuple(int(rng.integers(4, 10)) for _ in range(3))
        spacing = tuple(float(s) for s in rng.uniform(0.5, 2.0, size=3))
        a = rng.random(shape) < 0.3
        b = rng.random(shape) < 0.3
        if not a.any() or not b.any():
            continue
        tested += 1
        pa = LabelVolume(a.astype(np.int64), spacing)
        pb = LabelVolume(b.astype(np.int64), spacing)
        na, nb = int(a.sum()), int(b.sum())
        inter = int((a & b).sum())
        ok_dice &= dice(pa, pb, 1) == 2 * inter / (na + nb)
        oracle = brute_force_distances(a, b, spacing)
        ok_asd &= asd(pa, pb, 1) == oracle[0]
        ok_hd &= hd95(pa, pb, 1) == oracle[1]
    results = [
        CheckResult(f"dice vs hand count x{tested}", ok_dice),
        CheckResult(f"asd vs all-pairs oracle x{tested}", ok_asd),
        CheckResult(f"hd95 vs all-pairs oracle x{tested}", ok_hd),
    ]

    a = rng.random((8, 8, 8)) < 0.3
    b = rng.random((8, 8, 8)) < 0.3
    ok = True
    for c in (2.0, 3.5):
        base = tuple(float(s) for s in rng.uniform(0.5, 2.0, size=3))
        scaled = tuple(c * s for s in base)
        p1 = LabelVolume(a.astype(np.int64), base)
        g1 = LabelVolume(b.astype(np.int64), base)
        p2 = LabelVolume(a.astype(np.int64), scaled)
        g2 = LabelVolume(b.astype(np.int64), scaled)
        ok &= np.isclose(asd(p2, g2, 1), c * asd(p1, g1, 1), rtol=1e-12)
        ok &= np.isclose(hd95(p2, g2, 1), c * hd95(p1, g1, 1), rtol=1e-12)
        ok &= dice(p1, g1, 1) == dice(p2, g2, 1)
    results.append(CheckResult("spacing scaling law (distances x c, dice unchanged)", ok))
    return results


def check_io(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)

        values = rng.standard_normal((4, 4, 4)).astype(np.float32)
        vol = Volume(values, spacing=(1.0, 1.5, 2.0))
        path = tmp / "vol.cv2v"
        write_volume(path, vol)
        raw = path.read_bytes()
        results.append(CheckResult("CV2V header is 32 bytes + 256 payload for (4,4,4) f32",
                                   len(raw) == 32 + 256 and raw[:4] == b"CV2V"))
        back = read_volume(path)
        results.append(CheckResult("CV2V roundtrip bit-exact",
                                   isinstance(back, Volume)
                                   and np.array_equal(back.values[..., 0], values)
                                   and np.allclose(back.spacing, vol.spacing)))

        case = generate_case(SynthSpec(seed=seed, shape=(16, 16, 16), count=1), 0)
        again = generate_case(SynthSpec(seed=seed, shape=(16, 16, 16), count=1), 0)
        results.append(CheckResult("case generation deterministic",
                                   np.array_equal(case.image.values, again.image.values)
                                   and np.array_equal(case.label.values, again.label.values)))

        torch.manual_seed(seed)
        model = HybridSegNet(micro_model_config())
        from .checkpoint import load_checkpoint, save_checkpoint
        ckpt = tmp / "model.ckpt"
        save_checkpoint(ckpt, model, step=7, seed=seed)
        loaded, header = load_checkpoint(ckpt)
        x = torch.rand(1, 1, 8, 8, 8)
        with torch.no_grad():
            same = torch.equal(model(x), loaded(x))
        results.append(CheckResult("checkpoint reload reproduces forward bit-exactly",
                                   same and header["step"] == 7))
    return results


def run_suite(name: str, seed: int = 0) -> list[CheckResult]:
    table = {
        "geometry": check_geometry,
        "attention": check_attention,
        "gradients": check_gradients,
        "metrics": check_metrics,
        "io": check_io,
    }
    if name not in table:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
    return table[name](seed=seed)
