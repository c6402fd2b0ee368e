"""Reverse-mode gradients for the filter and its building blocks.

Every primitive has a float64 forward and a hand-written vector-Jacobian
product. The full filter's backward pass walks the intermediates stored by
:func:`agfilter.guided.forward` in reverse, so forward and backward always
agree on the values they see. :func:`gradcheck` compares any registered op
against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .attention import AttentionCache, AttentionWeights, attention_forward
from .boxfilter import box_mean, box_mean_adjoint, box_sum, check_radius
from .errors import AttentionOutOfRange, DegenerateDenominator, DivergedLoss, ShapeMismatch, ValidationError
from .guided import FilterParams, ForwardCache, forward
from .tensor import Tensor, _sigmoid, resize_adjoint, resize_array

Arrays = dict[str, np.ndarray]


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the channel axis where the forward input was broadcast."""
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[1:] == shape[1:]:
        return g.sum(axis=0, keepdims=True)
    raise ShapeMismatch(f"cannot reduce gradient {g.shape} to {shape}")


# -- primitives --------------------------------------------------------------


@dataclass(frozen=True)
class Primitive:
    """A differentiable op on float64 ``(C, H, W)`` arrays.

    ``forward(xs, **params)`` returns the output array and
    ``vjp(xs, upstream, **params)`` returns one gradient per differentiable input.
    """

    name: str
    inputs: tuple[str, ...]
    forward: Callable[..., np.ndarray]
    vjp: Callable[..., Arrays]
    linear: bool = False


def _wsum_vjp(xs, g, r):
    return {"x": box_sum(g, r)}


def _wmean_vjp(xs, g, r):
    return {"x": box_mean_adjoint(g, r)}


def _resize_vjp(xs, g, out_h, out_w):
    _, h, w = xs["x"].shape
    return {"x": resize_adjoint(g, h, w)}


def _binary(fn, grads):
    def fwd(xs):
        return fn(xs["a"], xs["b"])

    def vjp(xs, g):
        ga, gb = grads(xs["a"], xs["b"], g)
        return {"a": unbroadcast(ga, xs["a"].shape), "b": unbroadcast(gb, xs["b"].shape)}

    return fwd, vjp


_add = _binary(np.add, lambda a, b, g: (g, g))
_sub = _binary(np.subtract, lambda a, b, g: (g, -g))
_mul = _binary(np.multiply, lambda a, b, g: (g * b, g * a))
_div = _binary(np.divide, lambda a, b, g: (g / b, -g * a / (b * b)))


def _relu_vjp(xs, g):
    return {"x": g * (xs["x"] > 0)}


def _sigmoid_vjp(xs, g):
    s = _sigmoid(xs["x"])
    return {"x": g * s * (1.0 - s)}


def _pow_vjp(xs, g, exponent):
    return {"x": g * exponent * np.power(xs["x"], exponent - 1.0)}


def _attention_fwd(xs):
    c = xs["O"].shape[0]
    return attention_forward(xs["O"], xs["I"], AttentionWeights.unflatten(xs["w"], c)).T


def _attention_vjp(xs, g):
    c = xs["O"].shape[0]
    w = AttentionWeights.unflatten(xs["w"], c)
    gO, gI, gw = attention_backward(attention_forward(xs["O"], xs["I"], w), w, g)
    return {"O": gO, "I": gI, "w": gw}


def _ag_fwd(xs, r, lam):
    return forward(xs["I"], xs["O"], xs["T"], r, lam).out


def _ag_vjp(xs, g, r, lam):
    gb = ag_filter_backward(forward(xs["I"], xs["O"], xs["T"], r, lam), g)
    return {"I": gb.dI, "O": gb.dO, "T": gb.dT}


PRIMITIVES: dict[str, Primitive] = {
    p.name: p
    for p in [
        Primitive("windowed_sum", ("x",), lambda xs, r: box_sum(xs["x"], r), _wsum_vjp, linear=True),
        Primitive("windowed_mean", ("x",), lambda xs, r: box_mean(xs["x"], r), _wmean_vjp, linear=True),
        Primitive(
            "bilinear_resize",
            ("x",),
            lambda xs, out_h, out_w: resize_array(xs["x"], out_h, out_w),
            _resize_vjp,
            linear=True,
        ),
        Primitive("add", ("a", "b"), *_add, linear=True),
        Primitive("sub", ("a", "b"), *_sub, linear=True),
        Primitive("mul", ("a", "b"), *_mul),
        Primitive("div", ("a", "b"), *_div),
        Primitive("scale", ("x",), lambda xs, factor: xs["x"] * factor, lambda xs, g, factor: {"x": g * factor}, linear=True),
        Primitive("relu", ("x",), lambda xs: np.maximum(xs["x"], 0.0), _relu_vjp),
        Primitive("sigmoid", ("x",), lambda xs: _sigmoid(xs["x"]), _sigmoid_vjp),
        Primitive("pow", ("x",), lambda xs, exponent: np.power(xs["x"], exponent), _pow_vjp),
        Primitive("attention_block", ("O", "I", "w"), _attention_fwd, _attention_vjp),
        Primitive("ag_filter", ("I", "O", "T"), _ag_fwd, _ag_vjp),
    ]
}


def vjp_primitive(name: str, inputs: Arrays, upstream: np.ndarray, **params) -> Arrays:
    """``upstream^T J`` for the named primitive, one array per input."""
    try:
        prim = PRIMITIVES[name]
    except KeyError:
        raise ValidationError(f"unknown primitive {name!r}; known: {sorted(PRIMITIVES)}") from None
    xs = {k: np.asarray(inputs[k], dtype=np.float64) for k in prim.inputs}
    out = prim.forward(xs, **params)
    if np.shape(upstream) != out.shape:
        raise ShapeMismatch(f"upstream {np.shape(upstream)} does not match output {out.shape}")
    return prim.vjp(xs, np.asarray(upstream, dtype=np.float64), **params)


# -- attention block ---------------------------------------------------------


def attention_backward(cache: AttentionCache, w: AttentionWeights, gT: np.ndarray):
    """Gradients w.r.t. ``O``, ``I_l`` and the flattened weight vector."""
    T = cache.T
    gz = (gT * T * (1.0 - T))[0]
    g_head = np.einsum("hw,chw->c", gz, cache.hidden)
    g_bh = gz.sum()
    g_pre = w.head[:, None, None] * gz[None] * (cache.pre > 0)
    g_bo = g_pre.sum(axis=(1, 2))
    g_wo = np.einsum("ohw,chw->oc", g_pre, cache.O)
    g_wi = np.einsum("ohw,chw->oc", g_pre, cache.I)
    gO = np.einsum("oc,ohw->chw", w.branch_o, g_pre)
    gI = np.einsum("oc,ohw->chw", w.branch_i, g_pre)
    gw = np.concatenate([g_wo.ravel(), g_bo, g_wi.ravel(), g_bo, g_head, [g_bh]])
    return gO, gI, gw


# -- full filter -------------------------------------------------------------


@dataclass
class GradBundle:
    dI: np.ndarray
    dO: np.ndarray
    dT: np.ndarray


def ag_filter_backward(fc: ForwardCache, g: np.ndarray) -> GradBundle:
    """Backward pass of :func:`agfilter.guided.forward` from its stored intermediates."""
    c = fc.coeffs
    r = fc.r
    I = fc.guide
    _, H, W = I.shape
    _, h, w = c.a.shape
    if g.shape != fc.out.shape:
        raise ShapeMismatch(f"upstream {g.shape} does not match output {fc.out.shape}")

    # out = A_high * I + B_high
    dI = unbroadcast(g * fc.A_high, I.shape)
    gA = resize_adjoint(g * I, h, w)
    gB = resize_adjoint(g, h, w)
    ga = box_mean_adjoint(gA, r)
    gb = box_mean_adjoint(gB, r)

    # b = (mTO - a mTI) / mT
    g_mTO = gb / c.mT
    ga = ga - gb * c.mTI / c.mT
    g_mTI = -gb * c.a / c.mT
    g_mT = -gb * c.b / c.mT

    # a = num / den
    g_num = ga / c.den
    g_den = -ga * c.a / c.den
    # num = mT2IO - k mTO ; den = mT2II - k mTI + lam
    g_mT2IO = g_num
    g_mT2II = g_den
    g_k = -g_num * c.mTO - g_den * c.mTI
    g_mTO = g_mTO - g_num * c.k
    g_mTI = g_mTI - g_den * c.k

    # k = sT2I / sT ; mT = sT / N
    g_sT2I = g_k / c.sT
    g_sT = -g_k * c.k / c.sT + g_mT / c.N

    # back through the window statistics to the per-pixel products
    p_TI = box_mean_adjoint(g_mTI, r)
    p_TO = box_mean_adjoint(g_mTO, r)
    p_T2IO = box_mean_adjoint(g_mT2IO, r)
    p_T2II = box_mean_adjoint(g_mT2II, r)
    p_T2I = box_sum(g_sT2I, r)
    p_T = box_sum(unbroadcast(g_sT, (1, h, w)), r)

    T, Il, O = c.T, c.I, c.O
    T2 = T * T
    dT = p_T + unbroadcast(
        p_TI * Il + p_TO * O + 2.0 * T * (p_T2IO * Il * O + p_T2II * Il * Il + p_T2I * Il),
        T.shape,
    )
    dIl = p_TI * T + T2 * (p_T2IO * O + 2.0 * p_T2II * Il + p_T2I)
    dO = p_TO * T + p_T2IO * T2 * Il
    dI = dI + resize_adjoint(unbroadcast(dIl, (I.shape[0], h, w)), H, W)
    return GradBundle(dI=dI, dO=unbroadcast(dO, O.shape), dT=dT)


def ag_filter_vjp(I: Tensor, O: Tensor, T: Tensor, p: FilterParams, upstream) -> GradBundle:
    """Gradients of ``<filter(I, O, T), upstream>`` w.r.t. each filter input (float64)."""
    fc = forward(*(x.data.astype(np.float64) for x in (I, O, T)), p.radius, p.regularization)
    up = upstream.data if isinstance(upstream, Tensor) else upstream
    return ag_filter_backward(fc, np.asarray(up, dtype=np.float64))


# -- gradient check ----------------------------------------------------------


@dataclass
class GradcheckReport:
    op: str
    max_rel_error: dict[str, float]
    nan_count: int = 0
    probes: dict[str, int] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.nan_count == 0 and self.worst <= tol


def gradcheck(
    name: str,
    inputs: Arrays,
    epsilon: float = 1e-3,
    params: Optional[dict] = None,
    probes: int = 64,
    seed: int = 0,
) -> GradcheckReport:
    """Compare analytic VJPs with central differences of ``<f(x), u>``.

    ``u`` is a random upstream. Inputs with at most ``probes`` coordinates are
    checked in full, larger ones on a random subset of ``probes`` coordinates.
    The relative error uses ``max(|analytic|, |numeric|, 1e-8)`` as denominator.
    """
    if not 1e-6 <= epsilon <= 1e-1:
        raise ValidationError(f"epsilon must lie in [1e-6, 1e-1], got {epsilon}")
    params = params or {}
    prim = PRIMITIVES.get(name)
    if prim is None:
        raise ValidationError(f"unknown op {name!r}; known: {sorted(PRIMITIVES)}")
    rng = np.random.default_rng(seed)
    xs = {k: np.array(inputs[k], dtype=np.float64) for k in prim.inputs}
    out = prim.forward(xs, **params)
    u = rng.standard_normal(out.shape)
    analytic = prim.vjp(xs, u, **params)

    def loss(x):
        return float(np.sum(prim.forward(x, **params) * u))

    errors: dict[str, float] = {}
    counts: dict[str, int] = {}
    nans = 0
    for key in prim.inputs:
        flat = xs[key].reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= probes else rng.choice(n, size=probes, replace=False)
        worst = 0.0
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + epsilon
            plus = loss(xs)
            flat[idx] = orig - epsilon
            minus = loss(xs)
            flat[idx] = orig
            numeric = (plus - minus) / (2.0 * epsilon)
            exact = analytic[key].reshape(-1)[idx]
            if not (np.isfinite(numeric) and np.isfinite(exact)):
                nans += 1
                continue
            denom = max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, abs(exact - numeric) / denom)
        errors[key] = worst
        counts[key] = len(coords)
    return GradcheckReport(name, errors, nans, counts)


def sample_inputs(name: str, seed: int = 0, size: int = 6) -> tuple[Arrays, dict]:
    """Seeded well-conditioned inputs and parameters for each registered op.

    Values are kept away from non-differentiable points (ReLU kinks, division
    by small numbers) so central differences are meaningful.
    """
    rng = np.random.default_rng(seed)
    shape = (2, size, size)

    def away_from_zero(n_shape):
        x = rng.uniform(0.1, 1.0, n_shape)
        return x * rng.choice([-1.0, 1.0], n_shape)

    if name in ("windowed_sum", "windowed_mean"):
        return {"x": rng.uniform(-1, 1, shape)}, {"r": 2}
    if name == "bilinear_resize":
        return {"x": rng.uniform(-1, 1, shape)}, {"out_h": 2 * size + 1, "out_w": 2 * size - 1}
    if name in ("add", "sub", "mul", "div"):
        b = rng.uniform(0.5, 1.5, (1, size, size))
        return {"a": rng.uniform(-1, 1, shape), "b": b}, {}
    if name == "scale":
        return {"x": rng.uniform(-1, 1, shape)}, {"factor": 1.7}
    if name in ("relu", "sigmoid"):
        return {"x": away_from_zero(shape) * 2.0}, {}
    if name == "pow":
        return {"x": rng.uniform(0.2, 1.0, shape)}, {"exponent": 1.0 / 2.2}
    if name == "attention_block":
        c = 3
        while True:
            O = rng.uniform(0, 1, (c, size, size))
            I = rng.uniform(0, 1, (c, size, size))
            w = rng.normal(0, 1, 2 * c * c + 3 * c + 1)
            pre = attention_forward(O, I, AttentionWeights.unflatten(w, c)).pre
            if np.abs(pre).min() > 0.05:
                return {"O": O, "I": I, "w": w}, {}
    if name == "ag_filter":
        H = 2 * size
        return (
            {
                "I": rng.uniform(0, 1, (2, H, H)),
                "O": rng.uniform(0, 1, (2, size, size)),
                "T": rng.uniform(0.2, 0.9, (1, size, size)),
            },
            {"r": 2, "lam": 0.01},
        )
    raise ValidationError(f"unknown op {name!r}; known: {sorted(PRIMITIVES)}")


# -- fitting -----------------------------------------------------------------


def _fit_loss_and_grad(I, I_low, O, target, w, p):
    att = attention_forward(O, I_low, w)
    fc = forward(I, O, att.T, p.radius, p.regularization)
    diff = fc.out - target
    loss = float(np.mean(diff * diff))
    g = 2.0 * diff / diff.size
    gb = ag_filter_backward(fc, g)
    _, _, gw = attention_backward(att, w, gb.dT)
    return loss, gw


def fit_attention(
    I: Tensor,
    O: Tensor,
    target: Tensor,
    w0: AttentionWeights,
    steps: int,
    lr: float,
    p: FilterParams = FilterParams(),
    callback: Optional[Callable[[int, float], None]] = None,
) -> tuple[AttentionWeights, list[float]]:
    """Plain gradient descent on the attention weights.

    Minimises the mean squared error between the filter output (with the
    attention map computed from ``O`` and the downsampled guidance) and
    ``target``. Returns the final weights and ``steps + 1`` losses: the
    initial loss followed by the loss after each update.
    """
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    if not lr >= 0:
        raise ValidationError("learning rate must be >= 0")
    Ia = I.data.astype(np.float64)
    Oa = O.data.astype(np.float64)
    ta = target.data.astype(np.float64)
    if ta.shape[1:] != Ia.shape[1:]:
        raise ShapeMismatch("target must be at guidance resolution")
    I_low = resize_array(Ia, O.height, O.width)
    check_radius(O.height, O.width, p.radius)
    c = O.channels
    w = w0
    vec = w0.flatten()
    history = []
    for step in range(steps + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                loss, gw = _fit_loss_and_grad(Ia, I_low, Oa, ta, w, p)
        except (AttentionOutOfRange, DegenerateDenominator) as exc:
            # saturated attention or collapsed windows: the iterate has left the valid region
            raise DivergedLoss(f"fit diverged at step {step}: {exc}") from exc
        if not (np.isfinite(loss) and np.isfinite(gw).all()):
            raise DivergedLoss(f"loss became non-finite at step {step}")
        history.append(loss)
        if callback is not None:
            callback(step, loss)
        if step == steps:
            break
        if lr == 0:
            continue
        vec = vec - lr * gw
        w = AttentionWeights.unflatten(vec, c)
    return w, history
