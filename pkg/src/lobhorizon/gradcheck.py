"""Finite-difference audit of every differentiable component.

Single layers are checked with central differences at step 1e-5 against a
1e-6 tolerance.  Recurrent and full-model compositions are checked against
1e-4 at step 3e-5 (2^-15 after rounding).  Their smallest resolvable
entries, near 1e-7, put roundoff at a few 1e-5 relative for that step,
while truncation stays near 1e-5; a step of 1e-4 also lets a parameter
with a large gradient push a downstream leaky-ReLU input across its kink.
``composition_order=4`` switches compositions to the five-point stencil.

Leaky ReLU and max-pool are not differentiable everywhere.  Each draw is
therefore re-sampled until the forward pass keeps a margin of at least
``kink_margin`` from every kink, which keeps the central difference on a
layer's own inputs clear of them.  Draws must also be resolvable: every nonzero gradient entry must be
at least ``min_grad`` (layers) or ``min_grad_composition`` (compositions)
in magnitude.  Smaller entries come from cancellation or from the 0.01
leaky slope compounding through the conv stack; a central difference on an
O(1) loss resolves them only to roundoff, about 1e-11 absolute.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import tensor as tn
from .decoders import DecoderConfig, attention_score
from .encoder import DeepLobEncoder, EncoderConfig
from .errors import ConfigError
from .layers import Conv2d, Dense, InceptionBlock, LstmCell
from .model import ForecastModel, ModelConfig
from .tensor import Tape, Tensor


def _step(eps: float) -> float:
    return 2.0 ** math.ceil(math.log2(eps))  # the step grad_check actually takes


@dataclass
class GradcheckConfig:
    window: int = 6
    features: int = 8
    conv_filters: int = 2
    inception_filters: int = 2
    hidden: int = 3
    horizon_steps: int = 3
    embedding: int = 2
    batch: int = 2
    model_batch: int = 4
    seeds: int = 10
    layer_tol: float = 1e-6
    composition_tol: float = 1e-4
    layer_eps: float = 1e-5
    composition_eps: float = 3e-5
    composition_order: int = 2
    kink_margin: float = 1e-3
    min_grad: float = 1e-3
    min_grad_composition: float = 1e-7
    max_redraws: int = 200

    def validate(self) -> None:
        if self.window > 8 or self.hidden > 8:
            raise ConfigError(f"gradcheck needs a reduced config (window <= 8, hidden <= 8), "
                              f"got window={self.window}, hidden={self.hidden}")
        if self.features % 4 or self.features < 4:
            raise ConfigError(f"features={self.features} must be a positive multiple of 4")
        if min(self.window, self.conv_filters, self.inception_filters, self.hidden, self.horizon_steps,
               self.embedding, self.batch, self.model_batch, self.seeds) < 1:
            raise ConfigError("gradcheck sizes must all be >= 1")
        if self.composition_order not in (2, 4):
            raise ConfigError(f"composition_order must be 2 or 4, got {self.composition_order}")
        if not (self.layer_eps > 0 and self.composition_eps > 0):
            raise ConfigError("finite-difference steps must be positive")
        # the stencil must stay inside the kink-free margin around every draw
        reach = max(_step(self.layer_eps), self.composition_order // 2 * _step(self.composition_eps))
        if self.kink_margin <= reach:
            raise ConfigError(f"kink_margin={self.kink_margin} must exceed the stencil reach {reach:.2e}")

    def model_config(self, kind: str, score: str = "dot") -> ModelConfig:
        return ModelConfig(
            EncoderConfig(conv_filters=self.conv_filters, inception_filters=self.inception_filters,
                          lstm_hidden=self.hidden, window=self.window, features=self.features),
            DecoderConfig(kind=kind, hidden=self.hidden, horizon_steps=self.horizon_steps, score=score,
                          embedding=self.embedding))


@dataclass
class Probe:
    """A scalar function of some leaf tensors, ready for finite differences."""

    f: Callable[[], Tensor]
    leaves: dict[str, Tensor]


@dataclass
class ComponentResult:
    name: str
    kind: str  # "layer" | "composition"
    max_error: float
    tolerance: float
    worst_leaf: str = ""

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


@dataclass
class GradcheckReport:
    results: list[ComponentResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> list[ComponentResult]:
        return [r for r in self.results if not r.passed]

    def lines(self) -> list[str]:
        return [f"{r.name:<22} {r.kind:<12} max_rel_err={r.max_error:.3e} tol={r.tolerance:.0e} "
                f"{'PASS' if r.passed else 'FAIL'}{'' if r.passed else ' (' + r.worst_leaf + ')'}"
                for r in self.results]


def _leaf(rng, shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    # random weights keep invariants such as "softmax rows sum to 1" from hiding errors
    return tn.sum_(out * Tensor(weights))


def _projection(rng, shape) -> np.ndarray:
    """Random signs and magnitudes in [0.5, 1.5].

    Projection weights near zero would make gradient entries near zero, where
    a central difference resolves only roundoff.
    """
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.5, 1.5, size=shape)


def _elementwise(op) -> Callable:
    def build(rng, gc):
        x = _leaf(rng, (3, 4))
        w = _projection(rng, (3, 4))
        return Probe(lambda: _weighted_sum(op(x), w), {"x": x})
    return build


def _binary(op) -> Callable:
    def build(rng, gc):
        a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
        w = _projection(rng, (3, 4))
        return Probe(lambda: _weighted_sum(op(a, b), w), {"a": a, "b": b})
    return build


def _scalar_ops(rng, gc):
    a = _leaf(rng, (3, 4))
    w = _projection(rng, (3, 4))
    return Probe(lambda: _weighted_sum(tn.mul(tn.add(a, 0.75), -1.25), w), {"a": a})


def _matmul(rng, gc):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (4, 2))
    w = _projection(rng, (3, 2))
    return Probe(lambda: _weighted_sum(tn.matmul(a, b), w), {"a": a, "b": b})


def _batched_matmul(rng, gc):
    a, b = _leaf(rng, (2, 3, 4)), _leaf(rng, (2, 4, 2))
    w = _projection(rng, (2, 3, 2))
    return Probe(lambda: _weighted_sum(tn.matmul(a, b), w), {"a": a, "b": b})


def _log(rng, gc):
    x = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    w = _projection(rng, (3, 4))
    return Probe(lambda: _weighted_sum(tn.log(x, 1e-12), w), {"x": x})


def _shape_ops(rng, gc):
    x, y = _leaf(rng, (2, 3, 4)), _leaf(rng, (2, 3, 4))

    def f():
        joined = tn.concat([x, y], axis=2)  # [2, 3, 8]
        stacked = tn.stack([tn.transpose(joined, (0, 2, 1)), tn.reshape(joined, (2, 8, 3))], axis=0)
        picked = stacked[:, 1, 2:7]
        return _weighted_sum(tn.expand(tn.mean(picked, axis=2), 1, 3), w)

    w = _projection(rng, (2, 3, 5))
    return Probe(f, {"x": x, "y": y})


def _conv(layout: str, padding: str, stride):
    def build(rng, gc):
        layer = Conv2d(2, 3, (3, 2), stride, padding, rng, layout)
        layer.bias.data[...] = rng.normal(size=3)
        shape = (2, 2, 5, 6) if layout == "NCHW" else (2, 5, 6, 2)
        x = _leaf(rng, shape)
        out_shape = tn.conv2d(x, layer.kernel, layer.bias, stride, padding, layout).shape
        w = _projection(rng, out_shape)
        return Probe(lambda: _weighted_sum(layer(x), w), {"x": x, "kernel": layer.kernel, "bias": layer.bias})
    return build


def _max_pool(rng, gc):
    x = _leaf(rng, (2, 6, 1, 3))
    w = _projection(rng, (2, 6, 1, 3))
    return Probe(lambda: _weighted_sum(tn.max_pool2d(x, (3, 1), "same", "NHWC"), w), {"x": x})


def _dense(rng, gc):
    layer = Dense(4, 3, rng)
    layer.bias.data[...] = rng.normal(size=3)
    x = _leaf(rng, (2, 4))
    w = _projection(rng, (2, 3))
    return Probe(lambda: _weighted_sum(layer(x), w), {"x": x, "weight": layer.weight, "bias": layer.bias})


def _inception(rng, gc):
    block = InceptionBlock(gc.conv_filters, gc.inception_filters, rng, layout="NHWC")
    leaves = {"x": _leaf(rng, (gc.batch, gc.window, 1, gc.conv_filters))}
    for name, p in block.named_parameters():
        p.data[...] = rng.uniform(0.1, 0.5, size=p.shape) if name.endswith("bias") else rng.normal(0, 0.5, size=p.shape)
        leaves[name] = p
    w = _projection(rng, (gc.batch, gc.window, 1, 3 * gc.inception_filters))
    return Probe(lambda: _weighted_sum(block(leaves["x"]), w), leaves)


def _score(kind: str):
    def build(rng, gc):
        h = gc.hidden
        # half-scale draws keep the softmax away from saturation
        enc = _leaf(rng, (gc.batch, gc.window, h), 0.5)
        dec = _leaf(rng, (gc.batch, h), 0.5)
        leaves = {"h_enc": enc, "h_dec": dec}
        w_a = v = None
        if kind == "general":
            w_a = leaves["w_a"] = _leaf(rng, (h, h), 0.5)
        elif kind == "concat":
            w_a = leaves["w_a"] = _leaf(rng, (h, 2 * h), 0.5)
            v = leaves["v"] = _leaf(rng, (h, 1), 0.5)
        w = _projection(rng, (gc.batch, gc.window))
        return Probe(lambda: _weighted_sum(tn.softmax(attention_score(kind, dec, enc, w_a, v), axis=1), w), leaves)
    return build


def _path_loss(rng, gc):
    from .training import cross_entropy_path_loss
    logits = _leaf(rng, (2, 3, 3))
    y = rng.integers(0, 3, size=(2, 3))
    return Probe(lambda: cross_entropy_path_loss(tn.softmax(logits, axis=2), y), {"logits": logits})


def _lstm_step(rng, gc):
    cell = LstmCell(4, gc.hidden, rng)
    x, h, c = _leaf(rng, (gc.batch, 4)), _leaf(rng, (gc.batch, gc.hidden)), _leaf(rng, (gc.batch, gc.hidden))
    w1, w2 = _projection(rng, (gc.batch, gc.hidden)), _projection(rng, (gc.batch, gc.hidden))

    def f():
        h2, c2 = cell.step(x, h, c)
        return _weighted_sum(h2, w1) + _weighted_sum(c2, w2)

    return Probe(f, {"x": x, "h": h, "c": c, "weight": cell.weight, "bias": cell.bias})


def _lstm_unroll(rng, gc):
    cell = LstmCell(4, gc.hidden, rng)
    cell.weight.data[...] = rng.normal(0, 0.5, size=cell.weight.shape)
    seq = _leaf(rng, (gc.batch, gc.window, 4))
    zeros = np.zeros((gc.batch, gc.hidden))
    w = _projection(rng, (gc.batch, gc.window, gc.hidden))

    def f():
        outs, _, _ = cell.run(seq, Tensor(zeros), Tensor(zeros))
        return _weighted_sum(tn.stack(outs, axis=1), w)

    return Probe(f, {"seq": seq, "weight": cell.weight, "bias": cell.bias})


def _randomize_encoder_style(named, rng) -> None:
    # positive conv biases keep most leaky units in the linear regime, so some
    # gradient survives all nine conv layers
    for name, p in named:
        conv_bias = name.startswith(("encoder.conv", "encoder.inception", "conv", "inception")) and name.endswith("bias")
        p.data[...] = rng.uniform(0.1, 0.5, size=p.shape) if conv_bias else rng.normal(0, 0.5, size=p.shape)


def _encoder(rng, gc):
    cfg = gc.model_config("attention").encoder
    enc = DeepLobEncoder(cfg, np.random.default_rng(int(rng.integers(1 << 31))))
    _randomize_encoder_style(enc.named_parameters(), rng)
    x = Tensor(rng.normal(size=(gc.model_batch, gc.window, gc.features)))
    w = _projection(rng, (gc.model_batch, gc.window, gc.hidden))
    return Probe(lambda: _weighted_sum(enc(x).hidden_seq, w), enc.parameters())


def _full_model(kind: str, score: str):
    def build(rng, gc):
        from .training import cross_entropy_path_loss
        model = ForecastModel(gc.model_config(kind, score), seed=int(rng.integers(1 << 31)))
        _randomize_encoder_style(model.named_parameters(), rng)
        x = Tensor(rng.normal(size=(gc.model_batch, gc.window, gc.features)))
        y = rng.integers(0, 3, size=(gc.model_batch, gc.horizon_steps))

        def f():
            path, _ = model(x, y, True)
            return cross_entropy_path_loss(path.probs, y)

        # parameters only: input gradients through nine leaky layers reach 1e-9,
        # below what a central difference on an O(1) loss can resolve
        return Probe(f, model.parameters())
    return build


# name -> (kind, builder); every differentiable building block appears once
COMPONENTS: dict[str, tuple[str, Callable]] = {
    "add": ("layer", _binary(tn.add)),
    "sub": ("layer", _binary(tn.sub)),
    "mul": ("layer", _binary(tn.mul)),
    "neg": ("layer", _elementwise(tn.neg)),
    "scalar_ops": ("layer", _scalar_ops),
    "tanh": ("layer", _elementwise(tn.tanh)),
    "sigmoid": ("layer", _elementwise(tn.sigmoid)),
    "leaky_relu": ("layer", _elementwise(lambda x: tn.leaky_relu(x, 0.01))),
    "exp": ("layer", _elementwise(tn.exp)),
    "log": ("layer", _log),
    "softmax": ("layer", _elementwise(lambda x: tn.softmax(x, axis=1))),
    "matmul": ("layer", _matmul),
    "batched_matmul": ("layer", _batched_matmul),
    "shape_ops": ("layer", _shape_ops),
    "dense": ("layer", _dense),
    "conv2d_nchw_same": ("layer", _conv("NCHW", "same", (1, 1))),
    "conv2d_nhwc_strided": ("layer", _conv("NHWC", "valid", (1, 2))),
    "max_pool2d": ("layer", _max_pool),
    "inception": ("layer", _inception),
    "score_dot": ("layer", _score("dot")),
    "score_general": ("layer", _score("general")),
    "score_concat": ("layer", _score("concat")),
    "path_loss": ("layer", _path_loss),
    "lstm_step": ("composition", _lstm_step),
    "lstm_unroll": ("composition", _lstm_unroll),
    "encoder": ("composition", _encoder),
    "model_seq2seq": ("composition", _full_model("seq2seq", "dot")),
    "model_attn_dot": ("composition", _full_model("attention", "dot")),
    "model_attn_general": ("composition", _full_model("attention", "general")),
    "model_attn_concat": ("composition", _full_model("attention", "concat")),
}


def _well_posed(probe: Probe, kind: str, gc: GradcheckConfig) -> bool:
    with Tape() as tape:
        out = probe.f()
    if tn.nonsmooth_margin(tape) <= gc.kink_margin:
        return False
    floor = gc.min_grad if kind == "layer" else gc.min_grad_composition
    for leaf in probe.leaves.values():
        leaf.grad = None
    tape.backward(out)
    # exact zeros are structural (sliced-away or non-maximal entries) and cost nothing to verify
    small = any(leaf.grad is not None and np.any((leaf.grad != 0) & (np.abs(leaf.grad) < floor))
                for leaf in probe.leaves.values())
    for leaf in probe.leaves.values():
        leaf.grad = None
    return not small


def _draw(build, kind: str, rng, gc) -> Probe:
    for _ in range(gc.max_redraws):
        probe = build(rng, gc)
        for leaf in probe.leaves.values():
            leaf.requires_grad = True
        if _well_posed(probe, kind, gc):
            return probe
    raise ConfigError(f"no well-posed draw for a {kind} (kink margin {gc.kink_margin}) "
                      f"in {gc.max_redraws} tries")


def check_component(name: str, gc: GradcheckConfig, seed: int = 0) -> ComponentResult:
    kind, build = COMPONENTS[name]
    if kind == "layer":
        tol, eps, order = gc.layer_tol, gc.layer_eps, 2
    else:
        tol, eps, order = gc.composition_tol, gc.composition_eps, gc.composition_order
    worst, worst_leaf = 0.0, ""
    for s in range(seed, seed + gc.seeds):
        rng = np.random.default_rng([s, sorted(COMPONENTS).index(name)])
        probe = _draw(build, kind, rng, gc)
        for leaf_name, leaf in probe.leaves.items():
            err = tn.grad_check(lambda _: probe.f(), leaf, eps, order)
            if not np.isfinite(err):
                err = np.inf
            if err > worst or not worst_leaf:
                worst, worst_leaf = max(err, worst), f"seed {s}: {leaf_name}"
    return ComponentResult(name, kind, worst, tol, worst_leaf)


def run_gradcheck(gc: GradcheckConfig | None = None, seed: int = 0,
                  components: list[str] | None = None, on_result=None) -> GradcheckReport:
    gc = gc or GradcheckConfig()
    gc.validate()
    report = GradcheckReport()
    for name in components or list(COMPONENTS):
        res = check_component(name, gc, seed)
        report.results.append(res)
        if on_result is not None:
            on_result(res)
    return report


def config_dict(gc: GradcheckConfig) -> dict:
    return asdict(gc)
