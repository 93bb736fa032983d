"""Small differentiable MLP engine with hand-derived gradients.

Every network in the package is built from :class:`Mlp` (a plain feed-forward
stack) or :class:`TwoTower` (two embedding towers whose outputs are
concatenated and fed to a head MLP). Parameters live in one flat float64
array per network; the layout is given by each MlpSpec's manifest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

LN_EPS = 1e-5

_OUTPUT_ACTIVATIONS = ("linear", "tanh", "sigmoid", "l2_normalize")


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    first_layer_normtanh: bool = True
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer dims must be >= 1, got {dims}")
        if self.hidden_activation != "relu":
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation not in _OUTPUT_ACTIVATIONS:
            raise ValueError(f"unsupported output activation {self.output_activation!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    @property
    def has_layernorm(self) -> bool:
        return self.first_layer_normtanh and len(self.hidden_dims) > 0

    def manifest(self) -> list[tuple[str, tuple[int, ...]]]:
        """Parameter blocks in storage order: per layer weight, bias, then
        (first hidden layer only) layernorm gain and bias."""
        out = []
        for i, (fan_in, fan_out) in enumerate(self.layer_dims):
            out.append((f"l{i}.weight", (fan_out, fan_in)))
            out.append((f"l{i}.bias", (fan_out,)))
            if i == 0 and self.has_layernorm:
                out.append(("l0.ln_gain", (fan_out,)))
                out.append(("l0.ln_bias", (fan_out,)))
        return out

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.manifest())


@dataclass
class ParamVector:
    """Flat parameter array plus the shapes needed to interpret it."""

    values: np.ndarray
    manifest: list[tuple[str, tuple[int, ...]]]

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        expected = sum(int(np.prod(s)) for _, s in self.manifest)
        if self.values.ndim != 1 or self.values.size != expected:
            raise ValueError(f"parameter length {self.values.size} != manifest total {expected}")

    def blocks(self) -> dict[str, np.ndarray]:
        return _views(self.values, self.manifest)

    def to_bytes(self) -> bytes:
        header = ";".join(f"{n}:{','.join(map(str, s))}" for n, s in self.manifest).encode()
        return struct.pack("<Q", len(header)) + header + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ParamVector":
        (hlen,) = struct.unpack_from("<Q", raw, 0)
        header = raw[8 : 8 + hlen].decode()
        manifest = []
        for item in header.split(";") if header else []:
            name, dims = item.split(":")
            manifest.append((name, tuple(int(d) for d in dims.split(",") if d)))
        values = np.frombuffer(raw[8 + hlen :], dtype="<f8").astype(np.float64)
        return cls(values, manifest)


def _slices(manifest):
    out, offset = [], 0
    for name, shape in manifest:
        size = int(np.prod(shape))
        out.append((name, offset, offset + size, tuple(shape)))
        offset += size
    return out


def _views(flat, manifest, slices=None):
    return {name: flat[lo:hi].reshape(shape) for name, lo, hi, shape in (slices or _slices(manifest))}


def _as_batch(x, dim, what="input"):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{what} dimension mismatch: expected {dim}, got shape {np.shape(x)}")
    return x, single


class Mlp:
    """Feed-forward network: [Linear -> (LayerNorm -> tanh | ReLU)]* -> Linear -> output activation."""

    def __init__(self, spec: MlpSpec):
        self.spec = spec
        self.manifest = spec.manifest()
        self.n_params = spec.n_params
        self.n_layers = len(spec.layer_dims)
        self._slices = _slices(self.manifest)

    def init(self, rng: np.random.Generator) -> np.ndarray:
        p = np.zeros(self.n_params)
        v = _views(p, self.manifest)
        for i, (fan_in, fan_out) in enumerate(self.spec.layer_dims):
            bound = 1.0 / np.sqrt(fan_in)
            v[f"l{i}.weight"][...] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            v[f"l{i}.bias"][...] = rng.uniform(-bound, bound, size=fan_out)
        if self.spec.has_layernorm:
            v["l0.ln_gain"][...] = 1.0
        return p

    def _layers(self, p):
        v = _views(p, self.manifest, self._slices)
        return [(v[f"l{i}.weight"], v[f"l{i}.bias"]) for i in range(self.n_layers)], v

    # -- plain forward / backward -------------------------------------------------

    def forward(self, p, x):
        """Batched forward pass. Returns (output, cache)."""
        x, _ = _as_batch(x, self.spec.input_dim)
        layers, v = self._layers(p)
        cache = {"x": x, "acts": [x], "pre": []}
        a = x
        last = self.n_layers - 1
        for i, (w, b) in enumerate(layers):
            u = a @ w.T + b
            cache["pre"].append(u)
            if i == last:
                a = self._out_act(u, cache)
            elif i == 0 and self.spec.has_layernorm:
                a = self._ln_tanh(u, v, cache)
            else:
                a = np.maximum(u, 0.0)
            cache["acts"].append(a)
        return a, cache

    def __call__(self, p, x):
        x_arr = np.asarray(x, dtype=np.float64)
        y, _ = self.forward(p, x_arr)
        return y[0] if x_arr.ndim == 1 else y

    def _ln_tanh(self, u, v, cache):
        c = u - u.mean(axis=1, keepdims=True)
        s = np.sqrt((c * c).mean(axis=1, keepdims=True) + LN_EPS)
        n = c / s
        a = np.tanh(v["l0.ln_gain"] * n + v["l0.ln_bias"])
        cache["ln"] = (n, s)
        return a

    def _out_act(self, u, cache):
        kind = self.spec.output_activation
        if kind == "linear":
            return u
        if kind == "tanh":
            return np.tanh(u)
        if kind == "sigmoid":
            return 0.5 * (1.0 + np.tanh(0.5 * u))
        norms = np.linalg.norm(u, axis=1, keepdims=True)
        if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
            raise ValueError("l2_normalize applied to a zero or non-finite vector")
        cache["l2norm"] = norms
        return np.sqrt(self.spec.output_dim) * u / norms

    def backward(self, p, cache, dy):
        """Vector-Jacobian product. Returns (param_grad, input_grad)."""
        dy = np.asarray(dy, dtype=np.float64)
        if dy.ndim == 1:
            dy = dy[None, :]
        if dy.shape != cache["acts"][-1].shape:
            raise ValueError(f"cotangent shape {dy.shape} != output shape {cache['acts'][-1].shape}")
        layers, v = self._layers(p)
        grad = np.zeros(self.n_params)
        g = _views(grad, self.manifest, self._slices)
        last = self.n_layers - 1
        da = dy
        for i in range(last, -1, -1):
            u, a_out, a_in = cache["pre"][i], cache["acts"][i + 1], cache["acts"][i]
            if i == last:
                du = self._out_act_back(da, u, a_out, cache)
            elif i == 0 and self.spec.has_layernorm:
                n, s = cache["ln"]
                dyln = da * (1.0 - a_out * a_out)
                g["l0.ln_gain"][...] = (dyln * n).sum(axis=0)
                g["l0.ln_bias"][...] = dyln.sum(axis=0)
                dn = dyln * v["l0.ln_gain"]
                du = (dn - dn.mean(axis=1, keepdims=True) - n * (dn * n).mean(axis=1, keepdims=True)) / s
            else:
                du = da * (u > 0.0)
            w, _ = layers[i]
            g[f"l{i}.weight"][...] = du.T @ a_in
            g[f"l{i}.bias"][...] = du.sum(axis=0)
            da = du @ w
        return grad, da

    def _out_act_back(self, dy, u, y, cache):
        kind = self.spec.output_activation
        if kind == "linear":
            return dy
        if kind == "tanh":
            return dy * (1.0 - y * y)
        if kind == "sigmoid":
            return dy * y * (1.0 - y)
        norms = cache["l2norm"]
        unit = u / norms
        return np.sqrt(self.spec.output_dim) * (dy - unit * (dy * unit).sum(axis=1, keepdims=True)) / norms

    # -- second-order helpers for input-gradient penalties ------------------------

    def input_gradient(self, p, x):
        """Per-sample gradient of a scalar output w.r.t. the input. Returns (y, G)."""
        if self.spec.output_dim != 1:
            raise ValueError("input_gradient requires a scalar-output network")
        y, cache = self.forward(p, x)
        _, gx = self.backward(p, cache, np.ones_like(y))
        return y, gx

    def directional_param_grad(self, p, x, v):
        """Gradient w.r.t. parameters of sum_i <v_i, grad_x y(x_i)>, with v held fixed.

        Implemented as reverse mode over a tangent (forward-mode) pass; this is
        exactly what an input-gradient penalty needs once its outer derivative
        has been folded into ``v``.
        """
        spec = self.spec
        if spec.output_dim != 1 or spec.output_activation == "l2_normalize":
            raise ValueError("directional_param_grad requires a scalar, non-normalized output")
        x, _ = _as_batch(x, spec.input_dim)
        v, _ = _as_batch(v, spec.input_dim, "direction")
        layers, pv = self._layers(p)
        last = self.n_layers - 1
        acts, tacts, pres, tpres, aux = [x], [v], [], [], {}
        a, ta = x, v
        for i, (w, b) in enumerate(layers):
            u, tu = a @ w.T + b, ta @ w.T
            pres.append(u)
            tpres.append(tu)
            if i == last:
                if spec.output_activation == "linear":
                    a, ta = u, tu
                elif spec.output_activation == "tanh":
                    a = np.tanh(u)
                    ta = (1.0 - a * a) * tu
                else:
                    a = 0.5 * (1.0 + np.tanh(0.5 * u))
                    ta = a * (1.0 - a) * tu
            elif i == 0 and spec.has_layernorm:
                c = u - u.mean(axis=1, keepdims=True)
                s = np.sqrt((c * c).mean(axis=1, keepdims=True) + LN_EPS)
                n = c / s
                tc = tu - tu.mean(axis=1, keepdims=True)
                q = (n * tc).mean(axis=1, keepdims=True)
                tn = (tc - n * q) / s
                gain = pv["l0.ln_gain"]
                a = np.tanh(gain * n + pv["l0.ln_bias"])
                ty = gain * tn
                ta = (1.0 - a * a) * ty
                aux["ln"] = (c, s, n, tc, q, tn, ty)
            else:
                mask = u > 0.0
                a, ta = u * mask, tu * mask
            acts.append(a)
            tacts.append(ta)

        grad = np.zeros(self.n_params)
        g = _views(grad, self.manifest, self._slices)
        y = acts[-1]
        ybar = np.zeros_like(y)
        tybar = np.ones_like(y)
        for i in range(last, -1, -1):
            u, tu, a_out = pres[i], tpres[i], acts[i + 1]
            if i == last:
                kind = spec.output_activation
                if kind == "linear":
                    ubar, tubar = ybar, tybar
                elif kind == "tanh":
                    d1 = 1.0 - a_out * a_out
                    tubar = d1 * tybar
                    ubar = d1 * ybar + tybar * tu * (-2.0 * a_out * d1)
                else:
                    d1 = a_out * (1.0 - a_out)
                    tubar = d1 * tybar
                    ubar = d1 * ybar + tybar * tu * d1 * (1.0 - 2.0 * a_out)
            elif i == 0 and spec.has_layernorm:
                c, s, n, tc, q, tn, ty = aux["ln"]
                gain = pv["l0.ln_gain"]
                d1 = 1.0 - a_out * a_out
                # a = tanh(y), ta = d1 * ty
                tybar_l = d1 * tacts_bar
                yb = d1 * abar + tacts_bar * ty * (-2.0 * a_out * d1)
                # y = gain * n + bias, ty = gain * tn
                g["l0.ln_gain"][...] = (yb * n + tybar_l * tn).sum(axis=0)
                g["l0.ln_bias"][...] = yb.sum(axis=0)
                nbar = gain * yb
                tnbar = gain * tybar_l
                # tn = (tc - n q) / s
                tcbar = tnbar / s
                nbar = nbar - q * tnbar / s
                qbar = -(n * tnbar).sum(axis=1, keepdims=True) / s
                sbar = -(tn * tnbar).sum(axis=1, keepdims=True) / s
                # q = mean(n * tc)
                width = u.shape[1]
                nbar = nbar + qbar * tc / width
                tcbar = tcbar + qbar * n / width
                # n = c / s
                cbar = nbar / s
                sbar = sbar - (nbar * n).sum(axis=1, keepdims=True) / s
                # s = sqrt(mean(c^2) + eps)
                cbar = cbar + sbar * c / (width * s)
                ubar = cbar - cbar.mean(axis=1, keepdims=True)
                tubar = tcbar - tcbar.mean(axis=1, keepdims=True)
            else:
                mask = u > 0.0
                ubar, tubar = abar * mask, tacts_bar * mask
            w, _ = layers[i]
            g[f"l{i}.weight"][...] = ubar.T @ acts[i] + tubar.T @ tacts[i]
            g[f"l{i}.bias"][...] = ubar.sum(axis=0)
            abar = ubar @ w
            tacts_bar = tubar @ w
        return grad


class TwoTower:
    """Two embedding towers (left, right) concatenated into a head MLP.

    Used for the latent-conditioned networks: F and Q take left=(s, a),
    right=(s, z); the actor takes left=s, right=(s, z). Towers start with
    layernorm+tanh and end linear; the head is a ReLU MLP.
    """

    def __init__(self, left_dim, right_dim, tower_hidden, embed_dim, head_hidden, output_dim,
                 output_activation="linear"):
        self.left = Mlp(MlpSpec(left_dim, tuple(tower_hidden), embed_dim, True, "relu", "linear"))
        self.right = Mlp(MlpSpec(right_dim, tuple(tower_hidden), embed_dim, True, "relu", "linear"))
        self.head = Mlp(MlpSpec(2 * embed_dim, tuple(head_hidden), output_dim, False, "relu",
                                output_activation))
        self.embed_dim = embed_dim
        self.output_dim = output_dim
        nl, nr = self.left.n_params, self.right.n_params
        self._slices = (slice(0, nl), slice(nl, nl + nr), slice(nl + nr, nl + nr + self.head.n_params))
        self.n_params = nl + nr + self.head.n_params
        self.manifest = (
            [("left." + n, s) for n, s in self.left.manifest]
            + [("right." + n, s) for n, s in self.right.manifest]
            + [("head." + n, s) for n, s in self.head.manifest]
        )

    def init(self, rng):
        return np.concatenate([self.left.init(rng), self.right.init(rng), self.head.init(rng)])

    def forward(self, p, xl, xr):
        sl, sr, sh = self._slices
        el, cl = self.left.forward(p[sl], xl)
        er, cr = self.right.forward(p[sr], xr)
        y, ch = self.head.forward(p[sh], np.concatenate([el, er], axis=1))
        return y, (cl, cr, ch)

    def __call__(self, p, xl, xr):
        return self.forward(p, xl, xr)[0]

    def backward(self, p, cache, dy):
        sl, sr, sh = self._slices
        cl, cr, ch = cache
        gh, de = self.head.backward(p[sh], ch, dy)
        k = self.embed_dim
        gl, dxl = self.left.backward(p[sl], cl, de[:, :k])
        gr, dxr = self.right.backward(p[sr], cr, de[:, k:])
        return np.concatenate([gl, gr, gh]), dxl, dxr


def mlp_forward(spec: MlpSpec, params, x):
    """Evaluate an MLP on a single input vector or a batch of rows."""
    values = params.values if isinstance(params, ParamVector) else params
    return Mlp(spec)(values, x)


def mlp_backward(spec: MlpSpec, params, x, output_cotangent):
    """Gradients of <cotangent, mlp_forward(x)> w.r.t. parameters and input."""
    net = Mlp(spec)
    values = params.values if isinstance(params, ParamVector) else params
    x_arr = np.asarray(x, dtype=np.float64)
    cot = np.asarray(output_cotangent, dtype=np.float64)
    if cot.shape[-1] != spec.output_dim:
        raise ValueError(f"cotangent dimension mismatch: expected {spec.output_dim}, got {cot.shape}")
    _, cache = net.forward(values, x_arr)
    grad, gx = net.backward(values, cache, cot)
    return grad, (gx[0] if x_arr.ndim == 1 else gx)


# -- optimisation -----------------------------------------------------------------


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n: int, learning_rate: float, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, learning_rate, **kw)


def adam_step(state: AdamState, params: np.ndarray, gradient: np.ndarray, name: str = "loss"):
    """Bias-corrected Adam update, applied in place. Returns (params, state)."""
    if params.shape != gradient.shape or state.first_moment.shape != params.shape:
        raise ValueError(f"adam_step length mismatch for {name}")
    if not np.all(np.isfinite(gradient)):
        raise FloatingPointError(f"non-finite gradient in {name}")
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    state.first_moment *= b1
    state.first_moment += (1.0 - b1) * gradient
    state.second_moment *= b2
    state.second_moment += (1.0 - b2) * gradient * gradient
    m_hat = state.first_moment / (1.0 - b1**state.step_count)
    v_hat = state.second_moment / (1.0 - b2**state.step_count)
    params -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state


@dataclass
class TargetPair:
    live: np.ndarray
    target: np.ndarray
    polyak: float = 0.005

    def __post_init__(self):
        if self.live.shape != self.target.shape:
            raise ValueError("live and target parameters must have the same shape")


def polyak_update(pair: TargetPair) -> TargetPair:
    """target <- (1 - zeta) * target + zeta * live, in place."""
    z = pair.polyak
    pair.target *= 1.0 - z
    pair.target += z * pair.live
    return pair


# -- finite-difference verification ----------------------------------------------


@dataclass
class GradcheckReport:
    block_errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def failed_blocks(self) -> list[str]:
        return [k for k, e in self.block_errors.items() if not e < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failed_blocks

    @property
    def max_error(self) -> float:
        return max(self.block_errors.values(), default=0.0)


def gradcheck(loss_closure, params, manifest=None, step=1e-5, tolerance=1e-4) -> GradcheckReport:
    """Compare the analytic gradient of ``loss_closure`` to central differences.

    ``loss_closure(params) -> (loss, grad)``. The error of a block is
    max|analytic - numeric| divided by the largest magnitude of either
    gradient in that block (floored at 1e-12).
    """
    params = np.array(params, dtype=np.float64)
    if manifest is None:
        manifest = [("params", (params.size,))]
    _, analytic = loss_closure(params.copy())
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.zeros_like(params)
    for k in range(params.size):
        orig = params[k]
        params[k] = orig + step
        hi = loss_closure(params)[0]
        params[k] = orig - step
        lo = loss_closure(params)[0]
        params[k] = orig
        numeric[k] = (hi - lo) / (2.0 * step)
    report = GradcheckReport(tolerance=tolerance)
    offset = 0
    for name, shape in manifest:
        size = int(np.prod(shape))
        a, n = analytic[offset : offset + size], numeric[offset : offset + size]
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-12)
        report.block_errors[name] = float(np.abs(a - n).max(initial=0.0) / scale)
        offset += size
    return report
