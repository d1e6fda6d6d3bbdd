"""The UMTN forecaster and the simplified DRC baseline.

The model decomposes each measurement vector into RBF coefficients, pushes
them through a cascade of spatial-transformation / aggregation blocks, and
fuses the resulting per-site feature vectors over time with a shared GRU:

* spatial transformation network: one MLP, shared across every level and
  every ordered site pair, mapping (x_i, x_j, phi(||x_i - x_j||)) to
  `feature_width` values; stacking all pairs yields per-feature n x n
  matrices.
* LSTB: per feature f, the transformed coefficients c + G S_f c with a
  residual connection, where G is the scaled inverse of the interpolation
  matrix.
* NAB: a small per-site MLP collapsing the feature columns back to one
  coefficient vector, enabling the next level.
* RFN: a per-site GRU over the concatenated multilevel feature vectors,
  followed by a linear readout of the next measurement.

All learned tensors live in a ParameterStore; geometry (Phi, its scaled
inverse, the ridge-fit matrix, and the pair inputs) is precomputed per site
set and shared by every forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .errors import ConfigError
from .interpolation import SiteSet, build_phi, scaled_inverse
from .kernels import RadialKernel, kernel_eval


@dataclass
class ModelConfig:
    """Layer sizing for the forecaster."""

    levels: int
    spatial_dim: int = 2
    feature_width: int = 8
    s_alpha_hidden: tuple[int, int] = (64, 32)
    nab_hidden: int = 32
    rfn_hidden: int = 64

    def __post_init__(self):
        self.s_alpha_hidden = tuple(int(h) for h in self.s_alpha_hidden)
        if self.levels < 0:
            raise ConfigError("levels must be nonnegative")
        if self.spatial_dim < 1 or self.feature_width < 1:
            raise ConfigError("spatial_dim and feature_width must be positive")
        if len(self.s_alpha_hidden) != 2 or self.nab_hidden < 1 or self.rfn_hidden < 1:
            raise ConfigError("hidden layer sizes must be positive (two for the spatial net)")

    @property
    def s_input_width(self) -> int:
        return 2 * self.spatial_dim + 1

    @property
    def rfn_input_width(self) -> int:
        return self.feature_width * self.levels + 1

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "spatial_dim": self.spatial_dim,
            "feature_width": self.feature_width,
            "s_alpha_hidden": list(self.s_alpha_hidden),
            "nab_hidden": self.nab_hidden,
            "rfn_hidden": self.rfn_hidden,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        kwargs = dict(data)
        if "s_alpha_hidden" in kwargs:
            kwargs["s_alpha_hidden"] = tuple(kwargs["s_alpha_hidden"])
        return cls(**kwargs)


class SiteGeometry:
    """Per-site-set constants every forward pass reuses.

    Holds Phi, its scaled inverse G (max-abs entry exactly 1), the ridge-fit
    matrix mapping measurements to coefficients, and the stacked spatial-net
    inputs (x_i, x_j, phi(||x_i - x_j||)) for all ordered pairs, in row-major
    pair order.
    """

    def __init__(self, kernel: RadialKernel, site_set: SiteSet, reg_lambda: float = 1e-2):
        system = build_phi(kernel, site_set, reg_lambda=reg_lambda)
        self.kernel = kernel
        self.site_set = site_set
        self.reg_lambda = float(reg_lambda)
        self.system = system
        self.phi = system.phi
        self.scaled_inv = scaled_inverse(system)
        self.fit = system.fit_matrix(reg_lambda)
        pts = site_set.sites
        n = site_set.n
        phi_flat = self.phi.reshape(n * n, 1)
        self.pair_inputs = np.hstack([np.repeat(pts, n, axis=0), np.tile(pts, (n, 1)), phi_flat])
        self.site_hash = site_set.content_hash()

    @property
    def n(self) -> int:
        return self.site_set.n


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _register_mlp(store: ParameterStore, rng, prefix: str, widths: Sequence[int]) -> None:
    for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
        store.register(f"{prefix}.w{i}", glorot_uniform(rng, w_in, w_out))
        store.register(f"{prefix}.b{i}", np.zeros(w_out))


def _mlp_forward(store: ParameterStore, prefix: str, x: Tensor, n_layers: int) -> Tensor:
    """ReLU-activated hidden layers, linear output layer."""
    h = x
    for i in range(n_layers):
        h = ad.add(ad.matmul(h, store[f"{prefix}.w{i}"]), store[f"{prefix}.b{i}"])
        if i < n_layers - 1:
            h = ad.relu(h)
    return h


class RfnWeights(NamedTuple):
    wz: Tensor
    uz: Tensor
    bz: Tensor
    wr: Tensor
    ur: Tensor
    br: Tensor
    wh: Tensor
    uh: Tensor
    bh: Tensor
    wo: Tensor
    bo: Tensor


def _as_column(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.values.ndim == 1:
        t = ad.reshape(t, (t.shape[0], 1))
    return t


def lstb_forward(feature_matrices: Sequence, g_matrix, coeffs) -> Tensor:
    """Transformed coefficients: column f is c + G S_f c (residual per feature).

    Accepts tensors or plain arrays; returns an n x F tensor.
    """
    c = _as_column(coeffs)
    stacked = ad.concat([ad.matmul(s, c) for s in feature_matrices])
    return ad.add(ad.matmul(g_matrix, stacked), c)


def nab_forward(gamma: Sequence, features) -> Tensor:
    """Per-site aggregation of an n x F feature block down to one column."""
    w0, b0, w1, b1 = gamma
    x = features if isinstance(features, Tensor) else Tensor(features)
    h = ad.relu(ad.add(ad.matmul(x, w0), b0))
    return ad.add(ad.matmul(h, w1), b1)


def rfn_step(weights: RfnWeights, inputs, hidden) -> tuple[Tensor, Tensor]:
    """One GRU update plus the linear readout.

    `inputs` is (n, input_width) and `hidden` is (n, hidden_width); weights
    are shared across the rows (sites), each of which carries its own hidden
    state.  Returns (prediction column, new hidden state).
    """
    x = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
    h = hidden if isinstance(hidden, Tensor) else Tensor(hidden)
    z = ad.sigmoid(ad.add(ad.add(ad.matmul(x, weights.wz), ad.matmul(h, weights.uz)), weights.bz))
    r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, weights.wr), ad.matmul(h, weights.ur)), weights.br))
    cand = ad.tanh(
        ad.add(ad.add(ad.matmul(x, weights.wh), ad.matmul(ad.multiply(r, h), weights.uh)), weights.bh)
    )
    h_new = ad.add(ad.multiply(ad.subtract(1.0, z), h), ad.multiply(z, cand))
    prediction = ad.add(ad.matmul(h_new, weights.wo), weights.bo)
    return prediction, h_new


@dataclass
class RolloutResult:
    """Predictions from one sequence rollout.

    `all_values` covers every predicted step (hat-u_1 .. hat-u_{tau+T-1});
    `predictions` is the forecast block (the last T rows); `warmup` the rest.
    `tensors` carries the graph-linked predictions when recording was on.
    """

    all_values: np.ndarray
    tau: int
    tensors: Optional[list[Tensor]] = None
    loss_start: int = 0

    @property
    def predictions(self) -> np.ndarray:
        return self.all_values[self.tau - 1 :]

    @property
    def warmup(self) -> np.ndarray:
        return self.all_values[: self.tau - 1]


class UmtnModel:
    """Multilevel spatial-transformation forecaster bound to one site set."""

    def __init__(self, config: ModelConfig, geometry: SiteGeometry, params: ParameterStore):
        if config.spatial_dim != geometry.site_set.dim:
            raise ValueError(
                f"model is {config.spatial_dim}-D but sites are {geometry.site_set.dim}-D"
            )
        self.config = config
        self.geometry = geometry
        self.params = params

    @classmethod
    def build(
        cls,
        config: ModelConfig,
        kernel: RadialKernel,
        sites: SiteSet,
        reg_lambda: float = 1e-2,
        seed: int = 0,
    ) -> "UmtnModel":
        geometry = SiteGeometry(kernel, sites, reg_lambda=reg_lambda)
        params = cls.initialize_params(config, seed)
        return cls(config, geometry, params)

    @staticmethod
    def initialize_params(config: ModelConfig, seed: int) -> ParameterStore:
        rng = np.random.default_rng(seed)
        store = ParameterStore()
        f = config.feature_width
        h1, h2 = config.s_alpha_hidden
        _register_mlp(store, rng, "alpha", [config.s_input_width, h1, h2, f])
        for m in range(1, config.levels + 1):
            _register_mlp(store, rng, f"nab{m}", [f, config.nab_hidden, 1])
        w = config.rfn_input_width
        hid = config.rfn_hidden
        for gate in ("z", "r", "h"):
            store.register(f"rfn.w{gate}", glorot_uniform(rng, w, hid))
            store.register(f"rfn.u{gate}", glorot_uniform(rng, hid, hid))
            store.register(f"rfn.b{gate}", np.zeros(hid))
        store.register("rfn.wo", glorot_uniform(rng, hid, 1))
        store.register("rfn.bo", np.zeros(1))
        return store

    def parameter_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for name, tensor in self.params.items():
            group = name.split(".")[0]
            counts[group] = counts.get(group, 0) + tensor.values.size
        return counts

    def _rfn_weights(self) -> RfnWeights:
        p = self.params
        return RfnWeights(
            p["rfn.wz"], p["rfn.uz"], p["rfn.bz"],
            p["rfn.wr"], p["rfn.ur"], p["rfn.br"],
            p["rfn.wh"], p["rfn.uh"], p["rfn.bh"],
            p["rfn.wo"], p["rfn.bo"],
        )

    def nab_weights(self, level: int) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        p = self.params
        return (p[f"nab{level}.w0"], p[f"nab{level}.b0"], p[f"nab{level}.w1"], p[f"nab{level}.b1"])

    def spatial_feature_tensors(self) -> list[Tensor]:
        """The per-feature n x n spatial matrices, graph-linked to the shared net."""
        geom = self.geometry
        n = geom.n
        out = _mlp_forward(self.params, "alpha", Tensor(geom.pair_inputs), 3)
        return [
            ad.reshape(ad.slice_last(out, f_idx, f_idx + 1), (n, n))
            for f_idx in range(self.config.feature_width)
        ]

    def multilevel_feature_tensor(self, c0, feature_tensors=None) -> Tensor:
        """Concatenated multilevel features U = Phi [c0 | C_1 | ... | C_M]."""
        feats = feature_tensors if feature_tensors is not None else self.spatial_feature_tensors()
        g = Tensor(self.geometry.scaled_inv)
        cols = [_as_column(c0)]
        c = cols[0]
        for level in range(1, self.config.levels + 1):
            block = lstb_forward(feats, g, c)
            cols.append(block)
            c = nab_forward(self.nab_weights(level), block)
        return ad.matmul(Tensor(self.geometry.phi), cols[0] if len(cols) == 1 else ad.concat(cols))

    def rollout(
        self,
        observed: np.ndarray,
        horizon: int,
        teacher_values: Optional[np.ndarray] = None,
        teacher_prob: float = 0.0,
        rng: Optional[np.random.Generator] = None,
        record: bool = False,
        feature_tensors: Optional[list[Tensor]] = None,
    ) -> RolloutResult:
        """Predict hat-u_1 .. hat-u_{tau + horizon - 1} from tau observed frames.

        Input frames: ground truth for t < tau; beyond that, the teacher frame
        with probability `teacher_prob` per step (seeded draw), otherwise the
        model's previous prediction.  Each input frame is ridge-fitted to
        coefficients, expanded through the level cascade, and fed to the
        per-site GRU, whose hidden state persists across the whole sequence.
        `teacher_values`, when given, holds the ground-truth input frames
        u_0 .. u_{tau+horizon-2}.  With `record`, the returned result carries
        the prediction tensors for loss construction.
        """
        observed = np.asarray(observed, dtype=float)
        n = self.geometry.n
        if observed.ndim != 2 or observed.shape[1] != n:
            raise ValueError(f"observed must be (tau, {n}), got {observed.shape}")
        tau = observed.shape[0]
        if tau < 1 or horizon < 0:
            raise ValueError("need tau >= 1 and horizon >= 0")
        if not 0.0 <= teacher_prob <= 1.0:
            raise ValueError("teacher_prob must lie in [0, 1]")
        if teacher_prob > 0.0 and teacher_values is None:
            raise ValueError("teacher_prob > 0 requires teacher_values")
        total_steps = tau + horizon - 1
        if teacher_values is not None:
            teacher_values = np.asarray(teacher_values, dtype=float)
            if teacher_values.shape != (total_steps, n):
                raise ValueError(
                    f"teacher_values must be ({total_steps}, {n}), got {teacher_values.shape}"
                )
            if rng is None:
                rng = np.random.default_rng(0)

        if record:
            return self._rollout_impl(observed, horizon, teacher_values, teacher_prob, rng, True, feature_tensors)
        with ad.no_grad():
            return self._rollout_impl(observed, horizon, teacher_values, teacher_prob, rng, False, feature_tensors)

    def _rollout_impl(self, observed, horizon, teacher_values, teacher_prob, rng, record, feature_tensors):
        tau = observed.shape[0]
        n = self.geometry.n
        feats = feature_tensors if feature_tensors is not None else self.spatial_feature_tensors()
        fit = Tensor(self.geometry.fit)
        hidden = Tensor(np.zeros((n, self.config.rfn_hidden)))
        weights = self._rfn_weights()
        preds: list[Tensor] = []
        for t in range(tau + horizon - 1):
            if t < tau:
                frame: Tensor = Tensor(observed[t][:, None])
            else:
                use_teacher = teacher_values is not None and rng.random() < teacher_prob
                frame = Tensor(teacher_values[t][:, None]) if use_teacher else preds[-1]
            c0 = ad.matmul(fit, frame)
            features = self.multilevel_feature_tensor(c0, feats)
            prediction, hidden = rfn_step(weights, features, hidden)
            preds.append(prediction)
        all_values = (
            np.stack([p.values[:, 0] for p in preds])
            if preds
            else np.empty((0, n))
        )
        return RolloutResult(all_values, tau, tensors=preds if record else None)


def build_spatial_features(model: UmtnModel, sites: Optional[SiteSet] = None) -> np.ndarray:
    """Evaluate the spatial matrices as a plain (F, n, n) array."""
    if sites is not None and sites.content_hash() != model.geometry.site_hash:
        raise ValueError("site set does not match the model's geometry cache")
    with ad.no_grad():
        return np.stack([t.values for t in model.spatial_feature_tensors()])


def multilevel_features(model: UmtnModel, c0: np.ndarray) -> np.ndarray:
    """Evaluate U = Phi [c0 | C_1 | ... | C_M] as a plain (n, F*M+1) array."""
    with ad.no_grad():
        return model.multilevel_feature_tensor(c0).values


@dataclass
class DrcConfig:
    """Sizing of the single-block baseline: one spatial transformation of the
    current frame plus a feed-forward aggregator over spatial features and the
    most recent raw measurements."""

    spatial_dim: int = 2
    feature_width: int = 16
    s_hidden: tuple[int, int] = (64, 32)
    aggregator_hidden: tuple[int, int, int] = (128, 64, 32)
    past_frames: int = 2

    def __post_init__(self):
        self.s_hidden = tuple(int(h) for h in self.s_hidden)
        self.aggregator_hidden = tuple(int(h) for h in self.aggregator_hidden)
        if self.past_frames < 1:
            raise ConfigError("past_frames must be >= 1")

    @property
    def s_input_width(self) -> int:
        return 2 * self.spatial_dim + 1

    @property
    def aggregator_input_width(self) -> int:
        return self.feature_width + self.past_frames

    def to_dict(self) -> dict:
        return {
            "spatial_dim": self.spatial_dim,
            "feature_width": self.feature_width,
            "s_hidden": list(self.s_hidden),
            "aggregator_hidden": list(self.aggregator_hidden),
            "past_frames": self.past_frames,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DrcConfig":
        kwargs = dict(data)
        for key in ("s_hidden", "aggregator_hidden"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


class DrcModel:
    """Single spatial block + feed-forward aggregator baseline."""

    def __init__(self, config: DrcConfig, geometry: SiteGeometry, params: ParameterStore):
        self.config = config
        self.geometry = geometry
        self.params = params

    @classmethod
    def build(cls, config: DrcConfig, kernel, sites, reg_lambda: float = 1e-2, seed: int = 0):
        geometry = SiteGeometry(kernel, sites, reg_lambda=reg_lambda)
        rng = np.random.default_rng(seed)
        store = ParameterStore()
        _register_mlp(store, rng, "spatial", [config.s_input_width, *config.s_hidden, config.feature_width])
        _register_mlp(store, rng, "agg", [config.aggregator_input_width, *config.aggregator_hidden, 1])
        return cls(config, geometry, store)

    def spatial_feature_tensors(self) -> list[Tensor]:
        n = self.geometry.n
        out = _mlp_forward(self.params, "spatial", Tensor(self.geometry.pair_inputs), 3)
        return [
            ad.reshape(ad.slice_last(out, f_idx, f_idx + 1), (n, n))
            for f_idx in range(self.config.feature_width)
        ]

    def forward(self, frames: Sequence, feature_tensors=None) -> Tensor:
        """Next-step prediction from the most recent frames (current one last).

        The aggregator sees the spatially transformed current frame followed
        by the `past_frames` most recent raw measurements, newest first.
        """
        p = self.config.past_frames
        frames = [
            f if isinstance(f, Tensor) else Tensor(np.asarray(f, dtype=float)[:, None])
            for f in frames
        ]
        if len(frames) < p:
            raise ValueError(f"need at least {p} frames, got {len(frames)}")
        feats = feature_tensors if feature_tensors is not None else self.spatial_feature_tensors()
        current = frames[-1]
        c = ad.matmul(Tensor(self.geometry.fit), current)
        block = lstb_forward(feats, Tensor(self.geometry.scaled_inv), c)
        values = ad.matmul(Tensor(self.geometry.phi), block)
        recent = list(reversed(frames[-p:]))
        x = ad.concat([values, *recent])
        return _mlp_forward(self.params, "agg", x, 4)

    def rollout(
        self,
        observed: np.ndarray,
        horizon: int,
        teacher_values: Optional[np.ndarray] = None,
        teacher_prob: float = 0.0,
        rng: Optional[np.random.Generator] = None,
        record: bool = False,
    ) -> RolloutResult:
        """Closed-loop multi-step prediction with the same input policy as the
        recurrent model; predictions start once `past_frames` inputs exist."""
        observed = np.asarray(observed, dtype=float)
        tau = observed.shape[0]
        p = self.config.past_frames
        if tau < p:
            raise ValueError(f"need at least {p} observed frames, got {tau}")
        if teacher_prob > 0.0 and teacher_values is None:
            raise ValueError("teacher_prob > 0 requires teacher_values")
        if teacher_values is not None and rng is None:
            rng = np.random.default_rng(0)

        def run():
            feats = self.spatial_feature_tensors()
            history: list[Tensor] = []
            preds: list[Tensor] = []
            n = self.geometry.n
            for t in range(tau + horizon - 1):
                if t < tau:
                    frame = Tensor(observed[t][:, None])
                else:
                    use_teacher = teacher_values is not None and rng.random() < teacher_prob
                    frame = Tensor(teacher_values[t][:, None]) if use_teacher else preds[-1]
                history.append(frame)
                if len(history) >= p:
                    preds.append(self.forward(history[-p:], feature_tensors=feats))
                else:
                    preds.append(Tensor(np.zeros((n, 1))))
            all_values = np.stack([x.values[:, 0] for x in preds]) if preds else np.empty((0, n))
            # entries before index p - 1 are placeholders, not predictions
            return RolloutResult(
                all_values, tau, tensors=preds if record else None, loss_start=p - 1
            )

        if record:
            return run()
        with ad.no_grad():
            return run()


def drc_forward(model: DrcModel, observed_frames) -> np.ndarray:
    """Baseline next-step prediction as a plain n-vector."""
    frames = np.asarray(observed_frames, dtype=float)
    with ad.no_grad():
        return model.forward(list(frames)).values[:, 0]
