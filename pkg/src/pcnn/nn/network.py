"""Layer specifications, the two reference architectures, per-sample geometry
planning and the forward/backward executor."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from ..conv import build_q, default_translations
from ..extension import extension_matrix
from ..geometry import farthest_point_sample, voronoi_assign
from ..rbf import RbfBasis, omega_practical, sigma_rule
from . import layers as L

LAYER_KINDS = (
    "pc_conv", "pool_max", "upsample", "batch_norm", "relu",
    "dense", "dropout", "concat_skip", "global_pool",
)

# Practical weights and upsampling skip sources beyond this many sigmas.
OMEGA_CUTOFF_SIGMAS = 6.0


@dataclass
class LayerSpec:
    """One layer of a network.

    ``source`` indexes the stage outputs: 0 is the network input and ``t`` the
    output of layer ``t`` (1-based). ``upsample`` uses it as the target cloud,
    ``concat_skip`` as the features to append.
    """

    kind: str
    channels: int | None = None
    points: int | None = None
    sigma: float | None = None
    sigma_scale: float = 1.0
    spacing_factor: float = 2.0
    cutoff_factor: float | None = 4.0
    rate: float = 0.5
    source: int | None = None
    bias: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


class ShapeError(ValueError):
    pass


@dataclass
class Stage:
    """Shape bookkeeping for one stage output."""

    points: int | None
    channels: int
    level: int  # 0-based index of the cloud this stage lives on


def infer_shapes(specs: list[LayerSpec], in_points: int, in_channels: int) -> list[Stage]:
    """Walk the chain and check every layer's shape contract."""
    stages = [Stage(in_points, in_channels, 0)]
    levels = [in_points]
    for t, s in enumerate(specs, start=1):
        cur = stages[-1]
        pointwise = cur.points is not None
        if s.kind in ("pc_conv", "pool_max", "upsample", "concat_skip", "global_pool") and not pointwise:
            raise ShapeError(f"layer {t} ({s.kind}) needs point features")
        if s.kind == "pc_conv":
            if not s.channels or s.channels < 1:
                raise ShapeError(f"layer {t}: pc_conv needs channels")
            nxt = Stage(cur.points, s.channels, cur.level)
        elif s.kind == "pool_max":
            if s.points is None or not 1 <= s.points <= cur.points:
                raise ShapeError(f"layer {t}: pool target {s.points} not in [1, {cur.points}]")
            levels.append(s.points)
            nxt = Stage(s.points, cur.channels, len(levels) - 1)
        elif s.kind == "upsample":
            if s.source is None or not 0 <= s.source < t:
                raise ShapeError(f"layer {t}: upsample needs an earlier source stage")
            tgt = stages[s.source]
            if tgt.points is None:
                raise ShapeError(f"layer {t}: upsample source has no points")
            nxt = Stage(tgt.points, cur.channels, tgt.level)
        elif s.kind == "concat_skip":
            if s.source is None or not 0 <= s.source < t:
                raise ShapeError(f"layer {t}: concat_skip needs an earlier source stage")
            src = stages[s.source]
            if src.level != cur.level:
                raise ShapeError(f"layer {t}: skip source lives on a different point set")
            nxt = Stage(cur.points, cur.channels + src.channels, cur.level)
        elif s.kind == "global_pool":
            nxt = Stage(None, cur.channels, cur.level)
        elif s.kind == "dense":
            if pointwise:
                raise ShapeError(f"layer {t}: dense needs pooled features")
            if not s.channels or s.channels < 1:
                raise ShapeError(f"layer {t}: dense needs channels")
            nxt = Stage(None, s.channels, cur.level)
        else:
            nxt = Stage(cur.points, cur.channels, cur.level)
        stages.append(nxt)
    return stages


def conv_block(channels: int, points_out: int | None, **conv) -> list[LayerSpec]:
    """Convolution, batch norm, ReLU and (optionally) Voronoi max pooling."""
    out = [LayerSpec("pc_conv", channels=channels, **conv), LayerSpec("batch_norm"), LayerSpec("relu")]
    if points_out is not None:
        out.append(LayerSpec("pool_max", points=points_out))
    return out


def deconv_block(channels: int, target_stage: int, **conv) -> list[LayerSpec]:
    """Upsampling onto an earlier point set followed by a convolution block without pooling."""
    up = LayerSpec("upsample", source=target_stage, sigma_scale=conv.get("sigma_scale", 1.0))
    return [up] + conv_block(channels, None, **conv)


@dataclass
class ClassificationHyper:
    in_points: int = 512
    pool_points: tuple[int, ...] = (128, 32, 1)
    channels: tuple[int, ...] = (32, 64, 128)
    dense: tuple[int, ...] = (64, 32)
    classes: int = 4
    in_channels: int = 4
    dropout: float = 0.5
    sigma_scale: float = 1.0
    spacing_factor: float = 2.0
    cutoff_factor: float = 4.0


@dataclass
class NormalsHyper:
    in_points: int = 512
    pool_points: tuple[int, ...] = (128, 32)
    channels: tuple[int, ...] = (32, 64)
    decoder_channels: tuple[int, ...] = (64, 32)
    in_channels: int = 4
    sigma_scale: float = 1.0
    spacing_factor: float = 2.0
    cutoff_factor: float = 4.0


HYPER_TYPES = {"classification": ClassificationHyper, "normals": NormalsHyper}


def make_hyper(arch: str, values: dict | None = None):
    if arch not in HYPER_TYPES:
        raise ValueError(f"unknown architecture {arch!r}")
    values = dict(values or {})
    for key, val in values.items():
        if isinstance(val, list):
            values[key] = tuple(val)
    return HYPER_TYPES[arch](**values)


def build_network(arch: str, hyper=None) -> list[LayerSpec]:
    hyper = make_hyper(arch, hyper) if hyper is None or isinstance(hyper, dict) else hyper
    conv = dict(sigma_scale=hyper.sigma_scale, spacing_factor=hyper.spacing_factor,
                cutoff_factor=hyper.cutoff_factor)
    specs: list[LayerSpec] = []
    if arch == "classification":
        if len(hyper.pool_points) != len(hyper.channels):
            raise ShapeError("one pool target per conv block is required")
        for ch, pts in zip(hyper.channels, hyper.pool_points):
            specs += conv_block(ch, pts, **conv)
        specs.append(LayerSpec("global_pool"))
        for width in hyper.dense:
            specs += [LayerSpec("dense", channels=width), LayerSpec("relu"),
                      LayerSpec("dropout", rate=hyper.dropout)]
        specs.append(LayerSpec("dense", channels=hyper.classes))
        infer_shapes(specs, hyper.in_points, hyper.in_channels)
        return specs
    if arch == "normals":
        if len(hyper.pool_points) != len(hyper.channels) or len(hyper.decoder_channels) != len(hyper.channels):
            raise ShapeError("encoder and decoder depths must match")
        skips = [0]
        for ch, pts in zip(hyper.channels, hyper.pool_points):
            specs += conv_block(ch, pts, **conv)
            skips.append(len(specs))
        skips.pop()
        # Decoder walks back up the encoder levels, appending each level's features.
        for ch, target in zip(hyper.decoder_channels, reversed(skips)):
            specs += deconv_block(ch, target, **conv)
            specs.append(LayerSpec("concat_skip", source=target))
        specs.append(LayerSpec("pc_conv", channels=3, bias=True, **conv))
        stages = infer_shapes(specs, hyper.in_points, hyper.in_channels)
        if stages[-1].channels != 3 or stages[-1].points != hyper.in_points:
            raise ShapeError("normals network must end with 3 channels on the input points")
        return specs
    raise ValueError(f"unknown architecture {arch!r}")


def layer_sigma(spec: LayerSpec, n_points: int) -> float:
    return spec.sigma if spec.sigma is not None else sigma_rule(n_points, spec.sigma_scale)


@dataclass
class GeometryPlan:
    """Everything a forward pass needs that depends only on the input cloud."""

    clouds: list[np.ndarray]
    per_layer: list[dict] = field(default_factory=list)


def plan_geometry(specs: list[LayerSpec], points: np.ndarray, declared_points: int,
                  fps_start: int = 0, rng=None) -> GeometryPlan:
    """Build q-tensors, pooling partitions and upsampling matrices for one sample.

    Pool targets scale with ``len(points) / declared_points`` so a network
    trained at one density runs on sparser or denser clouds. Layer widths
    follow the declared point counts, not the actual ones: the basis and the
    kernel footprint then stay those the network was trained with. FPS starts at
    ``fps_start`` on the first pooling layer and at ``rng.integers`` on later
    ones when ``rng`` is given, otherwise at 0.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    ratio = pts.shape[0] / float(declared_points)
    stage_cloud = [pts]
    stage_declared = [int(declared_points)]
    per_layer = []
    cur = pts
    declared = int(declared_points)
    first_pool = True
    for s in specs:
        geom: dict = {}
        if s.kind == "pc_conv":
            sigma = layer_sigma(s, declared)
            trans = default_translations(sigma, s.spacing_factor)
            q = build_q(cur, cur, sigma, trans, s.cutoff_factor)
            basis = RbfBasis.gaussian(sigma)
            omega = omega_practical(cur, basis, OMEGA_CUTOFF_SIGMAS * sigma)
            geom["matrix"] = q.contraction_matrix(omega, basis.c)
            geom["sigma"] = sigma
        elif s.kind == "pool_max":
            count = max(1, min(cur.shape[0], int(round(s.points * ratio))))
            if first_pool:
                start = fps_start
            else:
                start = int(rng.integers(cur.shape[0])) if rng is not None else 0
            first_pool = False
            sel = farthest_point_sample(cur, count, start)
            part = voronoi_assign(cur, sel)
            geom.update(assignment=part.assignment, n_cells=part.n_cells, indices=sel.indices)
            cur = cur[sel.indices]
            declared = int(s.points)
        elif s.kind == "upsample":
            target = stage_cloud[s.source]
            sigma = layer_sigma(s, declared)
            basis = RbfBasis.gaussian(sigma)
            omega = omega_practical(cur, basis, OMEGA_CUTOFF_SIGMAS * sigma)
            geom["matrix"] = extension_matrix(cur, omega, basis, target, OMEGA_CUTOFF_SIGMAS * sigma)
            cur = target
            declared = stage_declared[s.source]
        per_layer.append(geom)
        stage_cloud.append(cur)
        stage_declared.append(declared)
    return GeometryPlan(stage_cloud, per_layer)


def _make_layer(spec: LayerSpec, stage_in: Stage, stage_out: Stage, rng, dtype, bn_eps: float):
    if spec.kind == "pc_conv":
        return L.PcConv(stage_in.channels, spec.channels, 27, rng, dtype, bias=spec.bias)
    if spec.kind == "batch_norm":
        return L.BatchNorm(stage_in.channels, dtype, eps=bn_eps)
    if spec.kind == "relu":
        return L.ReLU()
    if spec.kind == "pool_max":
        return L.PoolMax()
    if spec.kind == "upsample":
        return L.Upsample()
    if spec.kind == "concat_skip":
        return L.ConcatSkip()
    if spec.kind == "global_pool":
        return L.GlobalPool()
    if spec.kind == "dense":
        return L.Dense(stage_in.channels, spec.channels, rng, dtype)
    if spec.kind == "dropout":
        return L.Dropout(spec.rate)
    raise ValueError(spec.kind)


@dataclass
class Tape:
    """Per-layer records written by a forward pass and consumed by ``backward``."""

    records: list[dict]
    geometry: list[GeometryPlan]
    train: bool


class Network:
    def __init__(self, arch: str, hyper=None, seed: int = 0, precision: str = "f64",
                 bn_eps: float = 1e-10, threads: int = 1):
        self.arch = arch
        self.hyper = make_hyper(arch, hyper) if hyper is None or isinstance(hyper, dict) else hyper
        self.specs = build_network(arch, self.hyper)
        self.stages = infer_shapes(self.specs, self.hyper.in_points, self.hyper.in_channels)
        self.dtype = {"f32": np.float32, "f64": np.float64}[precision]
        self.precision = precision
        self.threads = threads
        init_rng = np.random.default_rng(seed)
        self.layers = [
            _make_layer(s, self.stages[t], self.stages[t + 1], init_rng, self.dtype, bn_eps)
            for t, s in enumerate(self.specs)
        ]
        self.dropout_rng = np.random.default_rng([seed, 1])
        for layer in self.layers:
            if isinstance(layer, L.Dropout):
                layer.rng = self.dropout_rng

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{t}.{self.specs[t].kind}.{n}": p for t, layer in enumerate(self.layers)
                for n, p in layer.params.items()}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {f"{t}.{self.specs[t].kind}.{n}": g for t, layer in enumerate(self.layers)
                for n, g in layer.grads.items()}

    def set_param(self, name: str, value: np.ndarray):
        t, _, n = name.split(".")
        layer = self.layers[int(t)]
        layer.params[n] = np.asarray(value, dtype=layer.params[n].dtype).reshape(layer.params[n].shape)

    def named_state(self) -> dict[str, np.ndarray]:
        return {f"{t}.{self.specs[t].kind}.{n}": v for t, layer in enumerate(self.layers)
                for n, v in layer.state().items()}

    def load_named_state(self, state: dict[str, np.ndarray]):
        grouped: dict[int, dict] = {}
        for name, val in state.items():
            t, _, n = name.split(".")
            grouped.setdefault(int(t), {})[n] = val
        for t, st in grouped.items():
            self.layers[t].load_state(st)

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def plan(self, clouds, fps_starts=None, rng=None) -> list[GeometryPlan]:
        starts = fps_starts if fps_starts is not None else [0] * len(clouds)
        rngs = [None] * len(clouds) if rng is None else [
            np.random.default_rng(int(s)) for s in rng.integers(2**63 - 1, size=len(clouds))
        ]
        jobs = list(zip(clouds, starts, rngs))

        def one(job):
            pts, start, r = job
            return plan_geometry(self.specs, pts, self.hyper.in_points, int(start), r)

        if self.threads > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                return list(pool.map(one, jobs))
        return [one(j) for j in jobs]

    def forward(self, features, plans: list[GeometryPlan], train: bool = False):
        """Run the network; returns ``(output, tape)``."""
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 3 or x.shape[0] != len(plans):
            raise ShapeError("features must be (B, I, J) with one plan per sample")
        if x.shape[2] != self.hyper.in_channels:
            raise ShapeError(f"expected {self.hyper.in_channels} input channels, got {x.shape[2]}")
        outputs = [x]
        records = []
        for t, (spec, layer) in enumerate(zip(self.specs, self.layers)):
            geom = [p.per_layer[t] for p in plans]
            rec: dict = {}
            if spec.kind == "concat_skip":
                x = layer.forward(x, geom, train, rec, skip=outputs[spec.source])
            else:
                x = layer.forward(x, geom, train, rec)
            records.append(rec)
            outputs.append(x)
        return x, Tape(records, plans, train)

    def backward(self, grad_out, tape: Tape):
        """Accumulate parameter gradients; returns the gradient w.r.t. the input features."""
        grads: dict[int, np.ndarray] = {len(self.specs): np.asarray(grad_out, dtype=np.float64)}
        for t in range(len(self.specs), 0, -1):
            spec, layer = self.specs[t - 1], self.layers[t - 1]
            g = grads.pop(t)
            geom = [p.per_layer[t - 1] for p in tape.geometry]
            res = layer.backward(g, geom, tape.records[t - 1])
            if spec.kind == "concat_skip":
                res, g_skip = res
                grads[spec.source] = grads.get(spec.source, 0) + g_skip
            grads[t - 1] = grads.get(t - 1, 0) + res
        return grads[0]

    def hyper_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.hyper).items()}
