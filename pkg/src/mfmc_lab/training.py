"""Adam, linear probes and the training loops for tri-modal and bimodal runs.

Runs are deterministic given ``(config, seed)``: every random draw comes
from a PCG64 substream of the seed (0 for parameter init, 1 for
minibatch indices, 2 for evaluation data).
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from . import encoders as enc
from . import objectives as obj
from .synthetic import RNG_ALGORITHM, TriModalLabeled, make_rng

OBJECTIVES = ("mfmc-trace", "mfmc-logdet", "high-order-infonce")
BIMODAL_OBJECTIVES = ("fmca-trace", "infonce")
METRIC_COLUMNS = (
    "iteration", "objective", "loss", "term1", "term2", "term3", "sigma_sum", "probe_acc", "wall_ms",
)

# Cyclic pairs (fused pair, held-out modality), fusion keys by modality index.
FUSION_KEYS = ((0, 1), (0, 2), (1, 2))


class NonFiniteGradientError(ArithmeticError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name}")
        self.name = name


@dataclass
class TrainConfig:
    batch_size: int = 200
    lr: float = 3e-4
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8
    iterations: int = 2000
    k: int = 8
    ridge: float = 1e-4
    seed: int = 0
    objective: str = "mfmc-trace"
    hidden: int = 64
    fusion_hidden: int = 64
    batch_norm: bool = False
    center: bool = False
    temperature: float = 0.1
    eval_every: int = 200
    probe_l2: float = 1e-3

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    @classmethod
    def full_scale_preset(cls, **overrides) -> "TrainConfig":
        """K=128 embeddings, 512-wide heads and 20k iterations."""
        base = dict(k=128, hidden=512, fusion_hidden=512, iterations=20000)
        base.update(overrides)
        return cls(**base)


# -- Adam -------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam; returns fresh parameter arrays and the advanced state."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name}")
        if g.shape != params[name].shape:
            raise ValueError(f"shape mismatch for {name}: {g.shape} vs {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = b1 * state.m.get(name, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params[name] = p - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(m_new, v_new, t)


# -- linear probe ---------------------------------------------------------------


@dataclass
class ProbeResult:
    weights: np.ndarray  # (features + 1) x classes, last row is the bias
    train_accuracy: float
    test_accuracy: float
    steps: int
    grad_norm: float


def linear_probe(
    embeddings: np.ndarray,
    labels: np.ndarray,
    l2: float = 1e-3,
    seed: int = 0,
    max_steps: int = 5000,
    tol: float = 1e-6,
) -> ProbeResult:
    """Multinomial logistic regression by full-batch gradient descent.

    Features are standardized with training-split statistics; the split is
    a seeded 80/20 permutation.
    """
    x = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels)
    if x.shape[0] != y.shape[0]:
        raise ValueError("embeddings and labels are not aligned")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("linear_probe needs at least two classes")
    y = np.searchsorted(classes, y)
    n = x.shape[0]
    perm = make_rng(seed, stream=3).permutation(n)
    n_train = int(round(0.8 * n))
    tr, te = perm[:n_train], perm[n_train:]

    mu = x[tr].mean(axis=0)
    sd = x[tr].std(axis=0)
    sd[sd == 0] = 1.0
    xs = np.hstack([(x - mu) / sd, np.ones((n, 1))])
    xt = xs[tr]
    onehot = np.eye(classes.size)[y[tr]]
    lip = 0.5 * np.linalg.eigvalsh(xt.T @ xt / n_train)[-1] + l2
    step = 1.0 / lip
    mask = np.ones((xs.shape[1], 1))
    mask[-1] = 0.0
    w = np.zeros((xs.shape[1], classes.size))
    w_prev = w
    momentum_t = 1.0
    gnorm = math.inf
    steps = 0

    def gradient(v):
        z = xt @ v
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        return xt.T @ (p - onehot) / n_train + l2 * mask * v

    # Nesterov-accelerated full-batch descent with gradient-based restart.
    for steps in range(1, max_steps + 1):
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum_t**2))
        look = w + ((momentum_t - 1.0) / t_next) * (w - w_prev)
        g_look = gradient(look)
        w_prev, w = w, look - step * g_look
        momentum_t = t_next
        if np.sum(g_look * (w - w_prev)) > 0:
            momentum_t = 1.0
        gnorm = float(np.linalg.norm(gradient(w))) if steps % 10 == 0 else gnorm
        if gnorm <= tol:
            break

    def acc(rows):
        if rows.size == 0:
            return float("nan")
        return float(np.mean(np.argmax(xs[rows] @ w, axis=1) == y[rows]))

    return ProbeResult(w, acc(tr), acc(te), steps, gnorm)


# -- run manifest ----------------------------------------------------------------


@dataclass
class RunManifest:
    config: dict
    seed: int
    kind: str
    records: list[dict] = field(default_factory=list)
    evaluations: list[dict] = field(default_factory=list)
    status: str = "running"
    message: str = ""
    software_version: str = __version__
    rng: str = RNG_ALGORITHM
    sign_convention: str = "losses are minimized; dependence objectives are negated"

    def append(self, record: dict) -> None:
        self.records.append(record)

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def write_metrics_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_COLUMNS)
            for rec in self.records:
                w.writerow([format_cell(rec.get(c)) for c in METRIC_COLUMNS])


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


# -- tri-modal model -------------------------------------------------------------


@dataclass
class TriModalModel:
    encoders: list[enc.MlpParams]
    fusions: dict[tuple[int, int], enc.MlpParams]

    @classmethod
    def build(cls, input_dims, cfg: TrainConfig, seed: int) -> "TriModalModel":
        encoders = [
            enc.init_params(enc.MlpSpec((d, cfg.hidden, cfg.k), cfg.batch_norm), seed * 101 + j)
            for j, d in enumerate(input_dims)
        ]
        fusions = {
            key: enc.init_params(enc.fusion_spec(cfg.k, cfg.fusion_hidden, cfg.batch_norm), seed * 101 + 10 + j)
            for j, key in enumerate(FUSION_KEYS)
        }
        return cls(encoders, fusions)

    def named_nets(self) -> dict[str, enc.MlpParams]:
        nets = {f"encoder{j + 1}": p for j, p in enumerate(self.encoders)}
        nets.update({f"fusion{a + 1}{b + 1}": p for (a, b), p in self.fusions.items()})
        return nets

    def flat(self) -> dict[str, np.ndarray]:
        return {f"{n}/{k}": v for n, p in self.named_nets().items() for k, v in p.arrays.items()}

    def load_flat(self, flat: dict[str, np.ndarray]) -> None:
        for n, p in self.named_nets().items():
            for k in p.arrays:
                p.arrays[k] = flat[f"{n}/{k}"]

    def embed(self, xs, training: bool = False):
        return [enc.forward(p, x, training)[0] for p, x in zip(self.encoders, xs)]

    def forward(self, xs, training: bool = True):
        outs, caches = [], {}
        for j, (p, x) in enumerate(zip(self.encoders, xs)):
            e, caches[f"encoder{j + 1}"] = enc.forward(p, x, training)
            outs.append(e)
        fused = []
        for a, b in FUSION_KEYS:
            e, caches[f"fusion{a + 1}{b + 1}"] = enc.fuse(self.fusions[(a, b)], outs[a], outs[b], training)
            fused.append(e)
        return outs + fused, caches

    def backward(self, caches, grads6) -> dict[str, np.ndarray]:
        """Map gradients w.r.t. (e1, e2, e3, e12, e13, e23) onto all parameters."""
        g_enc = [grads6[0].copy(), grads6[1].copy(), grads6[2].copy()]
        out: dict[str, np.ndarray] = {}
        for (a, b), g in zip(FUSION_KEYS, grads6[3:]):
            name = f"fusion{a + 1}{b + 1}"
            pg, ga, gb = enc.fuse_backward(self.fusions[(a, b)], caches[name], g)
            out.update({f"{name}/{k}": v for k, v in pg.items()})
            g_enc[a] += ga
            g_enc[b] += gb
        for j, p in enumerate(self.encoders):
            name = f"encoder{j + 1}"
            pg, _ = enc.backward(p, caches[name], g_enc[j])
            out.update({f"{name}/{k}": v for k, v in pg.items()})
        return out

    def update_running_stats(self, caches) -> None:
        for n, p in self.named_nets().items():
            enc.update_running_stats(p, caches[n])


def cyclic_pair_objective(cfg: TrainConfig, ridge: float | None = None) -> obj.PairObjective:
    eps = cfg.ridge if ridge is None else ridge
    if cfg.objective == "mfmc-trace":
        return obj.trace_pair(eps, cfg.center)
    if cfg.objective == "mfmc-logdet":
        return obj.logdet_pair(eps, cfg.center)
    if cfg.objective == "high-order-infonce":
        return obj.infonce_pair(obj.ContrastiveConfig(cfg.temperature))
    raise ValueError(f"unknown objective {cfg.objective!r}; expected one of {OBJECTIVES}")


def _cyclic_trace_sum(embs, cfg: TrainConfig) -> float:
    e1, e2, e3, e12, e13, e23 = embs
    try:
        return sum(
            obj.trace_value(obj.batch_covariances(f, s, cfg.ridge, cfg.center))
            for f, s in ((e12, e3), (e13, e2), (e23, e1))
        )
    except obj.ObjectiveError:
        return float("nan")


@dataclass
class TrainResult:
    model: TriModalModel
    manifest: RunManifest

    @property
    def diverged(self) -> bool:
        return self.manifest.status != "completed"

    def best_probe(self, modality: int = 0) -> float:
        accs = [ev["probe_acc"][modality] for ev in self.manifest.evaluations]
        return max(accs) if accs else float("nan")

    def final_probe(self, modality: int = 0) -> float:
        evs = self.manifest.evaluations
        return evs[-1]["probe_acc"][modality] if evs else float("nan")


def probe_all(model: TriModalModel, data: TriModalLabeled, cfg: TrainConfig) -> list[float]:
    embs = model.embed(data.modalities, training=False)
    return [linear_probe(e, data.labels, cfg.probe_l2, seed=cfg.seed).test_accuracy for e in embs]


def train_mfmc(
    data: TriModalLabeled,
    cfg: TrainConfig,
    probe_data: TriModalLabeled | None = None,
    on_record: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Minibatch training of three encoders plus fusion nets on a cyclic objective.

    The probe on ``probe_data`` (default: ``data``) runs every
    ``cfg.eval_every`` iterations and after the last one; it never feeds
    gradients back. Objective failures stop the run with the manifest
    status set to "error"; non-finite losses set it to "diverged".
    """
    if cfg.objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {cfg.objective!r}")
    probe_data = data if probe_data is None else probe_data
    model = TriModalModel.build([m.shape[1] for m in data.modalities], cfg, cfg.seed)
    manifest = RunManifest(config=asdict(cfg), seed=cfg.seed, kind="train_mfmc")
    pair = cyclic_pair_objective(cfg)
    batch_rng = make_rng(cfg.seed, stream=1)
    state = AdamState()
    params = model.flat()
    start = time.perf_counter()

    def evaluate(it: int) -> list[float]:
        accs = probe_all(model, probe_data, cfg)
        manifest.evaluations.append({"iteration": it, "probe_acc": accs})
        return accs

    try:
        for it in range(1, cfg.iterations + 1):
            idx = batch_rng.choice(data.n, size=cfg.batch_size, replace=False)
            embs, caches = model.forward(data.rows(idx), training=True)
            res = obj.cyclic_loss(pair, *embs)
            if not math.isfinite(res.loss):
                manifest.status = "diverged"
                manifest.message = f"non-finite loss at iteration {it}"
                break
            grads = model.backward(caches, res.grads)
            params, state = adam_step(params, grads, state, cfg)
            model.load_flat(params)
            model.update_running_stats(caches)

            sigma_sum = -res.loss if cfg.objective == "mfmc-trace" else _cyclic_trace_sum(embs, cfg)
            record = {
                "iteration": it,
                "objective": cfg.objective,
                "loss": res.loss,
                "term1": res.terms[0],
                "term2": res.terms[1],
                "term3": res.terms[2],
                "sigma_sum": sigma_sum,
                "probe_acc": None,
                "wall_ms": round((time.perf_counter() - start) * 1000.0, 3),
            }
            if it % cfg.eval_every == 0 or it == cfg.iterations:
                record["probe_acc"] = evaluate(it)[0]
            manifest.append(record)
            if on_record is not None:
                on_record(record)
        else:
            manifest.status = "completed"
    except (obj.ObjectiveError, enc.NonFiniteActivationError, NonFiniteGradientError) as exc:
        manifest.status = "error" if isinstance(exc, obj.ObjectiveError) else "diverged"
        manifest.message = str(exc)
    if manifest.status != "completed" and manifest.records:
        # Freeze the last reachable probe so best-accuracy summaries see the collapse.
        last = manifest.records[-1]["iteration"]
        if not manifest.evaluations or manifest.evaluations[-1]["iteration"] != last:
            try:
                evaluate(last)
            except (ValueError, ArithmeticError):
                pass
    return TrainResult(model, manifest)


# -- bimodal dependence estimation --------------------------------------------------


@dataclass(frozen=True)
class GaussianPairSource:
    """Independent coordinate pairs with correlation ``rho`` in each of ``d`` dims."""

    d: int
    rho: float

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        x = rng.standard_normal((n, self.d))
        noise = rng.standard_normal((n, self.d))
        return x, self.rho * x + math.sqrt(1.0 - self.rho**2) * noise


@dataclass
class BimodalResult:
    encoders: tuple[enc.MlpParams, enc.MlpParams]
    trajectory: list[tuple[int, float]]
    final_estimate: float
    final_spectrum: obj.Spectrum | None
    manifest: RunManifest

    @property
    def diverged(self) -> bool:
        return self.manifest.status != "completed"


def estimate_dependence(
    f: enc.MlpParams,
    g: enc.MlpParams,
    x: np.ndarray,
    y: np.ndarray,
    objective: str,
    cfg: TrainConfig,
) -> tuple[float, obj.Spectrum | None]:
    """FMCA: sum of the learned spectrum. InfoNCE: mean of ln B - loss over B-sized chunks."""
    ex = enc.forward(f, x, training=False)[0]
    ey = enc.forward(g, y, training=False)[0]
    if objective == "fmca-trace":
        spec = obj.spectrum(obj.batch_covariances(ex, ey, cfg.ridge, cfg.center))
        return obj.tsd_linear(spec), spec
    b = cfg.batch_size
    n_chunks = ex.shape[0] // b
    ccfg = obj.ContrastiveConfig(cfg.temperature)
    vals = [
        obj.infonce_mi_estimate(obj.infonce_loss(ex[i * b : (i + 1) * b], ey[i * b : (i + 1) * b], ccfg).loss, b)
        for i in range(n_chunks)
    ]
    return float(np.mean(vals)), None


def train_bimodal_estimator(
    source: GaussianPairSource,
    cfg: TrainConfig,
    objective: str = "fmca-trace",
    n_eval: int = 2000,
) -> BimodalResult:
    """Train two encoders on fresh pair batches and track a dependence estimate.

    The estimate is evaluated on a fixed held-out sample every
    ``cfg.eval_every`` iterations; the final value is the mean of the
    evaluations within the last 10% of iterations.
    """
    if objective not in BIMODAL_OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}; expected one of {BIMODAL_OBJECTIVES}")
    spec = enc.MlpSpec((source.d, cfg.hidden, cfg.k), cfg.batch_norm)
    f = enc.init_params(spec, cfg.seed * 101)
    g = enc.init_params(spec, cfg.seed * 101 + 1)
    manifest = RunManifest(config=asdict(cfg) | {"bimodal_objective": objective, "d": source.d, "rho": source.rho,
                                                "n_eval": n_eval},
                           seed=cfg.seed, kind="train_bimodal_estimator")
    batch_rng = make_rng(cfg.seed, stream=1)
    x_eval, y_eval = source.sample(n_eval, make_rng(cfg.seed, stream=2))
    if objective == "fmca-trace":
        pair = obj.trace_pair(cfg.ridge, cfg.center)
    else:
        pair = obj.infonce_pair(obj.ContrastiveConfig(cfg.temperature))
    params = {**{f"f/{k}": v for k, v in f.arrays.items()}, **{f"g/{k}": v for k, v in g.arrays.items()}}
    state = AdamState()
    trajectory: list[tuple[int, float]] = []
    last_spec = None
    start = time.perf_counter()
    try:
        for it in range(1, cfg.iterations + 1):
            x, y = source.sample(cfg.batch_size, batch_rng)
            ex, cf = enc.forward(f, x, True)
            ey, cg = enc.forward(g, y, True)
            res = pair(ex, ey)
            if not math.isfinite(res.loss):
                manifest.status = "diverged"
                manifest.message = f"non-finite loss at iteration {it}"
                break
            gf, _ = enc.backward(f, cf, res.grads[0])
            gg, _ = enc.backward(g, cg, res.grads[1])
            grads = {**{f"f/{k}": v for k, v in gf.items()}, **{f"g/{k}": v for k, v in gg.items()}}
            params, state = adam_step(params, grads, state, cfg)
            for k in f.arrays:
                f.arrays[k] = params[f"f/{k}"]
            for k in g.arrays:
                g.arrays[k] = params[f"g/{k}"]
            enc.update_running_stats(f, cf)
            enc.update_running_stats(g, cg)
            record = {"iteration": it, "objective": objective, "loss": res.loss,
                      "wall_ms": round((time.perf_counter() - start) * 1000.0, 3)}
            if it % cfg.eval_every == 0 or it == cfg.iterations:
                est, last_spec = estimate_dependence(f, g, x_eval, y_eval, objective, cfg)
                trajectory.append((it, est))
                record["estimate"] = est
                manifest.evaluations.append({"iteration": it, "estimate": est})
            manifest.append(record)
        else:
            manifest.status = "completed"
    except (obj.ObjectiveError, enc.NonFiniteActivationError, NonFiniteGradientError) as exc:
        manifest.status = "error" if isinstance(exc, obj.ObjectiveError) else "diverged"
        manifest.message = str(exc)

    cutoff = 0.9 * cfg.iterations
    tail = [v for it, v in trajectory if it > cutoff] or [v for _, v in trajectory[-1:]]
    final = float(np.mean(tail)) if tail else float("nan")
    return BimodalResult((f, g), trajectory, final, last_spec, manifest)
