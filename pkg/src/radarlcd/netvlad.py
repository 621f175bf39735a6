"""NetVLAD aggregation, its exact gradients under the triplet loss, a plain
gradient-descent trainer, and cosine-distance loop detection.

Forward pass for local descriptors ``d_i`` (N x C):

    s_ik = softmax_k((w_k . d_i + b_k) / T)
    V_k  = sum_i s_ik (d_i - c_k)
    g    = flatten(V_k / |V_k|) / |flatten(...)|

Model file: one line of JSON (``K``, ``C``, ``temperature`` and free-form
metadata) followed by little-endian float32 centers (K*C),
assignment_weights (K*C) and assignment_bias (K).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.cluster.vq import kmeans2

from .errors import DegenerateDescriptorError, DimensionMismatchError, InvalidInputError
from .keypoints import LocalDescriptorSet
from .losses import cosine_distance


@dataclass
class NetVladParams:
    centers: np.ndarray  # K x C
    assignment_weights: np.ndarray  # K x C
    assignment_bias: np.ndarray  # K
    softmax_temperature: float = 1.0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        self.assignment_weights = np.asarray(self.assignment_weights, dtype=float)
        self.assignment_bias = np.asarray(self.assignment_bias, dtype=float).ravel()
        K, C = self.centers.shape
        if K < 1:
            raise InvalidInputError("need at least one cluster")
        if self.assignment_weights.shape != (K, C) or self.assignment_bias.shape != (K,):
            raise DimensionMismatchError("NetVLAD parameter shapes disagree")
        if not self.softmax_temperature > 0:
            raise InvalidInputError("softmax_temperature must be positive")
        for arr in (self.centers, self.assignment_weights, self.assignment_bias):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError("NetVLAD parameters must be finite")

    @property
    def clusters(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def copy(self) -> NetVladParams:
        return NetVladParams(self.centers.copy(), self.assignment_weights.copy(),
                             self.assignment_bias.copy(), self.softmax_temperature)


@dataclass
class GlobalDescriptor:
    values: np.ndarray
    degenerate: bool = False


@dataclass
class NetVladGradients:
    centers: np.ndarray
    assignment_weights: np.ndarray
    assignment_bias: np.ndarray
    softmax_temperature: float


@dataclass
class TripletBatch:
    anchor: LocalDescriptorSet
    positive: LocalDescriptorSet
    negative: LocalDescriptorSet


@dataclass
class TrainResult:
    params: NetVladParams
    loss_trace: list[float] = field(default_factory=list)


def l2_normalize_rows(desc: LocalDescriptorSet) -> LocalDescriptorSet:
    """Scale each local descriptor to unit norm; zero rows stay zero."""
    D = desc.descriptors
    n = np.linalg.norm(D, axis=1, keepdims=True)
    return LocalDescriptorSet(np.divide(D, n, out=np.zeros_like(D), where=n > 0))


def init_netvlad(sample, clusters: int = 8, temperature: float = 1.0, seed: int = 0,
                 sharpness: Optional[float] = None) -> NetVladParams:
    """k-means centres with the usual soft-assignment initialisation.

    Weights ``2 a c_k`` and bias ``-a |c_k|^2`` make the logits equal
    ``-a |d - c_k|^2 / T`` up to a per-descriptor constant. When ``sharpness``
    (``a``) is None it is chosen so the nearest centre of an average sample
    descriptor gets about 100x the weight of the runner-up.
    """
    X = np.asarray(sample, dtype=float)
    if X.ndim != 2 or len(X) < clusters:
        raise InvalidInputError(f"need at least {clusters} sample descriptors")
    centers, _ = kmeans2(X, clusters, minit="++", seed=np.random.default_rng(seed))
    if sharpness is None:
        if clusters > 1:
            sq = np.sort(((X[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1)
            gap = float(np.mean(sq[:, 1] - sq[:, 0]))
            sharpness = np.log(100.0) / gap if gap > 0 else 1.0
        else:
            sharpness = 1.0
    return NetVladParams(centers, 2.0 * sharpness * centers,
                         -sharpness * np.sum(centers ** 2, axis=1), temperature)


def _check(desc, params):
    D = desc.descriptors if isinstance(desc, LocalDescriptorSet) else np.asarray(desc, float)
    if D.ndim != 2 or D.shape[0] == 0:
        raise InvalidInputError("need at least one local descriptor")
    if D.shape[1] != params.dim:
        raise DimensionMismatchError(f"descriptor dim {D.shape[1]} != model dim {params.dim}")
    return D


def _forward(D, params):
    T = params.softmax_temperature
    z = (D @ params.assignment_weights.T + params.assignment_bias) / T  # N x K
    z -= z.max(axis=1, keepdims=True)
    s = np.exp(z)
    s /= s.sum(axis=1, keepdims=True)
    resid = D[:, None, :] - params.centers[None, :, :]  # N x K x C
    V = np.einsum("nk,nkc->kc", s, resid)
    row_norm = np.linalg.norm(V, axis=1)
    U = np.divide(V, row_norm[:, None], out=np.zeros_like(V), where=row_norm[:, None] > 0)
    flat = U.ravel()
    total = np.linalg.norm(flat)
    g = flat / total if total > 0 else np.zeros_like(flat)
    return g, (D, s, resid, V, row_norm, U, total)


def netvlad_forward(desc: LocalDescriptorSet, params: NetVladParams) -> GlobalDescriptor:
    g, cache = _forward(_check(desc, params), params)
    return GlobalDescriptor(g, degenerate=bool(cache[-1] == 0))


def _backward(dg, params, cache):
    """Gradients of a scalar w.r.t. all parameters given dL/dg."""
    D, s, resid, V, row_norm, U, total = cache
    K, C = V.shape
    g = U.ravel() / total
    dflat = (dg - g * np.dot(g, dg)) / total
    dU = dflat.reshape(K, C)
    safe = np.where(row_norm > 0, row_norm, 1.0)
    dV = np.where((row_norm > 0)[:, None],
                  (dU - U * np.sum(U * dU, axis=1, keepdims=True)) / safe[:, None], 0.0)
    d_centers = -s.sum(axis=0)[:, None] * dV
    ds = np.einsum("kc,nkc->nk", dV, resid)
    dz = s * (ds - np.sum(s * ds, axis=1, keepdims=True))
    T = params.softmax_temperature
    d_weights = dz.T @ D / T
    d_bias = dz.sum(axis=0) / T
    logits = (D @ params.assignment_weights.T + params.assignment_bias) / T
    d_temp = -float(np.sum(dz * logits)) / T
    return d_centers, d_weights, d_bias, d_temp


def _cos_grad(u, v):
    """cos(u, v) and its gradient w.r.t. u and v."""
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    c = np.dot(u, v) / (nu * nv)
    return c, v / (nu * nv) - c * u / nu ** 2, u / (nu * nv) - c * v / nv ** 2


def triplet_value_and_gradients(batch: TripletBatch, params: NetVladParams,
                                delta: float = 0.5) -> tuple[float, NetVladGradients]:
    """Triplet hinge loss on cosine distance and its exact parameter gradients."""
    outs = []
    for part in (batch.anchor, batch.positive, batch.negative):
        g, cache = _forward(_check(part, params), params)
        if cache[-1] == 0:
            raise DegenerateDescriptorError("degenerate global descriptor in triplet batch")
        outs.append((g, cache))
    (ga, ca), (gp, cp), (gn, cn) = outs
    cos_ap, dap_a, dap_p = _cos_grad(ga, gp)
    cos_an, dan_a, dan_n = _cos_grad(ga, gn)
    # loss = (1 - cos_ap) - (1 - cos_an) + delta
    value = cos_an - cos_ap + delta
    K, C = params.centers.shape
    if value <= 0:
        zero = NetVladGradients(np.zeros((K, C)), np.zeros((K, C)), np.zeros(K), 0.0)
        return 0.0, zero
    acc = [np.zeros((K, C)), np.zeros((K, C)), np.zeros(K), 0.0]
    for dg, cache in ((dan_a - dap_a, ca), (-dap_p, cp), (dan_n, cn)):
        for i, part in enumerate(_backward(dg, params, cache)):
            acc[i] = acc[i] + part
    return float(value), NetVladGradients(*acc)


def netvlad_gradients(batch: TripletBatch, params: NetVladParams,
                      delta: float = 0.5) -> NetVladGradients:
    return triplet_value_and_gradients(batch, params, delta)[1]


def train_netvlad(triplets: list[TripletBatch], params0: NetVladParams, lr: float,
                  epochs: int, seed: int, delta: float = 0.5) -> TrainResult:
    """Plain per-triplet gradient descent with a seeded shuffle each epoch.

    The temperature is held fixed. Batches whose forward pass is degenerate
    are skipped; the trace records the mean pre-update loss of each epoch.
    """
    if epochs < 1:
        raise InvalidInputError("epochs must be >= 1")
    if lr < 0:
        raise InvalidInputError("lr must be non-negative")
    rng = np.random.default_rng(seed)
    params = params0.copy()
    trace = []
    for _ in range(epochs):
        losses = []
        for idx in rng.permutation(len(triplets)):
            try:
                value, grad = triplet_value_and_gradients(triplets[idx], params, delta)
            except DegenerateDescriptorError:
                continue
            losses.append(value)
            if value > 0 and lr > 0:
                params.centers -= lr * grad.centers
                params.assignment_weights -= lr * grad.assignment_weights
                params.assignment_bias -= lr * grad.assignment_bias
        if not losses:
            raise DegenerateDescriptorError("every triplet batch is degenerate")
        trace.append(float(np.mean(losses)))
    return TrainResult(params, trace)


def detect_loop(ga: GlobalDescriptor, gb: GlobalDescriptor,
                threshold: float = 0.5) -> tuple[bool, float]:
    """Loop iff the cosine distance is at most ``threshold`` (inclusive)."""
    if not 0 < threshold < 2:
        raise InvalidInputError("threshold must lie in (0, 2)")
    if ga.degenerate or gb.degenerate:
        raise DegenerateDescriptorError("cannot compare a degenerate global descriptor")
    d = cosine_distance(ga.values, gb.values)
    return d <= threshold, d


def save_model(params: NetVladParams, path, metadata: Optional[dict] = None) -> None:
    header = {"K": params.clusters, "C": params.dim,
              "temperature": params.softmax_temperature}
    if metadata:
        header.update(metadata)
    payload = np.concatenate([params.centers.ravel(), params.assignment_weights.ravel(),
                              params.assignment_bias]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload.tobytes())


def load_model(path) -> tuple[NetVladParams, dict]:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    K, C = int(header["K"]), int(header["C"])
    data = np.frombuffer(raw[nl + 1:], dtype="<f4").astype(float)
    if data.size != 2 * K * C + K:
        raise DimensionMismatchError(f"model payload has {data.size} values, expected {2 * K * C + K}")
    params = NetVladParams(data[:K * C].reshape(K, C), data[K * C:2 * K * C].reshape(K, C),
                           data[2 * K * C:], float(header["temperature"]))
    return params, header


def with_temperature(params: NetVladParams, temperature: float) -> NetVladParams:
    return replace(params.copy(), softmax_temperature=temperature)
