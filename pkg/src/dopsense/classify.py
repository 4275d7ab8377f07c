"""Activity classification on Doppler traces, plus multi-antenna fusion.

The network is a single inception-style block over a (trace_length, n_bins)
single-channel input, three parallel branches downsampling to half
resolution, channel concatenation, a 1x1 reduction, dropout and a dense
softmax head. Small enough to train from scratch on a synthetic corpus in
minutes, implemented directly on the numpy kernels in `nn`.
"""

import json
import warnings
import zipfile
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DataFormatError

try:
    from sklearn.base import BaseEstimator, ClassifierMixin
except ImportError:  # pragma: no cover
    BaseEstimator = object

    class ClassifierMixin:
        pass


__all__ = [
    "NetworkSpec",
    "InceptionNetwork",
    "ActivityVector",
    "FusionResult",
    "fuse",
    "rescale_traces",
    "gradient_check",
    "classification_metrics",
    "save_checkpoint",
    "load_checkpoint",
    "InceptionClassifier",
]

CHECKPOINT_FORMAT = "dopsense-model-v1"


def rescale_traces(X, floor_db=-12.0):
    """Map dB traces in [floor_db, 0] onto [0, 1] network inputs."""
    if floor_db >= 0:
        raise ValueError("floor_db must be negative")
    X = np.asarray(X, dtype=np.float32)
    floor = np.float32(floor_db)
    return np.clip((X - floor) / -floor, 0.0, 1.0)


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture hyper-parameters.

    input_shape : (rows, cols) of one trace; both must be even
    branch_maps : output channels of the pooling / short / long branch
    bottleneck_maps / mid_maps : 1x1 and inner 3x3 widths of branches B and C
    reduce_maps : channels after the post-concat 1x1 reduction
    """

    input_shape: tuple = (340, 100)
    branch_maps: tuple = (5, 5, 5)
    bottleneck_maps: int = 4
    mid_maps: int = 4
    reduce_maps: int = 3
    dropout_rate: float = 0.2
    n_classes: int = 5

    def __post_init__(self):
        h, w = self.input_shape
        if h % 2 or w % 2 or h < 4 or w < 4:
            raise ValueError("input_shape dims must be even and >= 4")
        if len(self.branch_maps) != 3 or any(m < 1 for m in self.branch_maps):
            raise ValueError("branch_maps must be three positive counts")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "branch_maps", tuple(int(v) for v in self.branch_maps))

    @property
    def half_shape(self):
        return self.input_shape[0] // 2, self.input_shape[1] // 2

    @property
    def concat_maps(self):
        return sum(self.branch_maps)

    @property
    def flat_features(self):
        h, w = self.half_shape
        return self.reduce_maps * h * w

    def parameter_shapes(self):
        ma, mb, mc = self.branch_maps
        nb, nm = self.bottleneck_maps, self.mid_maps
        return {
            "a_proj_w": (ma, 1, 1, 1), "a_proj_b": (ma,),
            "b_neck_w": (nb, 1, 1, 1), "b_neck_b": (nb,),
            "b_conv_w": (mb, nb, 3, 3), "b_conv_b": (mb,),
            "c_neck_w": (nb, 1, 1, 1), "c_neck_b": (nb,),
            "c_mid_w": (nm, nb, 3, 3), "c_mid_b": (nm,),
            "c_conv_w": (mc, nm, 3, 3), "c_conv_b": (mc,),
            "reduce_w": (self.reduce_maps, self.concat_maps, 1, 1),
            "reduce_b": (self.reduce_maps,),
            "dense_w": (self.flat_features, self.n_classes),
            "dense_b": (self.n_classes,),
        }

    @property
    def parameter_count(self):
        return int(sum(np.prod(s) for s in self.parameter_shapes().values()))

    def to_json(self):
        return json.dumps({
            "input_shape": list(self.input_shape),
            "branch_maps": list(self.branch_maps),
            "bottleneck_maps": self.bottleneck_maps,
            "mid_maps": self.mid_maps,
            "reduce_maps": self.reduce_maps,
            "dropout_rate": self.dropout_rate,
            "n_classes": self.n_classes,
        })

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        raw["input_shape"] = tuple(raw["input_shape"])
        raw["branch_maps"] = tuple(raw["branch_maps"])
        return cls(**raw)


class InceptionNetwork:
    """Hand-wired single-block inception classifier."""

    def __init__(self, spec, rng=None, dtype=np.float32, params=None):
        self.spec = spec
        self.dtype = dtype
        self.extra = {}
        if params is not None:
            self.params = {k: np.array(v, dtype=dtype) for k, v in params.items()}
            return
        if rng is None:
            rng = np.random.default_rng(0)
        shapes = spec.parameter_shapes()
        self.params = {}
        for name, shape in shapes.items():
            if name.endswith("_b"):
                self.params[name] = np.zeros(shape, dtype=dtype)
            elif name == "dense_w":
                self.params[name] = nn.he_init(rng, shape, shape[0], dtype=dtype)
            else:
                fan_in = int(np.prod(shape[1:]))
                self.params[name] = nn.he_init(rng, shape, fan_in, dtype=dtype)

    def astype(self, dtype):
        clone = InceptionNetwork(self.spec, dtype=dtype, params=self.params)
        clone.extra = dict(self.extra)
        return clone

    def _prepare(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.ndim == 3:
            x = x[:, None]
        if x.shape[1:] != (1, *self.spec.input_shape):
            raise ValueError(
                f"trace batch must have shape (n, {self.spec.input_shape[0]}, "
                f"{self.spec.input_shape[1]}), got {x.shape}"
            )
        return x

    def forward(self, x, train=False, rng=None):
        p = self.params
        x = self._prepare(x)
        caches = {}
        # branch A: 3x3 max pool (stride 2) then 1x1 projection
        a_pool, caches["a_pool"] = nn.maxpool_forward(x, 3, 2, 1)
        a_lin, caches["a_proj"] = nn.conv2d_forward(a_pool, p["a_proj_w"], p["a_proj_b"])
        a_out, caches["a_relu"] = nn.relu_forward(a_lin)
        # branch B: 1x1 bottleneck then strided 3x3
        b_lin, caches["b_neck"] = nn.conv2d_forward(x, p["b_neck_w"], p["b_neck_b"])
        b_act, caches["b_neck_relu"] = nn.relu_forward(b_lin)
        b_conv, caches["b_conv"] = nn.conv2d_forward(b_act, p["b_conv_w"], p["b_conv_b"], 2, 1)
        b_out, caches["b_relu"] = nn.relu_forward(b_conv)
        # branch C: 1x1, full-res 3x3, strided 3x3
        c_lin, caches["c_neck"] = nn.conv2d_forward(x, p["c_neck_w"], p["c_neck_b"])
        c_act, caches["c_neck_relu"] = nn.relu_forward(c_lin)
        c_mid, caches["c_mid"] = nn.conv2d_forward(c_act, p["c_mid_w"], p["c_mid_b"], 1, 1)
        c_mid_act, caches["c_mid_relu"] = nn.relu_forward(c_mid)
        c_conv, caches["c_conv"] = nn.conv2d_forward(c_mid_act, p["c_conv_w"], p["c_conv_b"], 2, 1)
        c_out, caches["c_relu"] = nn.relu_forward(c_conv)

        joined = np.concatenate([a_out, b_out, c_out], axis=1)
        red_lin, caches["reduce"] = nn.conv2d_forward(joined, p["reduce_w"], p["reduce_b"])
        red_act, caches["reduce_relu"] = nn.relu_forward(red_lin)
        flat = red_act.reshape(red_act.shape[0], -1)
        dropped, caches["dropout"] = nn.dropout_forward(
            flat, self.spec.dropout_rate, rng, train
        )
        scores, caches["dense"] = nn.dense_forward(dropped, p["dense_w"], p["dense_b"])
        caches["shapes"] = (red_act.shape,)
        return scores, caches

    def backward(self, dscores, caches):
        spec = self.spec
        grads = {}
        dflat, grads["dense_w"], grads["dense_b"] = nn.dense_backward(
            dscores, caches["dense"]
        )
        dflat = nn.dropout_backward(dflat, caches["dropout"])
        (red_shape,) = caches["shapes"]
        dred = nn.relu_backward(dflat.reshape(red_shape), caches["reduce_relu"])
        djoined, grads["reduce_w"], grads["reduce_b"] = nn.conv2d_backward(
            dred, caches["reduce"]
        )
        ma, mb, _ = spec.branch_maps
        da = djoined[:, :ma]
        db_ = djoined[:, ma : ma + mb]
        dc = djoined[:, ma + mb :]

        da = nn.relu_backward(da, caches["a_relu"])
        da_pool, grads["a_proj_w"], grads["a_proj_b"] = nn.conv2d_backward(
            da, caches["a_proj"]
        )
        dx = nn.maxpool_backward(da_pool, caches["a_pool"])

        db_ = nn.relu_backward(db_, caches["b_relu"])
        db_act, grads["b_conv_w"], grads["b_conv_b"] = nn.conv2d_backward(
            db_, caches["b_conv"]
        )
        db_lin = nn.relu_backward(db_act, caches["b_neck_relu"])
        dxb, grads["b_neck_w"], grads["b_neck_b"] = nn.conv2d_backward(
            db_lin, caches["b_neck"]
        )
        dx += dxb

        dc = nn.relu_backward(dc, caches["c_relu"])
        dc_mid_act, grads["c_conv_w"], grads["c_conv_b"] = nn.conv2d_backward(
            dc, caches["c_conv"]
        )
        dc_mid = nn.relu_backward(dc_mid_act, caches["c_mid_relu"])
        dc_act, grads["c_mid_w"], grads["c_mid_b"] = nn.conv2d_backward(
            dc_mid, caches["c_mid"]
        )
        dc_lin = nn.relu_backward(dc_act, caches["c_neck_relu"])
        dxc, grads["c_neck_w"], grads["c_neck_b"] = nn.conv2d_backward(
            dc_lin, caches["c_neck"]
        )
        dx += dxc
        return grads, dx

    def loss_and_grads(self, x, labels, train=True, rng=None):
        scores, caches = self.forward(x, train=train, rng=rng)
        loss, dscores = nn.softmax_cross_entropy(scores, np.asarray(labels))
        grads, _ = self.backward(dscores, caches)
        return loss, grads

    def predict_proba(self, x, batch_size=64):
        x = self._prepare(x)
        out = []
        for lo in range(0, x.shape[0], batch_size):
            scores, _ = self.forward(x[lo : lo + batch_size])
            out.append(nn.softmax_probs(scores.astype(np.float64)))
        return np.concatenate(out, axis=0)


def gradient_check(
    network,
    x,
    label,
    epsilon=1e-5,
    coords_per_param=16,
    rng=None,
    grad_transform=None,
):
    """Max relative error between analytic and central-difference gradients.

    Runs in float64 with dropout disabled. Coordinates are sampled from
    every parameter tensor so all layers are exercised; `grad_transform`
    exists so tests can corrupt the analytic gradient and confirm the check
    would catch it.
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError("epsilon outside the trustworthy range [1e-6, 1e-3]")
    if rng is None:
        rng = np.random.default_rng(0)
    net = network.astype(np.float64)
    # differentiate at a generic nearby point: with zero-initialized biases
    # whole ReLU windows sit exactly on the kink, where central differences
    # disagree with the (correct) one-sided analytic gradient
    for param in net.params.values():
        scale = 0.1 * float(param.std()) or 0.05
        param += rng.uniform(-scale, scale, param.shape)
    x64 = np.asarray(x, dtype=np.float64)
    labels = np.atleast_1d(np.asarray(label))

    loss, grads = net.loss_and_grads(x64, labels, train=False)
    if grad_transform is not None:
        grads = grad_transform(dict(grads))

    worst = 0.0
    for name, param in net.params.items():
        g = grads[name]
        n_coords = min(coords_per_param, param.size)
        flat_idx = rng.choice(param.size, size=n_coords, replace=False)
        for idx in flat_idx:
            where = np.unravel_index(idx, param.shape)
            orig = param[where]
            param[where] = orig + epsilon
            plus, _ = nn.softmax_cross_entropy(
                net.forward(x64)[0], labels
            )
            param[where] = orig - epsilon
            minus, _ = nn.softmax_cross_entropy(
                net.forward(x64)[0], labels
            )
            param[where] = orig
            numeric = (plus - minus) / (2.0 * epsilon)
            analytic = float(g[where])
            denom = max(abs(numeric) + abs(analytic), 1e-6)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst


@dataclass(frozen=True)
class ActivityVector:
    """Per-class scores from one antenna; scores sum to one."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 1 or scores.size < 2:
            raise ValueError("scores must be a 1-D vector of >= 2 classes")
        if np.any(scores < 0) or abs(scores.sum() - 1.0) > 1e-6:
            raise ValueError("scores must be non-negative and sum to 1")
        object.__setattr__(self, "scores", scores)

    @property
    def label(self):
        return int(np.argmax(self.scores))


@dataclass(frozen=True)
class FusionResult:
    label: int
    rule: str
    antenna_labels: tuple
    fused_scores: np.ndarray = None


def fuse(vectors):
    """Combine per-antenna activity vectors into one decision.

    If at least n_antennas - 1 per-antenna argmax labels coincide on a
    unique class, that class wins ("agreement"); otherwise the class with
    the largest element-wise score sum wins ("sum", ties to lowest index).
    """
    rows = [v.scores if isinstance(v, ActivityVector) else np.asarray(v, float) for v in vectors]
    if not rows:
        raise ValueError("fuse needs at least one activity vector")
    scores = np.stack(rows)
    labels = scores.argmax(axis=1)
    n_ant, n_classes = scores.shape
    counts = np.bincount(labels, minlength=n_classes)
    winners = np.flatnonzero(counts >= max(n_ant - 1, 1))
    if winners.size == 1:
        return FusionResult(
            label=int(winners[0]),
            rule="agreement",
            antenna_labels=tuple(int(l) for l in labels),
            fused_scores=scores.sum(axis=0),
        )
    fused = scores.sum(axis=0)
    return FusionResult(
        label=int(np.argmax(fused)),
        rule="sum",
        antenna_labels=tuple(int(l) for l in labels),
        fused_scores=fused,
    )


def classification_metrics(y_true, y_pred, n_classes):
    """Accuracy, per-class recall, per-class F1 and a row-normalized confusion matrix."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have the same length")
    confusion = np.zeros((n_classes, n_classes), dtype=np.float64)
    np.add.at(confusion, (y_true, y_pred), 1.0)
    support = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    diag = np.diag(confusion)

    recall = np.divide(diag, support, out=np.zeros(n_classes), where=support > 0)
    precision = np.divide(diag, predicted, out=np.zeros(n_classes), where=predicted > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros(n_classes), where=pr > 0)
    empty = np.flatnonzero(support == 0)
    if empty.size:
        warnings.warn(
            f"classes {empty.tolist()} have no true samples; their F1 is reported as 0",
            RuntimeWarning,
            stacklevel=2,
        )
    confusion_norm = np.divide(
        confusion,
        support[:, None],
        out=np.zeros_like(confusion),
        where=support[:, None] > 0,
    )
    return {
        "accuracy": float((y_true == y_pred).mean()) if y_true.size else 0.0,
        "per_class_accuracy": recall,
        "f1": f1,
        "confusion": confusion_norm,
        "support": support.astype(np.int64),
    }


def save_checkpoint(path, network, extra=None):
    """Self-describing checkpoint: spec, dtypes/shapes and all tensors."""
    payload = {f"param:{k}": v for k, v in network.params.items()}
    meta = {"format": CHECKPOINT_FORMAT, "spec": json.loads(network.spec.to_json())}
    if extra:
        meta["extra"] = extra
    np.savez(path, meta=json.dumps(meta), **payload)


def load_checkpoint(path):
    try:
        with np.load(path, allow_pickle=False) as data:
            if "meta" not in data:
                raise DataFormatError(f"{path}: not a model checkpoint")
            meta = json.loads(str(data["meta"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise DataFormatError(
                    f"{path}: unsupported checkpoint format {meta.get('format')!r}"
                )
            spec = NetworkSpec.from_json(json.dumps(meta["spec"]))
            params = {
                key[len("param:"):]: data[key]
                for key in data.files
                if key.startswith("param:")
            }
    except (OSError, ValueError, EOFError, zipfile.BadZipFile) as exc:
        raise DataFormatError(f"{path}: cannot read checkpoint ({exc})") from exc
    expected = set(spec.parameter_shapes())
    if set(params) != expected:
        raise DataFormatError(
            f"{path}: checkpoint tensors do not match the declared architecture"
        )
    dtype = params["dense_w"].dtype
    network = InceptionNetwork(spec, dtype=dtype, params=params)
    network.extra = meta.get("extra", {})
    return network


class InceptionClassifier(ClassifierMixin, BaseEstimator):
    """fit/predict wrapper around InceptionNetwork with Adam training.

    X is a stack of dB traces (n, rows, cols) in [-threshold_db, 0]; inputs
    are shifted/scaled to [0, 1] internally using `input_floor`.
    """

    def __init__(
        self,
        n_classes=5,
        branch_maps=(5, 5, 5),
        bottleneck_maps=4,
        mid_maps=4,
        reduce_maps=3,
        dropout_rate=0.2,
        learning_rate=1e-3,
        batch_size=32,
        max_epochs=50,
        patience=10,
        val_fraction=0.2,
        input_floor=-12.0,
        seed=0,
        log_path=None,
        verbose=False,
    ):
        self.n_classes = n_classes
        self.branch_maps = branch_maps
        self.bottleneck_maps = bottleneck_maps
        self.mid_maps = mid_maps
        self.reduce_maps = reduce_maps
        self.dropout_rate = dropout_rate
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.val_fraction = val_fraction
        self.input_floor = input_floor
        self.seed = seed
        self.log_path = log_path
        self.verbose = verbose

    def _rescale(self, X):
        return rescale_traces(X, floor_db=self.input_floor)

    def fit(self, X, y, X_val=None, y_val=None):
        X = np.asarray(X)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 3:
            raise ValueError("X must be (n_traces, rows, cols)")
        if y.shape != (X.shape[0],):
            raise ValueError("y length must match X")
        if y.min(initial=0) < 0 or y.max(initial=0) >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        missing = sorted(set(range(self.n_classes)) - set(np.unique(y).tolist()))
        if missing:
            raise ValueError(f"classes absent from training data: {missing}")

        rng = np.random.default_rng(self.seed)
        if X_val is None:
            order = rng.permutation(X.shape[0])
            n_val = max(1, int(round(self.val_fraction * X.shape[0])))
            val_idx, train_idx = order[:n_val], order[n_val:]
            X_val, y_val = X[val_idx], y[val_idx]
            X, y = X[train_idx], y[train_idx]
        else:
            X_val = np.asarray(X_val)
            y_val = np.asarray(y_val, dtype=np.int64)

        spec = NetworkSpec(
            input_shape=X.shape[1:],
            branch_maps=tuple(self.branch_maps),
            bottleneck_maps=self.bottleneck_maps,
            mid_maps=self.mid_maps,
            reduce_maps=self.reduce_maps,
            dropout_rate=self.dropout_rate,
            n_classes=self.n_classes,
        )
        net = InceptionNetwork(spec, rng=rng)
        optimizer = nn.Adam(net.params, lr=self.learning_rate)
        Xt = self._rescale(X)
        Xv = self._rescale(X_val)

        best_val = np.inf
        best_params = {k: v.copy() for k, v in net.params.items()}
        stale = 0
        history = []
        log_handle = open(self.log_path, "w") if self.log_path else None
        try:
            for epoch in range(self.max_epochs):
                order = rng.permutation(Xt.shape[0])
                epoch_loss = 0.0
                for lo in range(0, order.size, self.batch_size):
                    idx = order[lo : lo + self.batch_size]
                    loss, grads = net.loss_and_grads(Xt[idx], y[idx], train=True, rng=rng)
                    optimizer.step(net.params, grads)
                    epoch_loss += loss * idx.size
                epoch_loss /= order.size

                val_probs = net.predict_proba(Xv)
                eps = np.finfo(np.float64).tiny
                val_loss = float(
                    -np.log(val_probs[np.arange(y_val.size), y_val] + eps).mean()
                )
                val_acc = float((val_probs.argmax(axis=1) == y_val).mean())
                record = {
                    "epoch": epoch,
                    "loss": round(epoch_loss, 6),
                    "val_loss": round(val_loss, 6),
                    "val_accuracy": round(val_acc, 6),
                }
                history.append(record)
                if log_handle:
                    log_handle.write(json.dumps(record) + "\n")
                    log_handle.flush()
                if self.verbose:
                    print(
                        f"epoch {epoch:3d}  loss {epoch_loss:.4f}  "
                        f"val_loss {val_loss:.4f}  val_acc {val_acc:.3f}"
                    )
                if val_loss < best_val - 1e-6:
                    best_val = val_loss
                    best_params = {k: v.copy() for k, v in net.params.items()}
                    stale = 0
                else:
                    stale += 1
                    if stale > self.patience:
                        break
        finally:
            if log_handle:
                log_handle.close()

        net.params = best_params
        self.network_ = net
        self.history_ = history
        self.classes_ = np.arange(self.n_classes)
        self.n_parameters_ = spec.parameter_count
        return self

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise RuntimeError("InceptionClassifier must be fitted first")

    def predict_proba(self, X):
        self._check_fitted()
        return self.network_.predict_proba(self._rescale(np.asarray(X)))

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)
