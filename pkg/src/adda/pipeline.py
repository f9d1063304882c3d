"""The three-stage adaptation protocol.

Stage 1 trains encoder+classifier on labeled source data and freezes
them. Stage 2 initializes a separate target encoder from the source
weights and plays the GAN game against a fresh discriminator: one
discriminator update (source features labeled 1, target features 0)
and one mapping update (target features, inverted label 1) per
mini-batch iteration. Stage 3 scores target and source test sets
through the adapted encoder and the frozen source classifier.

Target labels are never read during adaptation; they exist only for
evaluation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import DatasetContainer, preprocess, resolve_dataset
from .errors import NumericsError, ValidationError
from .models import Classifier, Discriminator, Encoder
from .optim import Adam, BatchPlan, batch_indices
from .tensor import Tensor, backward, no_grad, sigmoid_bce, softmax_cross_entropy

SOURCE_DOMAIN_LABEL = 1
TARGET_DOMAIN_LABEL = 0

# sub-stream tags for deriving independent RNG seeds from one run seed
_S_ENCODER, _S_CLASSIFIER, _S_PRETRAIN_BATCHES = 0, 1, 2
_S_DISCRIMINATOR, _S_SOURCE_BATCHES, _S_TARGET_BATCHES = 3, 4, 5
_S_SUBSAMPLE = 6


def subseed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1, np.uint64)[0])


@dataclass
class SourceModel:
    """Frozen encoder/classifier pair plus its training curves."""

    encoder: Encoder
    classifier: Classifier
    train_loss: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)


def _minibatch(x: Tensor, idx: np.ndarray) -> Tensor:
    return Tensor(x.data[idx])


def pretrain_source(train_x: Tensor, train_y: np.ndarray, *,
                    epochs: int = 80, lr: float = 1e-3, batch_size: int = 200,
                    seed: int = 0, test_x: Tensor | None = None,
                    test_y: np.ndarray | None = None) -> SourceModel:
    """Supervised stage: minimize cross entropy, then freeze both nets."""
    enc = Encoder.init(subseed(seed, _S_ENCODER))
    cls = Classifier.init(subseed(seed, _S_CLASSIFIER))
    opt = Adam(enc.parameters() + cls.parameters(), lr=lr)
    plan = BatchPlan(epochs=epochs, batch_size=batch_size, seed=subseed(seed, _S_PRETRAIN_BATCHES))
    n = train_x.shape[0]
    model = SourceModel(enc, cls)
    for epoch in range(epochs):
        total = 0.0
        for it, idx in enumerate(batch_indices(plan, n, epoch)):
            try:
                loss = softmax_cross_entropy(cls(enc(_minibatch(train_x, idx))), train_y[idx])
                backward(loss)
                opt.step()
            except NumericsError as e:
                raise NumericsError(
                    f"pretraining diverged at epoch {epoch} iteration {it}: {e}"
                ) from e
            total += loss.item() * len(idx)
        model.train_loss.append(total / n)
        if test_x is not None and test_y is not None:
            acc, _ = evaluate(enc, cls, test_x, test_y)
            model.test_acc.append(acc)
    enc.freeze()
    cls.freeze()
    return model


def adapt_target(source: SourceModel, source_x: Tensor, target_x: Tensor, *,
                 epochs: int = 150, lr: float = 1e-4, batch_size: int = 200,
                 seed: int = 0, discriminator: Discriminator | None = None,
                 ) -> tuple[Encoder, dict[str, list[float]]]:
    """Adversarial stage: returns the adapted target encoder and the
    per-iteration discriminator / mapping loss history.

    The target encoder starts as a weight copy of the (frozen) source
    encoder; each mini-batch iteration runs exactly one discriminator
    update and one mapping update.
    """
    target_enc = source.encoder.copy(frozen=False)
    disc = discriminator if discriminator is not None else Discriminator.init(
        subseed(seed, _S_DISCRIMINATOR)
    )
    opt_d = Adam(disc.parameters(), lr=lr)
    opt_m = Adam(target_enc.parameters(), lr=lr)
    plan_s = BatchPlan(epochs=epochs, batch_size=batch_size, seed=subseed(seed, _S_SOURCE_BATCHES))
    plan_t = BatchPlan(epochs=epochs, batch_size=batch_size, seed=subseed(seed, _S_TARGET_BATCHES))
    ns, nt = source_x.shape[0], target_x.shape[0]
    history: dict[str, list[float]] = {"d_loss": [], "m_loss": []}
    for epoch in range(epochs):
        pairs = zip(batch_indices(plan_s, ns, epoch), batch_indices(plan_t, nt, epoch))
        for it, (si, ti) in enumerate(pairs):
            try:
                with no_grad():  # frozen source features; target features as constants
                    fs = source.encoder(_minibatch(source_x, si))
                    ft_const = target_enc(_minibatch(target_x, ti))

                opt_d.zero_grad()
                d_loss = sigmoid_bce(disc(fs), np.full(len(si), SOURCE_DOMAIN_LABEL)) + sigmoid_bce(
                    disc(ft_const), np.full(len(ti), TARGET_DOMAIN_LABEL)
                )
                backward(d_loss)
                opt_d.step()

                opt_m.zero_grad()
                ft = target_enc(_minibatch(target_x, ti))
                m_loss = sigmoid_bce(disc(ft), np.full(len(ti), SOURCE_DOMAIN_LABEL))
                backward(m_loss)
                opt_m.step()
            except NumericsError as e:
                raise NumericsError(
                    f"adaptation diverged at epoch {epoch} iteration {it}: {e}"
                ) from e
            history["d_loss"].append(d_loss.item())
            history["m_loss"].append(m_loss.item())
    return target_enc, history


def evaluate(encoder: Encoder, classifier: Classifier, x: Tensor, labels: np.ndarray,
             batch_size: int = 512) -> tuple[float, np.ndarray]:
    """Accuracy plus the full argmax prediction vector (ties break low)."""
    n = x.shape[0]
    if n == 0 or len(labels) != n:
        raise ValidationError(f"evaluate: {n} examples vs {len(labels)} labels")
    preds = np.empty(n, dtype=np.int64)
    with no_grad():
        for start in range(0, n, batch_size):
            logits = classifier(encoder(Tensor(x.data[start : start + batch_size])))
            preds[start : start + batch_size] = np.argmax(logits.data, axis=1)
    return float((preds == np.asarray(labels)).mean()), preds


def encode_features(encoder: Encoder, x: Tensor, batch_size: int = 512) -> np.ndarray:
    """Run the encoder over a dataset tensor; returns plain (N,500) floats."""
    n = x.shape[0]
    out = np.empty((n, Encoder.FEATURE_DIM), dtype=np.float32)
    with no_grad():
        for start in range(0, n, batch_size):
            out[start : start + batch_size] = encoder(Tensor(x.data[start : start + batch_size])).data
    return out


def subsample(ds: DatasetContainer, cap: int | None, seed: int) -> DatasetContainer:
    """Deterministic seeded subset of at most ``cap`` examples."""
    if cap is None or len(ds) <= cap:
        return ds
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _S_SUBSAMPLE])))
    return ds.take(rng.permutation(len(ds))[:cap])


@dataclass
class ProtocolResult:
    """Everything a protocol run produces: the JSON-ready report plus the
    in-memory models and test tensors for downstream figures."""

    report: dict
    source_model: SourceModel
    target_encoder: Encoder
    source_test: tuple[Tensor, np.ndarray]
    target_test: tuple[Tensor, np.ndarray]


def run_protocol(source_name: str, target_name: str, cfg: RunConfig) -> ProtocolResult:
    """Pretrain on source, adapt to target, report the three accuracies."""
    t0 = time.monotonic()
    src_train, src_test = resolve_dataset(cfg.data_dir, source_name, seed=cfg.seed)
    tgt_train, tgt_test = resolve_dataset(cfg.data_dir, target_name, seed=cfg.seed)
    src_train = subsample(src_train, cfg.caps.train, cfg.seed)
    tgt_train = subsample(tgt_train, cfg.caps.train, cfg.seed + 1)
    src_test = subsample(src_test, cfg.caps.eval, cfg.seed + 2)
    tgt_test = subsample(tgt_test, cfg.caps.eval, cfg.seed + 3)

    sx, sy = preprocess(src_train)
    stx, sty = preprocess(src_test)
    tx, _ = preprocess(tgt_train)  # target labels are never used for training
    ttx, tty = preprocess(tgt_test)

    source = pretrain_source(
        sx, sy,
        epochs=cfg.pretrain.epochs, lr=cfg.pretrain.lr, batch_size=cfg.batch_size,
        seed=cfg.seed, test_x=stx, test_y=sty,
    )
    baseline_acc, _ = evaluate(source.encoder, source.classifier, ttx, tty)

    target_enc, history = adapt_target(
        source, sx, tx,
        epochs=cfg.adapt.epochs, lr=cfg.adapt.lr, batch_size=cfg.batch_size, seed=cfg.seed,
    )
    adda_target_acc, _ = evaluate(target_enc, source.classifier, ttx, tty)
    adda_source_acc, _ = evaluate(target_enc, source.classifier, stx, sty)

    report = {
        "source": source_name,
        "target": target_name,
        "seed": cfg.seed,
        "config": {"sha256": cfg.sha256(), "values": cfg.to_dict()},
        "baseline_acc": baseline_acc,
        "adda_target_acc": adda_target_acc,
        "adda_source_acc": adda_source_acc,
        "loss_curves": {
            "pretrain_train_loss": source.train_loss,
            "pretrain_test_acc": source.test_acc,
            "adapt_d_loss": history["d_loss"],
            "adapt_m_loss": history["m_loss"],
        },
        "wall_time": time.monotonic() - t0,
    }
    return ProtocolResult(
        report=report,
        source_model=source,
        target_encoder=target_enc,
        source_test=(stx, sty),
        target_test=(ttx, tty),
    )
