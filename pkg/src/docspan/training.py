"""Optimizer and training loops for both model families.

Training is deliberately deterministic: one seeded generator drives
shuffling (and dropout when enabled), documents are processed in
permutation order, and gradients accumulate over a batch before a single
Adam step. Parameters that never receive a gradient are never touched by
the optimizer, which is what keeps previously learned query vectors
bit-exact across later fine-tuning runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, Tensor, backward
from .datasets import Dataset
from .decoder import ChainExample, chain_loss
from .errors import ConfigError
from .metrics import EvalReport, entity_f1, gold_entities
from .models import SeqLabelModel, SpanModel
from .seqlabel import bio_encode, tag_forward, tag_loss, tag_loss_mask


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Adam over a ParamStore; parameters without a gradient are skipped."""

    def __init__(self, store: ParamStore, config: OptimizerConfig):
        self.store = store
        self.config = config
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def step(self) -> None:
        c = self.config
        for name, p in self.store.items():
            g = p.grad
            if g is None:
                continue
            if name not in self._m:
                self._m[name] = np.zeros_like(p.value)
                self._v[name] = np.zeros_like(p.value)
                self._t[name] = 0
            self._t[name] += 1
            t = self._t[name]
            m = self._m[name]
            v = self._v[name]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * (g * g)
            m_hat = m / (1 - c.beta1**t)
            v_hat = v / (1 - c.beta2**t)
            p.value -= c.lr * m_hat / (np.sqrt(v_hat) + c.eps)


def span_doc_loss(model: SpanModel, doc, field_ids, train=False, rng=None) -> Tensor:
    """Mean teacher-forced chain loss over every field of the schema.

    Fields absent from the document still contribute one step toward the
    null span, which is what teaches the model to answer "nothing here".
    """
    hidden, mask = model.encode_doc(doc, train=train, rng=rng)
    golds = {ann.field_id: ann.spans for ann in doc.annotations}
    total: Tensor | None = None
    for fid in field_ids:
        example = ChainExample(fid, tuple(golds.get(fid, ())))
        step = chain_loss(example, hidden, model.query(fid), model.store, mask)
        total = step if total is None else total + step
    return total * (1.0 / len(field_ids))


def seqlabel_doc_loss(model: SeqLabelModel, doc, train=False, rng=None) -> Tensor:
    hidden, _ = model.encode_doc(doc, train=train, rng=rng)
    logits = tag_forward(hidden, model.store)
    gold = bio_encode(doc, model.tagset, model.config.max_seq_len)
    return tag_loss(logits, gold, tag_loss_mask(doc, model.config.max_seq_len))


def _doc_loss(model, doc, dataset: Dataset, train: bool, rng) -> Tensor:
    if isinstance(model, SpanModel):
        return span_doc_loss(model, doc, dataset.schema.field_ids, train=train, rng=rng)
    return seqlabel_doc_loss(model, doc, train=train, rng=rng)


class _StepBudget:
    def __init__(self, max_steps: int | None):
        self.max_steps = max_steps
        self.steps = 0

    def exhausted(self) -> bool:
        return self.max_steps is not None and self.steps >= self.max_steps


def _train_batches(model, items, opt: Adam, batch_size: int, rng, budget: _StepBudget, train: bool = True):
    """One pass over (dataset, doc) items in shuffled order; yields per-item losses."""
    order = rng.permutation(len(items))
    losses = []
    for lo in range(0, len(order), batch_size):
        if budget.exhausted():
            break
        idxs = order[lo : lo + batch_size]
        model.store.zero_grad()
        for i in idxs:
            dataset, doc = items[int(i)]
            loss = _doc_loss(model, doc, dataset, train, rng)
            backward(loss)
            losses.append((dataset.dataset_id, loss.item()))
        scale = 1.0 / len(idxs)
        for _, p in model.store.items():
            if p.grad is not None:
                p.grad *= scale
        opt.step()
        budget.steps += 1
    return losses


def evaluate(model, dataset: Dataset) -> EvalReport:
    preds, golds = [], []
    for doc in dataset.documents:
        golds.append(gold_entities(doc))
        if isinstance(model, SpanModel):
            entities, _ = model.predict_doc(doc, dataset.schema.field_ids)
        else:
            entities = model.predict_doc(doc)
        preds.append(entities)
    return entity_f1(preds, golds, known_fields=dataset.schema.field_ids)


def train_model(
    model,
    train_ds: Dataset,
    dev_ds: Dataset,
    opt_config: OptimizerConfig,
    epochs: int,
    batch_size: int,
    seed: int,
    checkpoint_path=None,
    max_steps: int | None = None,
    eval_every: int = 1,
    log=None,
) -> list[dict]:
    """Fine-tune on one dataset, track dev micro F1, keep the best checkpoint.

    Returns one history row per epoch:
    {"epoch", "train_loss", "dev_micro", "dev_macro"}; the dev columns are
    NaN on epochs skipped via eval_every (the final epoch always evaluates).
    """
    if isinstance(model, SpanModel):
        for fid in train_ds.schema.field_ids:
            model.registry.register(fid)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    opt = Adam(model.store, opt_config)
    budget = _StepBudget(max_steps)
    items = [(train_ds, doc) for doc in train_ds.documents]

    history: list[dict] = []
    best_micro = -1.0
    for epoch in range(1, epochs + 1):
        losses = _train_batches(model, items, opt, batch_size, rng, budget)
        mean_loss = float(np.mean([l for _, l in losses])) if losses else float("nan")
        last = epoch == epochs or budget.exhausted()
        if epoch % eval_every == 0 or last:
            report = evaluate(model, dev_ds)
            dev_micro, dev_macro = report.micro_f1, report.macro_f1
            if dev_micro > best_micro:
                best_micro = dev_micro
                if checkpoint_path is not None:
                    model.save(checkpoint_path)
        else:
            dev_micro = dev_macro = float("nan")
        row = {
            "epoch": epoch,
            "train_loss": mean_loss,
            "dev_micro": dev_micro,
            "dev_macro": dev_macro,
        }
        history.append(row)
        if log:
            log(f"epoch {epoch}: train_loss={mean_loss:.4f} dev_micro={dev_micro:.4f}")
        if budget.exhausted():
            break
    return history


def pretrain_spans(
    datasets: list[Dataset],
    model: SpanModel,
    opt_config: OptimizerConfig,
    epochs: int,
    batch_size: int,
    seed: int,
    log=None,
) -> list[dict]:
    """Span-extraction pre-training over several annotated datasets.

    One shared encoder and head; the query registry grows one vector per
    field of every dataset. Documents are interleaved proportionally to
    dataset size each epoch. Returns rows {"epoch", "dataset", "mean_loss"}.
    """
    seen: dict[str, str] = {}
    for ds in datasets:
        for fid in ds.schema.field_ids:
            if fid in seen:
                raise ConfigError(
                    f"field id {fid!r} appears in both {seen[fid]!r} and {ds.dataset_id!r}; "
                    "namespace fields per dataset"
                )
            seen[fid] = ds.dataset_id
    for ds in datasets:
        for fid in ds.schema.field_ids:
            model.registry.register(fid)

    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    opt = Adam(model.store, opt_config)
    budget = _StepBudget(None)

    rows: list[dict] = []
    for epoch in range(1, epochs + 1):
        items = _proportional_interleave(
            [[(ds, doc) for doc in ds.documents] for ds in datasets], rng
        )
        losses = _train_batches(model, items, opt, batch_size, rng, budget)
        by_ds: dict[str, list[float]] = {ds.dataset_id: [] for ds in datasets}
        for ds_id, loss in losses:
            by_ds[ds_id].append(loss)
        for ds in datasets:
            vals = by_ds[ds.dataset_id]
            mean_loss = float(np.mean(vals)) if vals else float("nan")
            rows.append({"epoch": epoch, "dataset": ds.dataset_id, "mean_loss": mean_loss})
            if log:
                log(f"epoch {epoch}: {ds.dataset_id} mean_loss={mean_loss:.4f}")
    return rows


def _proportional_interleave(queues: list[list], rng) -> list:
    """Merge shuffled queues round-robin, proportionally to their sizes."""
    shuffled = []
    for q in queues:
        order = rng.permutation(len(q))
        shuffled.append([q[int(i)] for i in order])
    total = sum(len(q) for q in shuffled)
    if total == 0:
        return []
    weights = [len(q) / total for q in shuffled]
    credits = [0.0] * len(shuffled)
    pos = [0] * len(shuffled)
    merged = []
    for _ in range(total):
        for i, w in enumerate(weights):
            if pos[i] < len(shuffled[i]):
                credits[i] += w
        pick = max(
            (i for i in range(len(shuffled)) if pos[i] < len(shuffled[i])),
            key=lambda i: credits[i],
        )
        merged.append(shuffled[pick][pos[pick]])
        pos[pick] += 1
        credits[pick] -= 1.0
    return merged
