"""Surrogate critic: predicts the impression gain of a strategy in context.

Features are hashed character n-grams of "strategy summary + query + document
head" with the strategy's descriptor appended as one-hots.  A two-layer value
head maps features to a scalar.  Training combines Huber regression on gains
with a rank-weighted pairwise logistic loss; stage one freezes the first
layer, stage two trains everything.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Context
from .genotype import DESCRIPTOR_CARDINALITIES, Strategy, descriptor

HUBER_DELTA = 1.0
DESCRIPTOR_ONEHOT_DIM = sum(DESCRIPTOR_CARDINALITIES)


class CriticDivergence(RuntimeError):
    """Training hit a non-finite loss."""


@dataclass(frozen=True)
class CriticConfig:
    feature_dim: int = 4096
    hidden_dim: int = 64
    ngram_n: int = 3
    doc_head_tokens: int = 512
    lr: float = 0.01
    epochs: int = 12
    batch_size: int = 64
    reg_weight: float = 0.2
    freeze_epochs: int = 1
    online_epochs: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.feature_dim <= DESCRIPTOR_ONEHOT_DIM:
            raise ValueError(
                f"feature_dim must exceed {DESCRIPTOR_ONEHOT_DIM}"
            )
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be >= 0")


class FeatureEncoder:
    """Deterministic featurization of a (context, strategy) pair."""

    def __init__(self, config: CriticConfig):
        self.config = config
        self.hash_dim = config.feature_dim - DESCRIPTOR_ONEHOT_DIM

    def encode(self, x: Context, s: Strategy) -> np.ndarray:
        head = " ".join(x.document.text.split()[: self.config.doc_head_tokens])
        text = f"{s.summary}\x1f{x.query.text}\x1f{head}".lower()
        vec = np.zeros(self.config.feature_dim)
        n = self.config.ngram_n
        for i in range(len(text) - n + 1):
            h = zlib.crc32(text[i : i + n].encode())
            sign = 1.0 if (h >> 16) & 1 else -1.0
            vec[h % self.hash_dim] += sign
        norm = np.linalg.norm(vec[: self.hash_dim])
        if norm > 0:
            vec[: self.hash_dim] /= norm
        offset = self.hash_dim
        for value, card in zip(descriptor(s.genotype), DESCRIPTOR_CARDINALITIES):
            vec[offset + value] = 1.0
            offset += card
        return vec

    def encode_batch(self, items: list[tuple[Context, Strategy]]) -> np.ndarray:
        return np.stack([self.encode(x, s) for x, s in items])


@dataclass(frozen=True)
class PreferencePair:
    """Ordered preference between two entries of the same context."""

    context_id: str
    plus: int
    minus: int
    weight: float


@dataclass
class OfflineDataset:
    """Gain-labeled (context, strategy) entries plus ranking pairs."""

    entries: list[tuple[Context, Strategy, float]] = field(default_factory=list)
    pairs: list[PreferencePair] = field(default_factory=list)
    excluded: int = 0

    def __len__(self) -> int:
        return len(self.entries)


def rank_weight(rank_plus: int, rank_minus: int) -> float:
    """Pair weight 1/(rank+ + rank-); ranks are 1-based."""
    return 1.0 / (rank_plus + rank_minus)


def build_context_pairs(
    context_id: str,
    ranked: list[tuple[int, float]],
    rng=None,
    dense_top: int = 5,
    contrastive: int = 3,
) -> list[PreferencePair]:
    """Pairs from a ranked (entry_index, gain) list: dense top pairs plus
    top-vs-bottom contrastive samples.  Gains must strictly differ."""
    pairs: list[PreferencePair] = []
    top = ranked[:dense_top]
    for a in range(len(top)):
        for b in range(a + 1, len(top)):
            (idx_a, gain_a), (idx_b, gain_b) = top[a], top[b]
            if gain_a > gain_b:
                pairs.append(
                    PreferencePair(context_id, idx_a, idx_b, rank_weight(a + 1, b + 1))
                )
    if rng is not None and len(ranked) >= 2:
        head = ranked[:3]
        tail = ranked[-3:]
        for _ in range(contrastive):
            ra, (idx_a, gain_a) = _pick(rng, head)
            rb, (idx_b, gain_b) = _pick(rng, tail)
            if idx_a != idx_b and gain_a > gain_b:
                rank_a = ra + 1
                rank_b = len(ranked) - len(tail) + rb + 1
                pairs.append(
                    PreferencePair(
                        context_id, idx_a, idx_b, rank_weight(rank_a, rank_b)
                    )
                )
    return pairs


def _pick(rng, items):
    i = rng.randrange(len(items))
    return i, items[i]


def build_offline_labels(
    evaluator,
    cases,
    strategies: list[Strategy],
    rng,
    dense_top: int = 5,
    contrastive: int = 3,
) -> OfflineDataset:
    """Evaluate every strategy on every case and construct training data.

    `cases` is a sequence of (Context, CandidateSet).  Strategies whose
    rewrite failed are excluded and counted.
    """
    if len(strategies) < 2:
        raise ValueError("need at least two strategies per context")
    data = OfflineDataset()
    for ctx, cands in cases:
        scored: list[tuple[Strategy, float]] = []
        for s in strategies:
            gain = evaluator.evaluate(ctx, s, cands)
            if gain is None:
                data.excluded += 1
                continue
            scored.append((s, gain))
        scored.sort(key=lambda t: (-t[1], t[0].id))
        base = len(data.entries)
        ranked = []
        for offset, (s, gain) in enumerate(scored):
            data.entries.append((ctx, s, gain))
            ranked.append((base + offset, gain))
        data.pairs.extend(
            build_context_pairs(
                ctx.id, ranked, rng, dense_top=dense_top, contrastive=contrastive
            )
        )
    return data


class CriticModel:
    """Two-layer value head over hashed features."""

    def __init__(self, config: CriticConfig | None = None):
        self.config = config or CriticConfig()
        self.encoder = FeatureEncoder(self.config)
        rng = np.random.default_rng(self.config.seed)
        d, h = self.config.feature_dim, self.config.hidden_dim
        self.w1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, h))
        self.b1 = np.zeros(h)
        self.w2 = np.zeros(h)
        self.b2 = 0.0
        self.step = 0
        self.stage = 0
        self._adam_m: dict[str, np.ndarray | float] = {}
        self._adam_v: dict[str, np.ndarray | float] = {}

    # -- inference ---------------------------------------------------------

    def forward(self, feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        hidden = np.tanh(feats @ self.w1 + self.b1)
        return hidden @ self.w2 + self.b2, hidden

    def score(self, x: Context, s: Strategy) -> float:
        feats = self.encoder.encode(x, s)[None, :]
        return float(self.forward(feats)[0][0])

    def score_features(self, feats: np.ndarray) -> np.ndarray:
        return self.forward(feats)[0]

    # -- loss --------------------------------------------------------------

    def loss_and_grads(
        self,
        feats: np.ndarray,
        gains: np.ndarray,
        pairs: list[PreferencePair],
        reg_weight: float | None = None,
    ) -> tuple[float, dict[str, np.ndarray | float]]:
        """Hybrid loss (pairwise + weighted Huber regression) and its gradients."""
        if feats.shape[0] == 0:
            raise ValueError("empty batch")
        lam = self.config.reg_weight if reg_weight is None else reg_weight
        scores, hidden = self.forward(feats)
        dscore = np.zeros_like(scores)

        err = scores - gains
        huber = np.where(
            np.abs(err) <= HUBER_DELTA,
            0.5 * err**2,
            HUBER_DELTA * (np.abs(err) - 0.5 * HUBER_DELTA),
        )
        l_reg = float(np.mean(huber))
        dscore += lam * np.clip(err, -HUBER_DELTA, HUBER_DELTA) / len(err)

        l_pair = 0.0
        if pairs:
            for p in pairs:
                margin = scores[p.plus] - scores[p.minus]
                l_pair += p.weight * float(np.logaddexp(0.0, -margin))
                slope = p.weight * _sigmoid(-margin) / len(pairs)
                dscore[p.plus] -= slope
                dscore[p.minus] += slope
            l_pair /= len(pairs)

        total = l_pair + lam * l_reg
        d_hidden = dscore[:, None] * self.w2[None, :]
        d_z = d_hidden * (1.0 - hidden**2)
        grads = {
            "w1": feats.T @ d_z,
            "b1": d_z.sum(axis=0),
            "w2": hidden.T @ dscore,
            "b2": float(dscore.sum()),
        }
        return total, grads

    def hybrid_loss(
        self,
        feats: np.ndarray,
        gains: np.ndarray,
        pairs: list[PreferencePair],
        reg_weight: float | None = None,
    ) -> float:
        return self.loss_and_grads(feats, gains, pairs, reg_weight)[0]

    # -- optimization --------------------------------------------------------

    def _adam_step(self, grads: dict, trainable: tuple[str, ...], lr: float) -> None:
        self.step += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        for name in trainable:
            g = grads[name]
            m = self._adam_m.get(name, np.zeros_like(g) if isinstance(g, np.ndarray) else 0.0)
            v = self._adam_v.get(name, np.zeros_like(g) if isinstance(g, np.ndarray) else 0.0)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * (g**2 if isinstance(g, np.ndarray) else g * g)
            self._adam_m[name] = m
            self._adam_v[name] = v
            m_hat = m / (1 - b1**self.step)
            v_hat = v / (1 - b2**self.step)
            if isinstance(g, np.ndarray):
                update = lr * m_hat / (np.sqrt(v_hat) + eps)
            else:
                update = lr * m_hat / (v_hat**0.5 + eps)
            setattr(self, name, getattr(self, name) - update)

    def _run_epochs(
        self,
        data: OfflineDataset,
        feats: np.ndarray,
        epochs: int,
        stage_two_from: int,
        shuffle_rng: np.random.Generator,
        report: list[dict],
    ) -> None:
        gains = np.array([gain for _, _, gain in data.entries])
        groups = _context_groups(data)
        pairs_by_context: dict[str, list[PreferencePair]] = {}
        for p in data.pairs:
            pairs_by_context.setdefault(p.context_id, []).append(p)

        for epoch in range(epochs):
            self.stage = 1 if epoch < stage_two_from else 2
            trainable = ("w2", "b2") if self.stage == 1 else ("w1", "b1", "w2", "b2")
            order = shuffle_rng.permutation(len(groups))
            batch: list[int] = []
            batch_ctx: list[str] = []
            for gi in order:
                ctx_id, idxs = groups[gi]
                batch.extend(idxs)
                batch_ctx.append(ctx_id)
                if len(batch) >= self.config.batch_size:
                    self._train_batch(
                        feats, gains, batch, batch_ctx, pairs_by_context, trainable
                    )
                    batch, batch_ctx = [], []
            if batch:
                self._train_batch(
                    feats, gains, batch, batch_ctx, pairs_by_context, trainable
                )
            loss = self.hybrid_loss(feats, gains, data.pairs)
            if not np.isfinite(loss):
                raise CriticDivergence(
                    f"non-finite loss at epoch {epoch} (stage {self.stage})"
                )
            report.append({"epoch": epoch, "stage": self.stage, "loss": loss})

    def _train_batch(
        self,
        feats: np.ndarray,
        gains: np.ndarray,
        batch: list[int],
        batch_ctx: list[str],
        pairs_by_context: dict[str, list[PreferencePair]],
        trainable: tuple[str, ...],
    ) -> None:
        local = {global_idx: i for i, global_idx in enumerate(batch)}
        pairs = [
            PreferencePair(p.context_id, local[p.plus], local[p.minus], p.weight)
            for ctx_id in batch_ctx
            for p in pairs_by_context.get(ctx_id, [])
            if p.plus in local and p.minus in local
        ]
        _, grads = self.loss_and_grads(feats[batch], gains[batch], pairs)
        self._adam_step(grads, trainable, self.config.lr)

    def train_offline(self, data: OfflineDataset) -> dict:
        """Staged offline training; returns a report with per-epoch losses."""
        if not data.entries:
            raise ValueError("empty training data")
        feats = self.encoder.encode_batch([(x, s) for x, s, _ in data.entries])
        gains = np.array([gain for _, _, gain in data.entries])
        if self.step == 0 and self.config.lr > 0:
            # Start the output bias at the target mean so the capped Huber
            # gradient does not spend the whole run absorbing a constant offset.
            self.b2 = float(gains.mean())
        initial = self.hybrid_loss(feats, gains, data.pairs)
        epoch_log: list[dict] = []
        shuffle_rng = np.random.default_rng(self.config.seed + 1)
        self._run_epochs(
            data,
            feats,
            epochs=self.config.epochs,
            stage_two_from=self.config.freeze_epochs,
            shuffle_rng=shuffle_rng,
            report=epoch_log,
        )
        return {
            "initial_loss": initial,
            "final_loss": epoch_log[-1]["loss"] if epoch_log else initial,
            "epochs": epoch_log,
            "excluded": data.excluded,
        }

    def calibrate_online(self, entries) -> "CriticModel":
        """Recalibrate on engine-labeled replay entries (source must be 'ge')."""
        records = list(entries)
        if not records:
            return self
        for rec in records:
            if rec.source != "ge":
                raise ValueError("online calibration accepts GE-labeled entries only")
        data = OfflineDataset()
        by_context: dict[str, list] = {}
        for rec in records:
            by_context.setdefault(rec.context.id, []).append(rec)
        for ctx_id, recs in by_context.items():
            recs.sort(key=lambda r: (-r.reward, r.strategy.id))
            base = len(data.entries)
            ranked = []
            for offset, rec in enumerate(recs):
                data.entries.append((rec.context, rec.strategy, rec.reward))
                ranked.append((base + offset, rec.reward))
            data.pairs.extend(build_context_pairs(ctx_id, ranked))
        feats = self.encoder.encode_batch([(x, s) for x, s, _ in data.entries])
        epoch_log: list[dict] = []
        shuffle_rng = np.random.default_rng(self.config.seed + 2 + self.step)
        self._run_epochs(
            data,
            feats,
            epochs=self.config.online_epochs,
            stage_two_from=0,
            shuffle_rng=shuffle_rng,
            report=epoch_log,
        )
        self.last_online_report = epoch_log
        return self

    # -- persistence -------------------------------------------------------

    def save(self, directory: str | Path, name: str = "critic") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "format_version": 1,
            "config": {
                "feature_dim": self.config.feature_dim,
                "hidden_dim": self.config.hidden_dim,
                "ngram_n": self.config.ngram_n,
                "doc_head_tokens": self.config.doc_head_tokens,
                "lr": self.config.lr,
                "epochs": self.config.epochs,
                "batch_size": self.config.batch_size,
                "reg_weight": self.config.reg_weight,
                "freeze_epochs": self.config.freeze_epochs,
                "online_epochs": self.config.online_epochs,
                "seed": self.config.seed,
            },
            "step": self.step,
            "stage": self.stage,
        }
        (directory / f"{name}.meta.json").write_text(
            json.dumps(meta, sort_keys=True) + "\n"
        )
        flat = np.concatenate(
            [self.w1.ravel(), self.b1, self.w2, np.array([self.b2])]
        )
        with open(directory / f"{name}.npy", "wb") as fh:
            np.save(fh, flat)
        # Optimizer moments must survive a save/load cycle for exact resume.
        moments = []
        for store in (self._adam_m, self._adam_v):
            for pname in ("w1", "b1", "w2", "b2"):
                value = store.get(pname)
                if value is None:
                    value = np.zeros_like(getattr(self, pname)) if pname != "b2" else 0.0
                moments.append(np.ravel(value).astype(float))
        with open(directory / f"{name}.opt.npy", "wb") as fh:
            np.save(fh, np.concatenate(moments))

    @classmethod
    def load(cls, directory: str | Path, name: str = "critic") -> "CriticModel":
        directory = Path(directory)
        meta = json.loads((directory / f"{name}.meta.json").read_text())
        if meta.get("format_version") != 1:
            raise ValueError("unsupported critic format version")
        model = cls(CriticConfig(**meta["config"]))
        flat = np.load(directory / f"{name}.npy")
        d, h = model.config.feature_dim, model.config.hidden_dim
        model.w1 = flat[: d * h].reshape(d, h)
        model.b1 = flat[d * h : d * h + h]
        model.w2 = flat[d * h + h : d * h + 2 * h]
        model.b2 = float(flat[-1])
        model.step = meta["step"]
        model.stage = meta["stage"]
        opt_path = directory / f"{name}.opt.npy"
        if opt_path.exists() and model.step > 0:
            moments = np.load(opt_path)
            sizes = [d * h, h, h, 1]
            offset = 0
            for store in ("_adam_m", "_adam_v"):
                chunks = {}
                for pname, size in zip(("w1", "b1", "w2", "b2"), sizes):
                    block = moments[offset : offset + size]
                    offset += size
                    if pname == "w1":
                        chunks[pname] = block.reshape(d, h)
                    elif pname == "b2":
                        chunks[pname] = float(block[0])
                    else:
                        chunks[pname] = block
                setattr(model, store, chunks)
        return model


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


def _context_groups(data: OfflineDataset) -> list[tuple[str, list[int]]]:
    groups: dict[str, list[int]] = {}
    for i, (ctx, _, _) in enumerate(data.entries):
        groups.setdefault(ctx.id, []).append(i)
    return list(groups.items())


def ndcg_at_k(predicted_order, true_gains, k: int) -> float:
    """NDCG@k of a predicted ranking (indices into true_gains, best first)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if any(g < 0 for g in true_gains):
        raise ValueError("gains must be non-negative")
    dcg = sum(
        true_gains[idx] / np.log2(i + 2)
        for i, idx in enumerate(predicted_order[:k])
    )
    ideal = sorted(true_gains, reverse=True)
    idcg = sum(g / np.log2(i + 2) for i, g in enumerate(ideal[:k]))
    if idcg == 0:
        return 1.0
    return float(dcg / idcg)
