"""Multi-cycle active-learning experiments.

A run starts from a random labelled subset, then alternates

    train on the labelled pool -> score the unlabeled pool ->
    annotate the ``b`` selected samples -> extend the labelled pool

for ``num_cycles`` cycles. Training and scoring only ever see feature
matrices and labels revealed by the :class:`Oracle`. The per-cycle mean
"real" loss over the unlabeled pool is an evaluation diagnostic that reads
ground truth directly; it never feeds back into training or selection.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nnet
from .config import ExperimentConfig
from .data import Dataset, Standardizer, gen_blobs, gen_two_moons, load_csv
from .discrepancy import cod_values
from .errors import ArgumentError, ConfigurationError, IndexRangeError
from .io import atomic_write_text, write_csv
from .nnet import NetworkSnapshot, NetworkSpec
from .sampling import AcquisitionStrategy, SelectionResult, acquire
from .training import TrainHistory, fit_cycle

log = logging.getLogger(__name__)

# stream tags for derive_seed
_DATA, _TEST, _INIT, _POOL, _TRAIN, _ACQ = range(1, 7)


def derive_seed(seed: int, *tags: int) -> int:
    """Independent child seed for one purpose of one run."""
    return int(np.random.SeedSequence([int(seed), *tags]).generate_state(1)[0])


@dataclass(frozen=True)
class PoolState:
    labeled: tuple[int, ...]
    unlabeled: tuple[int, ...]

    def __post_init__(self):
        lab = tuple(sorted(int(i) for i in self.labeled))
        unl = tuple(sorted(int(i) for i in self.unlabeled))
        if set(lab) & set(unl):
            raise ConfigurationError("labeled and unlabeled pools overlap")
        object.__setattr__(self, "labeled", lab)
        object.__setattr__(self, "unlabeled", unl)

    @property
    def n(self) -> int:
        return len(self.labeled) + len(self.unlabeled)

    def extend(self, indices) -> "PoolState":
        new = {int(i) for i in indices}
        if not new <= set(self.unlabeled):
            raise ArgumentError("can only label samples from the unlabeled pool")
        return PoolState(self.labeled + tuple(new), tuple(i for i in self.unlabeled if i not in new))


def init_pools(n: int, start_fraction: float, seed: int) -> PoolState:
    """``round(start_fraction * n)`` labelled indices drawn uniformly."""
    if not 0.0 < start_fraction < 1.0:
        raise ConfigurationError(f"start_fraction must lie in (0, 1), got {start_fraction}")
    if n < 1:
        raise ArgumentError("need at least one sample")
    k = int(round(start_fraction * n))
    chosen = np.random.default_rng(seed).choice(n, size=k, replace=False)
    chosen_set = set(chosen.tolist())
    return PoolState(tuple(chosen_set), tuple(i for i in range(n) if i not in chosen_set))


class Oracle:
    """Holds the hidden labels and reveals them one index at a time."""

    def __init__(self, labels):
        self._labels = np.array(labels, copy=True)
        self._labels.flags.writeable = False
        self._revealed: dict[int, object] = {}
        self.repeat_requests = 0

    def __len__(self):
        return len(self._labels)

    def reveal(self, index: int):
        index = int(index)
        if not 0 <= index < len(self._labels):
            raise IndexRangeError(f"index {index} outside [0, {len(self._labels)})")
        if index in self._revealed:
            self.repeat_requests += 1
            return self._revealed[index]
        label = self._labels[index].item()
        self._revealed[index] = label
        return label

    @property
    def reveal_count(self) -> int:
        return len(self._revealed)

    def revealed_labels(self, indices) -> np.ndarray:
        """Labels of already revealed indices; raises for anything unrevealed."""
        try:
            return np.array([self._revealed[int(i)] for i in indices], dtype=self._labels.dtype)
        except KeyError as exc:
            raise ArgumentError(f"label of index {exc.args[0]} has not been revealed") from None


def oracle_label(oracle: Oracle, index: int):
    return oracle.reveal(index)


@dataclass
class CycleRecord:
    cycle: int
    num_labeled: int
    labeled_fraction: float
    test_accuracy: float | None
    test_loss: float
    mean_cod_unlabeled: float
    mean_real_loss_unlabeled: float
    grad_norm_mean: float
    grad_norm_var: float
    selection: SelectionResult | None = None
    clipped: bool = False
    # in-memory diagnostics, not written to cycles.csv
    unlabeled_indices: np.ndarray = field(default=None, repr=False)
    cod_unlabeled: np.ndarray = field(default=None, repr=False)
    loss_unlabeled: np.ndarray = field(default=None, repr=False)
    model: NetworkSnapshot = field(default=None, repr=False)
    previous: NetworkSnapshot = field(default=None, repr=False)
    ema: NetworkSnapshot = field(default=None, repr=False)
    history: TrainHistory = field(default=None, repr=False)
    labeled_indices: tuple = field(default=(), repr=False)

    CSV_HEADER = (
        "cycle", "num_labeled", "labeled_fraction", "test_accuracy", "test_loss",
        "mean_cod_unlabeled", "mean_real_loss_unlabeled", "grad_norm_mean", "grad_norm_var",
        "num_selected", "clipped",
    )

    def csv_row(self):
        return (
            self.cycle, self.num_labeled, self.labeled_fraction, self.test_accuracy, self.test_loss,
            self.mean_cod_unlabeled, self.mean_real_loss_unlabeled, self.grad_norm_mean,
            self.grad_norm_var, len(self.selection.chosen) if self.selection else 0, self.clipped,
        )


def build_datasets(config: ExperimentConfig, seed: int) -> tuple[Dataset, Dataset]:
    """Training pool and held-out test set for one seed, standardized on the pool."""
    dc = config.dataset
    if dc.kind == "two_moons":
        train = gen_two_moons(dc.n, dc.noise, derive_seed(seed, _DATA))
        test = gen_two_moons(dc.n_test + dc.n_test % 2, dc.noise, derive_seed(seed, _TEST))
    elif dc.kind == "blobs":
        train = gen_blobs(dc.n, dc.k, dc.spread, derive_seed(seed, _DATA))
        test = gen_blobs(dc.n_test, dc.k, dc.spread, derive_seed(seed, _TEST))
    else:
        full = load_csv(dc.path, dc.label_column, dc.delimiter, dc.header)
        order = np.random.default_rng(derive_seed(seed, _TEST)).permutation(full.n)
        n_test = max(1, int(round(dc.test_fraction * full.n)))
        test, train = full.subset(order[:n_test]), full.subset(order[n_test:])
    if dc.standardize:
        st = Standardizer.fit(train.features)
        train = train.with_features(st.transform(train.features))
        test = test.with_features(st.transform(test.features))
    return train, test


def network_spec(config: ExperimentConfig, data: Dataset) -> NetworkSpec:
    if data.num_classes:
        widths = (data.d, *config.network.hidden, data.num_classes)
        head = nnet.SOFTMAX_CLASSIFICATION
    else:
        widths = (data.d, *config.network.hidden, 1)
        head = nnet.SCALAR_REGRESSION
    return NetworkSpec(widths, head=head, init_scale=config.network.init_scale)


def budget_size(config: ExperimentConfig, n: int) -> int:
    """Per-cycle budget, fixed once from the full pool size."""
    return max(1, int(round(config.budget_fraction * n)))


def _evaluation_losses(model: NetworkSnapshot, data: Dataset, indices) -> np.ndarray:
    """Ground-truth losses for diagnostics only. Never used for training or selection."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return np.zeros(0)
    return nnet.per_sample_loss(model, data.features[idx], data.labels[idx])


def _test_metrics(model: NetworkSnapshot, test: Dataset):
    loss = float(nnet.per_sample_loss(model, test.features, test.labels).mean())
    if not test.num_classes:
        return None, loss
    pred = nnet.forward_batch(model, test.features).argmax(axis=1)
    return float(np.mean(pred == test.labels)), loss


def run_experiment(config: ExperimentConfig, seed: int | None = None, out_dir=None) -> list[CycleRecord]:
    """Run every cycle for one seed (default: the first of ``config.seeds``).

    When ``out_dir`` is given, all artifacts of the run are written there.
    """
    seed = config.seeds[0] if seed is None else int(seed)
    train, test = build_datasets(config, seed)
    spec = network_spec(config, train)
    strategy = AcquisitionStrategy(config.strategy.kind, config.strategy.tie_rule)
    mode = config.train.output_mode
    n = train.n
    b = budget_size(config, n)

    oracle = Oracle(train.labels)
    pools = init_pools(n, config.start_fraction, derive_seed(seed, _POOL))
    for i in pools.labeled:
        oracle.reveal(i)

    model = nnet.init_network(spec, derive_seed(seed, _INIT))
    ema = model
    initial = model
    features = train.features
    records: list[CycleRecord] = []

    for cycle in range(1, config.num_cycles + 1):
        previous = model
        if config.reinit_per_cycle and cycle > 1:
            model = nnet.init_network(spec, derive_seed(seed, _INIT, cycle))
            ema = model
        labeled = np.asarray(pools.labeled, dtype=np.int64)
        unlabeled = np.asarray(pools.unlabeled, dtype=np.int64)
        tconf = config.train.model_copy(update={"seed": derive_seed(seed, _TRAIN, cycle, config.train.seed)})
        model, ema, history = fit_cycle(
            tconf, features[labeled], oracle.revealed_labels(labeled), features[unlabeled], model, ema
        )

        cod = cod_values(model, previous, features, unlabeled, mode)
        real = _evaluation_losses(model, train, unlabeled)
        acc, tloss = _test_metrics(model, test)
        gn = nnet.grad_output_norm_sq_batch(model, features)
        rec = CycleRecord(
            cycle=cycle,
            num_labeled=len(labeled),
            labeled_fraction=len(labeled) / n,
            test_accuracy=acc,
            test_loss=tloss,
            mean_cod_unlabeled=float(cod.mean()) if cod.size else 0.0,
            mean_real_loss_unlabeled=float(real.mean()) if real.size else 0.0,
            grad_norm_mean=float(gn.mean()),
            grad_norm_var=float(gn.var()),
            unlabeled_indices=unlabeled,
            cod_unlabeled=cod,
            loss_unlabeled=real,
            model=model,
            previous=previous,
            ema=ema,
            history=history,
            labeled_indices=pools.labeled,
        )

        if cycle < config.num_cycles and unlabeled.size:
            if b > unlabeled.size:
                log.warning("cycle %d: budget %d exceeds unlabeled pool %d; clipping", cycle, b, unlabeled.size)
                rec.clipped = True
            comparison = ema if strategy.kind == "emaod" else previous
            sel = acquire(strategy, unlabeled, model, comparison, features, b,
                          derive_seed(seed, _ACQ, cycle), mode)
            for i in sel.chosen:
                oracle.reveal(i)
            pools = pools.extend(sel.chosen)
            rec.selection = sel
        records.append(rec)

    if out_dir is not None:
        write_run(Path(out_dir), config, seed, records, initial)
    return records


def write_run(out: Path, config: ExperimentConfig, seed: int, records, initial: NetworkSnapshot) -> None:
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.json", config.to_json())
    atomic_write_text(
        out / "run.json",
        json.dumps({"seed": seed, "strategy": config.strategy.kind}, sort_keys=True) + "\n",
    )
    write_csv(out / "cycles.csv", CycleRecord.CSV_HEADER, (r.csv_row() for r in records))
    sel_rows = []
    for r in records:
        if r.selection is None:
            continue
        for rank, i in enumerate(r.selection.chosen, start=1):
            sel_rows.append((r.cycle, rank, i, r.selection.score_of(i)))
    write_csv(out / "selections.csv", ("cycle", "rank", "index", "score"), sel_rows)
    write_csv(
        out / "grad_norm.csv",
        ("cycle", "mean", "variance"),
        ((r.cycle, r.grad_norm_mean, r.grad_norm_var) for r in records),
    )
    means = np.array([r.grad_norm_mean for r in records])
    mu = float(means.mean())
    cv = float(means.std() / mu) if mu > 0 else 0.0
    write_csv(out / "grad_norm_summary.csv", ("cycles", "mean_of_means", "std_of_means", "cv"),
              [(len(records), mu, float(means.std()), cv)])
    nnet.save_snapshot(initial, out / "model_c0.txt")
    for r in records:
        write_csv(out / f"train_history_c{r.cycle}.csv", TrainHistory.CSV_HEADER, r.history.rows())
        nnet.save_snapshot(r.model, out / f"model_c{r.cycle}.txt")
        nnet.save_snapshot(r.ema, out / f"ema_c{r.cycle}.txt")
        atomic_write_text(out / f"pool_c{r.cycle}.json", json.dumps(list(r.labeled_indices)) + "\n")
