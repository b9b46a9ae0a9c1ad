"""Persistence for fitted models and the compiled policy table, plus the
demo-to-models fitting pipeline used by the CLI."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import GPConfig
from .core import INTENTIONS, Intention, ParseError, n_cells
from .dataio import DemoEpisode, read_table, write_table
from .human_model import GPHyperparams, GPModel, PolicyTable, gp_fit


def fit_models_from_demos(
    demos: Sequence[DemoEpisode], gp: GPConfig, seed: int = 0
) -> dict[Intention, GPModel]:
    """Fit one regressor per intention, capping the training set size by
    a seeded episode subsample so the kernel stays tractable."""
    rng = np.random.default_rng(seed)
    by_intent: dict[Intention, list[DemoEpisode]] = {i: [] for i in INTENTIONS}
    for ep in demos:
        if ep.intention is None:
            raise ValueError("fitting requires intention-labeled episodes")
        by_intent[ep.intention].append(ep)
    selected: dict[Intention, list[DemoEpisode]] = {}
    for intent, eps in by_intent.items():
        if not eps:
            raise ValueError(f"no episodes for {intent}")
        if len(eps) > gp.max_train_episodes:
            order = rng.permutation(len(eps))[: gp.max_train_episodes]
            eps = [eps[i] for i in sorted(order)]
        selected[intent] = eps
    # shared prior mean: without evidence both driver types predict alike
    from .human_model import training_pairs

    all_targets = np.concatenate(
        [training_pairs(eps, gp.history_k)[1] for eps in selected.values()]
    )
    pooled_mean = float(np.mean(all_targets))
    return {
        intent: gp_fit(eps, gp.history_k, gp.hyper, intent, prior_mean=pooled_mean)
        for intent, eps in selected.items()
    }


def save_models(path: str | Path, models: Mapping[Intention, GPModel]) -> None:
    arrays = {}
    for intent, m in models.items():
        tag = intent.value
        arrays[f"{tag}_x"] = m.train_x
        arrays[f"{tag}_y"] = m.train_y
        arrays[f"{tag}_meta"] = np.array(
            [m.k, m.hyper.length_d, m.hyper.length_v, m.hyper.length_a,
             m.hyper.noise_std, m.hyper.jitter, m.mu0]
        )
    np.savez_compressed(path, **arrays)


def load_models(path: str | Path) -> dict[Intention, GPModel]:
    data = np.load(path)
    models = {}
    for intent in INTENTIONS:
        tag = intent.value
        if f"{tag}_x" not in data:
            raise ParseError(f"missing arrays for {tag}", str(path))
        meta = data[f"{tag}_meta"]
        hyper = GPHyperparams(
            length_d=float(meta[1]),
            length_v=float(meta[2]),
            length_a=float(meta[3]),
            noise_std=float(meta[4]),
            jitter=float(meta[5]),
        )
        # refit from the stored training set; the factorization is cheap
        # relative to storing it and guarantees consistency
        from .dataio import DemoStep
        from .human_model import gp_fit as _fit, training_pairs

        x = data[f"{tag}_x"]
        y = data[f"{tag}_y"]
        models[intent] = _refit(intent, int(meta[0]), hyper, x, y, float(meta[6]))
    return models


def _refit(intent, k, hyper, x, y, mu0) -> GPModel:
    from scipy.linalg import cho_factor, cho_solve

    gram_x = x / hyper.scales(k)
    sq = (
        np.sum(gram_x**2, axis=1)[:, None]
        + np.sum(gram_x**2, axis=1)[None, :]
        - 2.0 * gram_x @ gram_x.T
    )
    np.maximum(sq, 0.0, out=sq)
    gram = np.exp(-0.5 * sq)
    gram[np.diag_indices_from(gram)] += hyper.noise_std**2 + hyper.jitter
    chol, _ = cho_factor(gram, lower=True)
    chol = np.tril(chol)
    alpha = cho_solve((chol, True), y - mu0)
    return GPModel(intent, k, hyper, x, y, mu0, chol, alpha)


def write_policy_table(path: str | Path, table: PolicyTable) -> None:
    header = {
        "table": "policy",
        "k": str(table.k),
        "floor": repr(table.floor),
        "rep_accels": ",".join(repr(a) for a in table.rep_accels),
        "columns": "ordinal p_dec_cons p_keep_cons p_acc_cons p_dec_agg p_keep_agg p_acc_agg",
    }
    rows = []
    for i in range(table.n_entries):
        rows.append([i, *table.probs[0, i].tolist(), *table.probs[1, i].tolist()])
    write_table(path, header, rows)


def load_policy_table(path: str | Path) -> PolicyTable:
    header, rows = read_table(path)
    k = int(header["k"])
    probs = np.zeros((2, n_cells(k), 3))
    for row in rows:
        i = int(row[0])
        probs[0, i] = row[1:4]
        probs[1, i] = row[4:7]
    rep = tuple(float(v) for v in header["rep_accels"].split(","))
    return PolicyTable(k, probs, rep, float(header["floor"]))
