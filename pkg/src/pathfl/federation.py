"""The federated simulation loop.

One communication round:

1. broadcast the server weights to every client;
2. local training (style enhancement / feature alignment use the previous
   round's style pool and feature statistics);
3. barrier: collect weights, style statistics, feature statistics, probes;
4. aggregate (similarity-weighted if enabled, FedAvg otherwise);
5. evaluate the new global model on each client's test split.

Every random stream is derived from ``(seed, purpose, client, round)`` so a
run is replayable and client-parallel execution matches serial execution.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from pathfl.aggregation import (
    LayeredWeights,
    aggregate_fedavg,
    aggregate_ssa,
    compute_dataset_stats,
    gen_probe,
    normalize_similarities,
    raw_similarities,
)
from pathfl.align import aggregate_feature_stats
from pathfl.errors import NumericError, ValidationError
from pathfl.metrics import per_image_metrics
from pathfl.segnet import ClientState, SegNet, SegNetConfig, TrainHyper, train_local
from pathfl.style import StylePool
from pathfl.synth import generate_client_dataset, split_dataset, stack_pairs

log = logging.getLogger(__name__)

# purpose codes for derived random streams
INIT, DATA, SPLIT, TRAIN, PROBE = range(5)


def derived_rng(seed, purpose, client=0, round_=0):
    return np.random.default_rng([int(seed), purpose, int(client), int(round_)])


@dataclass
class ClientRecord:
    client: str
    loss: float
    dice: float
    assd: float


@dataclass
class RoundLog:
    round: int
    clients: list[ClientRecord]
    mean_dice: float
    mean_assd: float
    wall_time: float


@dataclass
class EvalResult:
    per_client: dict[str, tuple[float, float]]
    mean_dice: float
    mean_assd: float


@dataclass
class FederationResult:
    config: object
    initial: dict
    final: dict
    logs: list[RoundLog]
    history: list[dict] = field(default_factory=list)
    similarity_rows: list[tuple] = field(default_factory=list)
    loss_rows: list[tuple] = field(default_factory=list)


def build_clients(config, datasets=None):
    """Client states with data either supplied or generated from the profiles.

    ``datasets`` maps client id -> (train samples, test samples).
    """
    if datasets is None:
        datasets = generate_datasets(config)
    clients = []
    for cid, (train, test) in datasets.items():
        if not train:
            raise ValidationError(f"client {cid!r} has no training data")
        if not test:
            raise ValidationError(f"client {cid!r} has no test data")
        images, masks = stack_pairs(train)
        timages, tmasks = stack_pairs(test)
        clients.append(ClientState(
            id=str(cid), params={}, images=images, masks=masks,
            dataset_stats=compute_dataset_stats(images),
            test_images=timages, test_masks=tmasks,
        ))
    return clients


def client_ids(config):
    return [p.name or f"client{i}" for i, p in enumerate(config.profiles)]


def generate_datasets(config):
    seed = config.effective_data_seed
    total = config.train_per_client + config.test_per_client
    out = {}
    for i, (cid, profile) in enumerate(zip(client_ids(config), config.profiles)):
        samples = generate_client_dataset(profile, total, config.height, config.width,
                                          derived_rng(seed, DATA, i))
        out[cid] = split_dataset(samples, config.train_per_client / total, derived_rng(seed, SPLIT, i))
    return out


def evaluate_global(model, params, clients, batch=16):
    """Per-client mean Dice/ASSD of ``params`` on each client's test split, plus macro means."""
    per_client = {}
    for c in clients:
        if c.test_images is None or len(c.test_images) == 0:
            raise ValidationError(f"client {c.id!r} has an empty test set")
        dices, assds = [], []
        for start in range(0, len(c.test_images), batch):
            pred = model.predict(params, c.test_images[start:start + batch])
            d, a = per_image_metrics(pred, c.test_masks[start:start + batch])
            dices += d
            assds += a
        per_client[c.id] = (float(np.mean(dices)), float(np.mean(assds)))
    return EvalResult(per_client,
                      float(np.mean([d for d, _ in per_client.values()])),
                      float(np.mean([a for _, a in per_client.values()])))


def _hyper(config):
    return TrainHyper(lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                      adam_eps=config.adam_eps, batch_size=config.batch_size,
                      style_eps=config.eps, feature_eps=config.eps,
                      prox_mu=config.effective_prox_mu, cse=config.use_cse,
                      style_per_channel=config.style_per_channel)


def _all_finite(params):
    return all(np.all(np.isfinite(v)) for v in params.values())


def run_federation(config, datasets=None, workers=None, delay_hook=None):
    """Simulate ``config.rounds`` communication rounds and return every artifact.

    ``delay_hook(client_id, round)`` is called at the start of each client's
    local training (used to perturb scheduling in tests).
    """
    config.validate()
    workers = config.workers if workers is None else workers
    model = SegNet(SegNetConfig(3, config.base_channels, config.depth, 2))
    clients = build_clients(config, datasets)
    if len(clients) != config.clients:
        raise ValidationError(f"config expects {config.clients} clients, data has {len(clients)}")
    index = {c.id: i for i, c in enumerate(clients)}
    hyper = _hyper(config)
    global_params = model.init_params(derived_rng(config.seed, INIT))
    result = FederationResult(config, {k: v.copy() for k, v in global_params.items()}, {}, [])
    pool = None
    feature_global = None
    layer_names = model.config.layer_names

    def local(client, t):
        if delay_hook is not None:
            delay_hook(client.id, t)
        client.params = {k: v.copy() for k, v in global_params.items()}
        rng = derived_rng(config.seed, TRAIN, index[client.id], t)
        return train_local(model, client, pool if hyper.cse else None,
                           feature_global if config.use_afa else None,
                           config.local_epochs, hyper, rng, global_params)

    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(config.rounds):
            start = time.perf_counter()
            if executor is None:
                outcomes = [local(c, t) for c in clients]
            else:
                outcomes = list(executor.map(lambda c: local(c, t), clients))

            # -- barrier: everything below sees all clients' round-t artifacts --
            for c in clients:
                if not _all_finite(c.params):
                    raise NumericError(f"client {c.id!r} produced non-finite weights in round {t}")
            new_pool = StylePool(t)
            feature_stats = []
            for c, out in zip(clients, outcomes):
                if out.style is not None:
                    new_pool.add(c.id, out.style)
                if out.feature_stats is not None:
                    feature_stats.append(out.feature_stats)
                for e, loss in enumerate(out.epoch_losses):
                    result.loss_rows.append((t, c.id, e, loss))
            pool = new_pool if new_pool.entries else None
            feature_global = aggregate_feature_stats(feature_stats, round=t) if feature_stats else None

            models = [LayeredWeights(c.params) for c in clients]
            if config.use_ssa:
                feats = []
                for c in clients:
                    probe = gen_probe(c.dataset_stats,
                                      (config.probe_batch, 3, config.height, config.width),
                                      derived_rng(config.seed, PROBE, index[c.id], t))
                    out = model.all_layer_features(c.params, probe)
                    feats.append([out[name] for name in layer_names])
                sim = normalize_similarities(raw_similarities(feats), config.similarity_norm)
                for l, name in enumerate(layer_names):
                    for m in range(len(clients)):
                        for j in range(len(clients)):
                            if m != j:
                                result.similarity_rows.append(
                                    (t, name, clients[m].id, clients[j].id,
                                     float(sim.raw[l, m, j]), float(sim.normalized[l, m, j])))
                global_params = aggregate_ssa(models, sim).params
            else:
                global_params = aggregate_fedavg(models, [c.sample_count for c in clients]).params
            if not _all_finite(global_params):
                raise NumericError(f"aggregated weights are not finite in round {t}")
            result.history.append({k: v.copy() for k, v in global_params.items()})

            ev = evaluate_global(model, global_params, clients)
            records = []
            for c, out in zip(clients, outcomes):
                loss = float(np.mean(out.epoch_losses)) if out.epoch_losses else float("nan")
                d, a = ev.per_client[c.id]
                records.append(ClientRecord(c.id, loss, d, a))
            result.logs.append(RoundLog(t, records, ev.mean_dice, ev.mean_assd,
                                        time.perf_counter() - start))
            log.info("%s round %d: dice %.4f assd %.3f", config.label, t, ev.mean_dice, ev.mean_assd)
    finally:
        if executor is not None:
            executor.shutdown()
    result.final = global_params
    return result
