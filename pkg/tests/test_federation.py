import threading
import time

import numpy as np
import pytest

from conftest import tiny_config
from pathfl.config import RunConfig, config_from_dict, default_config, load_config
from pathfl.errors import ValidationError
from pathfl.federation import build_clients, evaluate_global, generate_datasets, run_federation
from pathfl.report import final_scores, macro, read_metrics, write_report
from pathfl.segnet import SegNet, SegNetConfig


def _same_history(a, b):
    return all(x[k].tobytes() == y[k].tobytes() for x, y in zip(a.history, b.history) for k in x)


def test_all_modules_off_reduces_to_fedavg():
    off = run_federation(tiny_config(cse=False, afa=False, ssa=False))
    avg = run_federation(tiny_config(method="fedavg"))
    assert len(off.history) == len(avg.history) == 3
    for x, y in zip(off.history, avg.history):
        for k in x:
            assert np.max(np.abs(x[k] - y[k])) <= 1e-12
    assert _same_history(off, avg)


def test_modules_change_the_trajectory():
    full = run_federation(tiny_config())
    avg = run_federation(tiny_config(method="fedavg"))
    assert not _same_history(full, avg)
    assert full.similarity_rows and not avg.similarity_rows
    layers = {row[1] for row in full.similarity_rows}
    assert layers == {"enc1", "enc2", "bottleneck", "dec2", "dec1", "head"}
    # 3 rounds x 6 layers x ordered pairs
    assert len(full.similarity_rows) == 3 * 6 * 6


def test_fedprox_differs_from_fedavg_only_through_the_penalty():
    prox0 = run_federation(tiny_config(method="fedprox", prox_mu=0.0, rounds=2))
    avg = run_federation(tiny_config(method="fedavg", rounds=2))
    assert _same_history(prox0, avg)
    prox = run_federation(tiny_config(method="fedprox", prox_mu=1.0, rounds=2))
    assert not _same_history(prox, avg)


def test_no_op_round_keeps_initial_weights():
    r = run_federation(tiny_config(rounds=1, local_epochs=0, ssa=False))
    for k, v in r.initial.items():
        assert r.final[k].tobytes() == v.tobytes()


def test_identical_clients_have_unit_similarity_and_midpoint_aggregate():
    cfg = tiny_config(clients=2, profiles=tiny_config().profiles[:1] * 2, rounds=1, cse=False, afa=False)
    data = generate_datasets(cfg)
    first = next(iter(data.values()))
    twins = {"a": first, "b": first}
    r = run_federation(cfg, datasets=twins)
    # same start and same data (only the shuffles differ): cosines near one, and
    # with two clients the normalised scores are exactly one, i.e. a midpoint average
    raws = [row[4] for row in r.similarity_rows]
    assert min(raws) > 0.9
    norms = [row[5] for row in r.similarity_rows]
    np.testing.assert_allclose(norms, 1.0, atol=1e-9)


def test_serial_and_parallel_runs_match_under_perturbed_scheduling():
    serial = run_federation(tiny_config(rounds=2))
    delays = {"pink": 0.03, "purple": 0.0, "green": 0.015}
    seen = []
    lock = threading.Lock()

    def hook(cid, t):
        with lock:
            seen.append((t, cid))
        time.sleep(delays[cid] * (1 + t % 2))

    parallel = run_federation(tiny_config(rounds=2), workers=3, delay_hook=hook)
    assert _same_history(serial, parallel)
    assert [(lg.round, [(c.client, c.loss, c.dice, c.assd) for c in lg.clients]) for lg in serial.logs] == \
        [(lg.round, [(c.client, c.loss, c.dice, c.assd) for c in lg.clients]) for lg in parallel.logs]
    # no client starts round t+1 before all clients started round t
    rounds = [t for t, _ in seen]
    assert rounds == sorted(rounds)


def test_evaluation_oracles():
    cfg = tiny_config()
    clients = build_clients(cfg)
    model = SegNet(SegNetConfig(3, 2, 2, 2))
    params = model.init_params(np.random.default_rng(0))

    class Oracle:
        def __init__(self, source):
            self.source = source

        def predict(self, params, batch):
            for c in clients:
                if c.test_images.shape == batch.shape and np.array_equal(c.test_images, batch):
                    return self.source(c)
            raise AssertionError("unknown batch")

    perfect = evaluate_global(Oracle(lambda c: c.test_masks), params, clients)
    assert perfect.mean_dice == 1.0 and perfect.mean_assd == 0.0
    blank = evaluate_global(Oracle(lambda c: np.zeros_like(c.test_masks)), params, clients)
    assert blank.mean_dice == 0.0
    clients[0].test_images = clients[0].test_images[:0]
    with pytest.raises(ValidationError):
        evaluate_global(model, params, clients)


def test_report_files(tmp_path):
    r = run_federation(tiny_config())
    paths = write_report(r, tmp_path)
    rows = read_metrics(paths["metrics"])
    assert len(rows) == 3 * 3
    last = final_scores(rows)
    md, ma = macro(last)
    assert md == pytest.approx(r.logs[-1].mean_dice, abs=1e-9)
    assert ma == pytest.approx(r.logs[-1].mean_assd, abs=1e-9)
    text = paths["report"].read_text()
    assert f"{100 * md:.2f}" in text and "Average" in text
    assert load_config(paths["config"]).to_json() == r.config.to_json()
    assert (tmp_path / "model.bin").exists()
    sim_lines = paths["similarity"].read_text().splitlines()
    assert sim_lines[0] == "round,layer,m,j,raw_cos,s_norm" and len(sim_lines) == 1 + 3 * 6 * 6


def test_rerun_is_byte_identical(tmp_path):
    a = write_report(run_federation(tiny_config(rounds=2)), tmp_path / "a")
    b = write_report(run_federation(tiny_config(rounds=2)), tmp_path / "b")
    for key in ("metrics", "similarity", "train_loss", "report"):
        assert a[key].read_bytes() == b[key].read_bytes()
    assert (tmp_path / "a" / "model.bin").read_bytes() == (tmp_path / "b" / "model.bin").read_bytes()


def test_config_validation():
    with pytest.raises(ValidationError):
        config_from_dict({"rounds": 3, "colour": "red"})
    with pytest.raises(ValidationError):
        tiny_config(method="fedsgd")
    with pytest.raises(ValidationError):
        tiny_config(clients=1, profiles=tiny_config().profiles[:1])
    with pytest.raises(ValidationError):
        tiny_config(height=18)
    with pytest.raises(ValidationError):
        tiny_config(rounds=0)
    with pytest.raises(ValidationError):
        tiny_config(clients=2)


def test_bundled_config_and_labels():
    cfg = default_config()
    assert cfg.clients == 3 and cfg.rounds == 30 and cfg.local_epochs == 2
    assert [p.name for p in cfg.profiles] == ["he_pink", "purple", "green_fluor"]
    assert cfg.label == "pathfl"
    assert cfg.with_overrides(afa=False).label == "pathfl[cse+ssa]"
    assert cfg.with_overrides(cse=False, afa=False, ssa=False).label == "pathfl[none]"
    fedavg = cfg.with_overrides(method="fedavg")
    assert not (fedavg.use_cse or fedavg.use_afa or fedavg.use_ssa) and fedavg.effective_prox_mu == 0
    assert RunConfig(**{**cfg.to_json()}).to_json() == cfg.to_json()
