import json
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from torch.func import functional_call

from unrealnas.datagen import build_rlrd, build_rlrn, load_digits_real, make_split, sample_real_images
from unrealnas.engine import (
    DivergedError,
    SearchConfig,
    Searcher,
    SearchTrace,
    TrainConfig,
    TrainReport,
    clip_gradients,
    cosine_lr,
    load_alpha,
    save_checkpoint,
    search,
    train_fixed,
)
from unrealnas.rng import stream
from unrealnas.searchspace import CellSpec, build_supernet, count_op, derive_genotype, mixed_op_weights, random_genotype

TIE_BREAK = derive_genotype(np.zeros((14, 8)), np.zeros((14, 8)))


def micro(n=16, d=4, cells=3, dtype=torch.float32, **cfg):
    ds = build_rlrn(n, d_rand=d, seed=0)
    net = build_supernet(CellSpec(steps=2), channels=4, cells=cells, num_classes=d, seed=0, dtype=dtype)
    return Searcher(net, make_split(ds), SearchConfig(batch_size=n, **cfg))


def batch(view, n, tag="b"):
    return view.batch(np.arange(n), stream(0, tag))


def test_config_defaults_follow_kind():
    unreal = SearchConfig.for_kind("RLGD")
    real = SearchConfig.for_kind("REAL")
    assert (unreal.w_weight_decay, unreal.a_weight_decay) == (0.0, 0.0)
    assert (real.w_weight_decay, real.a_weight_decay) == (3e-4, 1e-3)
    for c in (unreal, real):
        assert (c.warmup_epochs, c.search_epochs, c.batch_size) == (5, 50, 64)
        assert (c.w_lr, c.w_momentum, c.a_lr, c.a_betas, c.grad_clip) == (0.025, 0.9, 3e-4, (0.5, 0.99), 5.0)
        assert c.order == "first"
    assert SearchConfig.from_dict(json.loads(json.dumps(real.as_dict()))) == real


@pytest.mark.parametrize("bad", [{"w_lr": 0}, {"a_lr": -1}, {"w_weight_decay": -1}, {"order": "third"}, {"batch_size": 0}])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SearchConfig(**bad)


def test_cosine_schedule():
    total = 25
    assert cosine_lr(0.025, 0, total) == 0.025
    assert cosine_lr(0.025, total, total) == pytest.approx(0.0, abs=1e-18)
    for e in range(total + 1):
        assert abs(cosine_lr(0.025, e, total) - 0.0125 * (1 + math.cos(math.pi * e / total))) <= 1e-9


def test_clip_to_global_norm():
    a = torch.zeros(3, requires_grad=True)
    b = torch.zeros(4, requires_grad=True)
    a.grad = torch.tensor([30.0, 0.0, 0.0])
    b.grad = torch.tensor([40.0, 0.0, 0.0, 0.0])
    before = clip_gradients([a, b], 5.0)
    assert before == pytest.approx(50.0)
    norm = torch.sqrt(a.grad.pow(2).sum() + b.grad.pow(2).sum()).item()
    assert abs(norm - 5.0) <= 1e-6


def test_weight_step_applies_clipped_gradient():
    s = micro(dtype=torch.float64, w_momentum=0.0, grad_clip=1e-3)
    w0 = [w.detach().clone() for w in s.weights]
    s.weight_step(batch(s.split.train, 16), epoch=0)
    delta = torch.sqrt(sum(((w - v) ** 2).sum() for w, v in zip(s.weights, w0))).item()
    assert delta == pytest.approx(0.025 * 1e-3, rel=1e-4)


def test_weight_step_at_final_epoch_is_a_no_op():
    s = micro(warmup_epochs=2, search_epochs=3)
    w0 = [w.detach().clone() for w in s.weights]
    s.weight_step(batch(s.split.train, 16), epoch=5)
    assert all(torch.equal(w, v) for w, v in zip(s.weights, w0))


def test_alpha_step_leaves_weights_and_zero_lr_leaves_alpha():
    s = micro(a_lr=0.0)
    w0 = [w.detach().clone() for w in s.weights]
    a0 = [a.detach().clone() for a in s.alphas]
    s.alpha_step(batch(s.split.val, 16))
    assert all(torch.equal(w, v) for w, v in zip(s.weights, w0))
    assert all(torch.equal(a, v) for a, v in zip(s.alphas, a0))


def test_first_alpha_step_matches_hand_computed_adam():
    s = micro(dtype=torch.float64)
    vb = batch(s.split.val, 16)
    x = torch.as_tensor(vb[0], dtype=torch.float64).contiguous(memory_format=torch.channels_last)
    g = torch.autograd.grad(F.cross_entropy(s.net(x), torch.as_tensor(vb[1])), s.alphas)
    s.alpha_step(vb)
    lr, eps = 3e-4, 1e-8
    for a, gi in zip(s.alphas, g):
        # bias-corrected first step: m_hat = g, v_hat = g^2
        expected = -lr * gi / (gi.abs() + eps)
        assert torch.allclose(a.detach(), expected, rtol=1e-6, atol=1e-15)
        moved = gi.abs() > 1e-6
        assert torch.all(torch.sign(a.detach()[moved]) == -torch.sign(gi[moved]))


def test_unused_alpha_stays_exactly_zero():
    # Two cells are both reduction cells, so alpha_normal receives no gradient.
    s = micro(cells=2)
    s.alpha_step(batch(s.split.val, 16))
    assert torch.count_nonzero(s.net.alpha_normal) == 0
    assert torch.count_nonzero(s.net.alpha_reduce) > 0


def test_second_order_matches_exact_unrolled_gradient():
    s = micro(dtype=torch.float64, order="second", w_momentum=0.9)
    tb, vb = batch(s.split.train, 16, "t"), batch(s.split.val, 16, "v")
    eta = 0.025
    net = s.net
    names = [n for n, _ in net.named_parameters()]
    alpha_names = {"alpha_normal", "alpha_reduce"}

    def ce(params, b):
        x = torch.as_tensor(b[0], dtype=torch.float64).contiguous(memory_format=torch.channels_last)
        return F.cross_entropy(functional_call(net, params, (x,)), torch.as_tensor(b[1]))

    params = {n: p for n, p in net.named_parameters()}
    w_names = [n for n in names if n not in alpha_names]
    g_w = torch.autograd.grad(ce(params, tb), [params[n] for n in w_names], create_graph=True)
    unrolled = dict(params)
    for n, g in zip(w_names, g_w):
        unrolled[n] = params[n] - eta * g
    exact = torch.autograd.grad(ce(unrolled, vb), [params["alpha_normal"], params["alpha_reduce"]])

    s._unrolled_backward(vb, tb, eta)
    for a, e in zip(s.alphas, exact):
        err = ((a.grad - e).norm() / e.norm()).item()
        assert err <= 1e-9, err
    # Weights are restored after the finite-difference probes.
    assert torch.equal(params[w_names[0]], s.weights[0])


def test_zero_search_epochs_gives_tie_break_genotype():
    ds = build_rlrn(32, d_rand=3, seed=1)
    net = build_supernet(channels=2, cells=3, num_classes=3)
    g, trace = search(net, make_split(ds), SearchConfig(warmup_epochs=1, search_epochs=0, batch_size=32))
    assert g == TIE_BREAK and len(trace) == 1


def test_micro_search_contract():
    ds = build_rlrn(200, d_rand=10, seed=0)
    net = build_supernet(CellSpec(steps=2), channels=4, cells=3, num_classes=10, seed=0)
    a0 = [a.detach().clone() for a in net.arch_parameters()]
    seen = []

    def check(searcher, rec):
        an, ar = (a.detach().double().numpy() for a in searcher.alphas)
        for a in (an, ar):
            assert np.allclose(mixed_op_weights(a).sum(-1), 1.0, atol=1e-6)
        assert rec.skip_count == count_op(derive_genotype(an, ar, steps=2), "skip_connect")
        if rec.epoch == 4:
            assert all(torch.equal(x, y) for x, y in zip(searcher.alphas, a0))
        seen.append(rec.epoch)

    g, trace = Searcher(net, make_split(ds), SearchConfig(warmup_epochs=5, search_epochs=20)).run(check)
    assert len(trace) == 25 and seen == list(range(25))
    assert [r.phase for r in trace].count("warmup") == 5
    assert all(0 <= r.skip_count <= 4 for r in trace)
    assert all(r.val_loss is None for r in trace[:5]) and all(r.val_loss is not None for r in trace[5:])
    assert not all(torch.equal(x, y) for x, y in zip(net.arch_parameters(), a0))
    assert g == net.genotype()


def test_search_is_deterministic():
    def run():
        ds = build_rlrn(48, d_rand=3, seed=2)
        net = build_supernet(CellSpec(steps=2), channels=2, cells=3, num_classes=3, seed=5)
        g, trace = search(net, make_split(ds), SearchConfig(warmup_epochs=1, search_epochs=2, batch_size=16, seed=9))
        return g, [(r.train_loss, r.val_loss, r.genotype) for r in trace], [a.detach().clone() for a in net.arch_parameters()]

    g1, t1, a1 = run()
    g2, t2, a2 = run()
    assert g1 == g2 and t1 == t2
    assert all(torch.equal(x, y) for x, y in zip(a1, a2))


def test_divergence_keeps_partial_trace():
    ds = build_rlrn(32, d_rand=3, seed=0)
    net = build_supernet(CellSpec(steps=2), channels=2, cells=3, num_classes=3)
    cfg = SearchConfig(warmup_epochs=1, search_epochs=3, batch_size=16, w_lr=1e30, grad_clip=1e30)
    with pytest.raises(DivergedError) as err:
        search(net, make_split(ds), cfg)
    assert isinstance(err.value.partial, SearchTrace)
    assert len(err.value.partial) < cfg.total_epochs


def test_trace_and_checkpoint_files(tmp_path):
    ds = build_rlrn(16, d_rand=3, seed=0)
    net = build_supernet(CellSpec(steps=2), channels=2, cells=3, num_classes=3)
    cfg = SearchConfig(warmup_epochs=1, search_epochs=1, batch_size=16)
    _, trace = search(net, make_split(ds), cfg)
    trace.write(tmp_path / "trace.ndjson")
    lines = (tmp_path / "trace.ndjson").read_text().splitlines()
    assert len(lines) == 2
    rec = json.loads(lines[1])
    assert {"epoch", "train_loss", "val_loss", "train_acc", "val_acc", "skip_count", "genotype", "wallclock"} <= set(rec)
    assert SearchTrace.read(tmp_path / "trace.ndjson") == trace
    save_checkpoint(tmp_path / "ckpt", net, cfg)
    with np.load(tmp_path / "ckpt" / "alpha.npz") as z:
        assert z["alpha_normal"].dtype == np.float32 and z["alpha_normal"].shape == (5, 8)
    an, _ = load_alpha(tmp_path / "ckpt")
    assert np.array_equal(an, net.alpha_normal.detach().numpy())
    assert json.loads((tmp_path / "ckpt" / "config.json").read_text())["search"] == cfg.as_dict()


def test_train_fixed_zero_epochs():
    ds = build_rlrd(sample_real_images(20, 0), 4, seed=0)
    rep = train_fixed(TIE_BREAK, ds, 0, TrainConfig(channels=2, cells=3))
    assert rep.epochs == []
    assert set(rep.initial) == {"train_loss", "train_acc", "val_loss", "val_acc"}
    assert 0.0 <= rep.initial["train_acc"] <= 1.0


def test_train_fixed_is_deterministic_and_reports_each_epoch():
    g = random_genotype(np.random.default_rng(0))
    ds = build_rlrd(sample_real_images(40, 0), 4, seed=0)
    hyper = TrainConfig(channels=2, cells=3, batch_size=20, seed=3)
    a = train_fixed(g, ds, 3, hyper)
    b = train_fixed(g, ds, 3, hyper)
    assert [e["epoch"] for e in a.epochs] == [0, 1, 2]
    assert a.final["train_acc"] == b.final["train_acc"]
    assert a.epochs == b.epochs
    for e in a.epochs:
        assert 0.0 <= e["train_acc"] <= 1.0 and 0.0 <= e["val_acc"] <= 1.0
    back = TrainReport.from_csv(a.to_csv())
    assert back.epochs == a.epochs


def test_train_fixed_on_real_split():
    ds = load_digits_real()
    rep = train_fixed(TIE_BREAK, ds, 1, TrainConfig(channels=2, cells=3, batch_size=128))
    assert len(rep.epochs) == 1 and rep.num_classes == 10


def test_train_fixed_divergence():
    ds = build_rlrn(16, d_rand=3, seed=0)
    with pytest.raises(DivergedError) as err:
        train_fixed(TIE_BREAK, ds, 3, TrainConfig(channels=2, cells=3, lr=1e30, grad_clip=1e30, batch_size=8))
    assert isinstance(err.value.partial, TrainReport)
