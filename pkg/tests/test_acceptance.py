"""Exit criteria 1-8, each at its stated tolerance.

Run alone with ``pytest tests/test_acceptance.py -v``; the terminal summary
ends with one PASS/FAIL line per criterion.
"""

import csv
import time

import numpy as np
import pytest
import torch
import torch.nn as nn

from defog2refog import data, experiment, fogmodel, losses, metrics, networks, trainer
from defog2refog.config import TrainConfig
from gradcheck import check_gradients
from oracles import airlight_dark_channel_bruteforce, dark_channel_bruteforce, otsu_bruteforce
from shape_tables import EXPECTED_64

# Networks with instance norm are piecewise smooth: at step 1e-4 the central
# difference straddles ReLU kinks often enough to miss 1e-4, at 1e-6 it does not.
NET_STEP = 1e-6


# -- 1 ------------------------------------------------------------------------------


@pytest.mark.acceptance(1)
def test_c1_physics_round_trip():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        j = rng.random((8, 8, 3))
        t = rng.uniform(0.05, 1.0, (8, 8))
        a = rng.random(3)
        i = fogmodel.synthesize_fog(j, t, a)
        back = fogmodel.invert_fog(i, t, a)
        worst = max(worst, float(np.abs(back - j).max()))
    elapsed = time.perf_counter() - t0
    print(f"max |J' - J| = {worst:.3e} in {elapsed:.2f}s")
    assert worst < 1e-6
    assert elapsed < 5.0


# -- 2 ------------------------------------------------------------------------------


@pytest.mark.acceptance(2)
def test_c2_oracle_equivalence():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    for _ in range(100):
        h, w = rng.integers(4, 17, size=2)
        img = rng.random((h, w, 3))
        patch = int(rng.choice([1, 3, 5, 7, 15]))
        assert np.array_equal(fogmodel.dark_channel(img, patch), dark_channel_bruteforce(img, patch))
        gray = rng.random((h, w))
        assert fogmodel.otsu_threshold(gray) == otsu_bruteforce(gray)
        assert np.array_equal(fogmodel.estimate_airlight_dark_channel(img), airlight_dark_channel_bruteforce(img))
    elapsed = time.perf_counter() - t0
    print(f"300 oracle comparisons in {elapsed:.2f}s")
    assert elapsed < 30.0


# -- 3 ------------------------------------------------------------------------------


def _rand(*shape, seed=0):
    return torch.rand(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64) * 2 - 1


def _loss_cases():
    ext = losses.PerceptualExtractor().double()
    four = [_rand(1, 3, 8, 8, seed=s) for s in range(4)]
    scores = [_rand(1, 1, 8, 8, seed=10), _rand(1, 1, 8, 8, seed=11)]
    cases = {
        "cycle_refog_loss": (losses.cycle_refog_loss, four, 1e-4),
        "enhancer_loss": (losses.enhancer_loss, four, 1e-4),
        "perceptual_loss": (lambda *t: losses.perceptual_loss(ext, *t), four, NET_STEP),
        "total_generator_loss": (
            lambda *p: losses.total_generator_loss(dict(zip(losses.PART_NAMES, p))),
            [torch.rand(()) for _ in losses.PART_NAMES],
            1e-4,
        ),
    }
    for mode in losses.GAN_MODES:
        cases[f"adversarial_disc[{mode}]"] = (
            lambda r, f, m=mode: losses.adversarial_discriminator_term(r, f, m),
            scores,
            1e-4,
        )
        cases[f"adversarial_gen[{mode}]"] = (
            lambda f, m=mode: losses.adversarial_generator_term(f, m),
            scores[1:],
            1e-4,
        )
    return cases


def _network_cases():
    # minimum legal sizes: enhancer needs 2x2 at its 1/8 stage, the
    # discriminator a 32 x 32 input
    cases = {}
    for kind, size in (("defog", 8), ("enhancer", 16), ("discriminator", 32)):
        net = networks.init_params(kind, 5).double()
        cases[kind] = (lambda x, n=net: n(x).sum(), [_rand(1, 3, size, size, seed=20)], NET_STEP)
    refog = networks.init_params("refog_t", 5).double()
    a = torch.tensor([[0.92, 0.88, 0.85]], dtype=torch.float64)
    cases["refog"] = (lambda x: refog(x, a)[0].sum(), [_rand(1, 3, 8, 8, seed=21)], NET_STEP)
    cases["refog_transmission"] = (lambda x: refog(x, a)[1].sum(), [_rand(1, 3, 8, 8, seed=22)], NET_STEP)
    return cases


@pytest.mark.acceptance(3)
def test_c3_gradient_checks():
    t0 = time.perf_counter()
    failures = []
    for name, (fn, inputs, step) in {**_loss_cases(), **_network_cases()}.items():
        res = check_gradients(fn, inputs, n_coords=100, step=step)
        print(f"{name}: max rel error {res.max_rel_error:.2e} over {res.n_checked} coords")
        if not res.ok:
            failures.append((name, res))
    elapsed = time.perf_counter() - t0
    print(f"gradient checks in {elapsed:.1f}s")
    assert not failures, failures
    assert elapsed < 300


# -- 4 ------------------------------------------------------------------------------


@pytest.mark.acceptance(4)
def test_c4_architecture_contract():
    for kind in networks.NETWORK_KINDS:
        assert networks.shape_audit(networks.init_params(kind, 0), EXPECTED_64[kind]) == [], kind
    with torch.no_grad():
        d = networks.init_params("discriminator", 0)
        assert d(_rand(1, 3, 512, 512).float()).shape == (1, 1, 16, 16)
        x = _rand(1, 3, 64, 64).float()
        assert networks.init_params("defog", 0)(x).shape == (1, 3, 64, 64)
        assert networks.init_params("enhancer", 0)(x).shape == (1, 3, 64, 64)
        assert networks.init_params("refog_t", 0)(x, torch.ones(1, 3))[0].shape == (1, 3, 64, 64)


# -- 5 ------------------------------------------------------------------------------


class _Identity(nn.Module):
    def forward(self, x):
        return x


@pytest.mark.acceptance(5)
def test_c5_total_of_unit_parts():
    assert losses.total_generator_loss({k: 1.0 for k in losses.PART_NAMES}) == 35.0


@pytest.mark.acceptance(5)
def test_c5_identity_fixed_point():
    """G = identity and R with T pinned to 1 are exact mutual inverses; enhancers are identity."""
    size = 32
    state = trainer.init_state(TrainConfig(image_size=size, learning_rate=0.0))
    conv = state.nets["R"].t_net.layers["t_out"].conv
    with torch.no_grad():
        conv.weight.zero_()
        conv.bias.fill_(60.0)  # sigmoid saturates to exactly 1.0
    for role in ("G", "E_d", "E_r"):
        state.nets[role] = _Identity()
    # dyadic pixel values keep (x + 1) / 2 * 2 - 1 exact
    g = torch.Generator().manual_seed(0)
    x = torch.randint(0, 257, (1, 3, size, size), generator=g).float() / 128 - 1
    y = torch.randint(0, 257, (1, 3, size, size), generator=g).float() / 128 - 1
    _, defog = trainer.step_defog_direction(state, x, y)
    _, refog = trainer.step_refog_direction(state, y, x)
    for report in (defog, refog):
        assert (report.loss1, report.loss2, report.loss5) == (0.0, 0.0, 0.0), report


# -- 6 ------------------------------------------------------------------------------


@pytest.mark.slow
@pytest.mark.acceptance(6)
def test_c6_toy_end_to_end(tmp_path_factory):
    workdir = tmp_path_factory.mktemp("toy_e2e")
    ok, results = experiment.run_with_retries(workdir, seeds=(0, 1, 2), required=2, iterations=2000)
    for r in results:
        print(r.summary())
        print(f"  (a) loss decreased={r.loss_decreased} (b) proxy ok={r.proxy_ok} (c) bave ok={r.bave_ok}")
    assert ok, [r.summary() for r in results]


# -- 7 ------------------------------------------------------------------------------


@pytest.mark.acceptance(7)
def test_c7_metric_identities():
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.random((16, 16, 3))
        r = metrics.bave_indicators(x, x)
        assert (r.e, r.r_bar, r.delta) == (0.0, 1.0, 0.0)
    for _ in range(1000):
        before = rng.uniform(-0.1, 1.1, (8, 8, 3))
        after = rng.uniform(-0.1, 1.1, (8, 8, 3))
        assert 0.0 <= metrics.bave_indicators(before, after).delta <= 1.0


# -- 8 ------------------------------------------------------------------------------


def _loss_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    wall = rows[0].index("wall_ms")
    return [r[:wall] + r[wall + 1 :] for r in rows]


@pytest.fixture(scope="module")
def toy32(tmp_path_factory):
    ds = data.make_toy_dataset(tmp_path_factory.mktemp("toy32"), 6, 32, seed=4)
    return data.scan_unpaired(ds.foggy_dir, ds.clear_dir, 32)


def _cfg(**kw):
    return TrainConfig(image_size=32, iterations=6, checkpoint_every=3, seed=11, **kw)


@pytest.mark.acceptance(8)
def test_c8_fixed_seed_runs_identical(tmp_path, toy32):
    trainer.train(_cfg(), toy32, out_dir=tmp_path / "a")
    trainer.train(_cfg(), toy32, out_dir=tmp_path / "b")
    assert _loss_rows(tmp_path / "a" / "loss_log.csv") == _loss_rows(tmp_path / "b" / "loss_log.csv")


@pytest.mark.acceptance(8)
def test_c8_checkpoint_round_trip_bitwise(tmp_path, toy32):
    state = trainer.init_state(_cfg(), toy32.sizes)
    for _ in range(2):
        trainer.run_iteration(state, toy32)
    loaded = trainer.load_checkpoint(trainer.save_checkpoint(state, tmp_path / "s.ckpt"))
    assert loaded.iteration == state.iteration
    for role in trainer.NETWORK_ROLES:
        a, b = state.nets[role].state_dict(), loaded.nets[role].state_dict()
        assert a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)
        sa, sb = state.optimizers[role].state_dict(), loaded.optimizers[role].state_dict()
        assert sa["param_groups"] == sb["param_groups"]
        for k, moments in sa["state"].items():
            assert all(torch.equal(v, sb["state"][k][n]) for n, v in moments.items())
    assert loaded.sampler.state_dict() == state.sampler.state_dict()


@pytest.mark.acceptance(8)
def test_c8_resume_reproduces_uninterrupted(tmp_path, toy32):
    trainer.train(_cfg(), toy32, out_dir=tmp_path / "full")
    trainer.train(_cfg().with_overrides(iterations=3), toy32, out_dir=tmp_path / "part")
    trainer.train(_cfg(), toy32, resume_from=tmp_path / "part" / "checkpoint_000003.ckpt", out_dir=tmp_path / "part")
    assert _loss_rows(tmp_path / "full" / "loss_log.csv") == _loss_rows(tmp_path / "part" / "loss_log.csv")
