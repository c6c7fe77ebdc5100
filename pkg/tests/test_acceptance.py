"""Acceptance criteria 1-10, each run at its stated tolerance.

Every test records one PASS/FAIL line (with the measured numbers) that the
conftest prints in the terminal summary.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from xsub.attack import adversarial_attack, build_golden_cache, substitute
from xsub.core import AttackConfig, rng_stream
from xsub.data import synth_gaussians, train_test_split
from xsub.errors import InvalidArgumentError
from xsub.explainer import Explainer, ExplainerConfig, exact_shapley, kernel_shapley
from xsub.harness import experiment as exp
from xsub.harness.config import Config, parse_config
from xsub.model import Classifier, TrainConfig, filter_correct, train

pytestmark = pytest.mark.acceptance

SEEDS = (1, 2, 3, 4, 5)


@contextmanager
def criterion(report, number, title):
    info = {}
    try:
        yield info
    except BaseException as exc:
        first = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        report.append(f"FAIL  criterion {number:>2} {title}: {info.get('msg', '')} [{first}]")
        raise
    report.append(f"PASS  criterion {number:>2} {title}: {info.get('msg', '')}")


class Bench:
    """The d=64 (8x8x1), C=4 synthetic benchmark over five seeds, with memoised cells."""

    def __init__(self, cfg: Config, seeds):
        start = time.perf_counter()
        self.cfg = cfg
        self.ws = [exp.prepare(cfg, s) for s in seeds]
        self.prep_seconds = time.perf_counter() - start
        self.cell_seconds = {}
        self._cells = {}

    def cell(self, alpha, beta, k, scenario="adversarial", defense=False):
        key = (alpha, beta, k, scenario, defense)
        if key not in self._cells:
            start = time.perf_counter()
            self._cells[key] = [exp.run_cell(ws, self.cfg, alpha, beta, k, "paired", scenario,
                                             defense) for ws in self.ws]
            self.cell_seconds[key] = time.perf_counter() - start
        return self._cells[key]

    def mean(self, key_args, field, **kw):
        return float(np.mean([getattr(r, field) for r in self.cell(*key_args, **kw)]))


@pytest.fixture(scope="session")
def bench():
    return Bench(Config(), SEEDS)


def _linear(w):
    return lambda z: np.asarray(z).reshape(len(z), -1) @ w


# 1 -------------------------------------------------------------------------

def test_c01_shapley_oracle_equivalence(acceptance_report):
    with criterion(acceptance_report, 1, "Shapley oracle equivalence") as info:
        start = time.perf_counter()
        rng = rng_stream(2024, "acceptance:c1")
        worst = 0.0
        for i in range(20):
            d = int(rng.integers(2, 9))
            model = Classifier.init((d,), 3, (int(rng.integers(3, 10)),), seed=i)
            x = rng.standard_normal(d)
            bg = rng.standard_normal((int(rng.integers(1, 5)), d))
            target = int(rng.integers(3))
            exact = exact_shapley(model, x, target, bg).values
            kern = kernel_shapley(model, x, target, bg,
                                  ExplainerConfig(n_coalitions=(1 << d) - 2)).values
            worst = max(worst, float(np.max(np.abs(kern - exact))))
        w = rng.standard_normal(10)
        x = rng.standard_normal(10)
        bg = rng.standard_normal((8, 10))
        est = kernel_shapley(_linear(w), x, 0, bg, ExplainerConfig(n_coalitions=4096, seed=7))
        lin_err = float(np.max(np.abs(est.values - w * (x - bg.mean(axis=0)))))
        elapsed = time.perf_counter() - start
        info["msg"] = (f"exhaustive-vs-exact Linf {worst:.2e} (<=1e-6); sampled linear d=10 "
                       f"Linf {lin_err:.2e} (<=0.05); {elapsed:.1f}s (<30s)")
        assert worst <= 1e-6
        assert lin_err <= 0.05
        assert elapsed < 30


# 2 -------------------------------------------------------------------------

def test_c02_shapley_axioms(acceptance_report):
    with criterion(acceptance_report, 2, "Shapley axioms") as info:
        rng = rng_stream(2024, "acceptance:c2")
        eff = 0.0
        for mode in ("exact", "kernel"):
            for i in range(5):
                d = 6
                model = Classifier.init((d,), 2, (5,), seed=100 + i)
                x = rng.standard_normal(d)
                bg = rng.standard_normal((3, d))
                g = Explainer(model, bg, ExplainerConfig(mode=mode, n_coalitions=40, seed=i))
                ev = g.explain(x, 1)
                eff = max(eff, abs(ev.values.sum() + ev.base_value - model(x[None])[0, 1]))
        # toy: f = 2*x0*x1 + sin(x2), x3 ignored; x0 and x1 play symmetric roles
        toy = lambda z: 2 * z[:, 0] * z[:, 1] + np.sin(z[:, 2])
        x = np.array([1.5, 1.5, 0.3, 9.0])
        bg = np.array([[0.2, 0.2, 0.0, -1.0], [-0.4, -0.4, 1.0, 3.0]])
        ev = exact_shapley(toy, x, 0, bg)
        sym = abs(ev.values[0] - ev.values[1])
        dummy = abs(ev.values[3])
        info["msg"] = (f"efficiency err {eff:.1e} (<=1e-6); symmetry err {sym:.1e}, "
                       f"dummy |phi| {dummy:.1e} (<=1e-9)")
        assert eff <= 1e-6
        assert sym <= 1e-9 and dummy <= 1e-9


# 3 -------------------------------------------------------------------------

def test_c03_gradient_check(acceptance_report):
    with criterion(acceptance_report, 3, "model gradient check") as info:
        rng = rng_stream(2024, "acceptance:c3")
        worst = 0.0
        eps = 1e-6
        for hidden in [(), (8,), (6, 5)]:
            model = Classifier.init((4, 1, 1), 3, hidden, seed=len(hidden))
            x = rng.standard_normal((5, 4))
            y = rng.integers(0, 3, 5)
            _, grads = model.loss_and_grads(x, y)
            for p, g in zip(model.params(), grads):
                num = np.zeros_like(p)
                for i in np.ndindex(p.shape):
                    old = p[i]
                    p[i] = old + eps
                    up = model.loss_and_grads(x, y)[0]
                    p[i] = old - eps
                    down = model.loss_and_grads(x, y)[0]
                    p[i] = old
                    num[i] = (up - down) / (2 * eps)
                scale = max(np.linalg.norm(g), np.linalg.norm(num), 1e-12)
                worst = max(worst, float(np.linalg.norm(g - num) / scale))
        info["msg"] = f"max per-tensor relative error {worst:.1e} (<=1e-4)"
        assert worst <= 1e-4


# 4 -------------------------------------------------------------------------

def _reference_literal(x, x_pos, g, g_pos, alpha, beta):
    """Straight-line evaluation of x - alpha*M_x + beta*M_g on an (H, W, C) grid."""
    h, w, c = x.shape
    out = np.array(x, dtype=float)
    for p in x_pos:
        r, col = divmod(p, w)
        for ch in range(c):
            out[r, col, ch] = out[r, col, ch] - alpha * x[r, col, ch]
    for p in g_pos:
        r, col = divmod(p, w)
        for ch in range(c):
            out[r, col, ch] = out[r, col, ch] + beta * g[r, col, ch]
    return out


def test_c04_substitution_contracts(acceptance_report):
    from xsub.attack import GoldenCacheEntry
    from xsub.explainer import ExplanationVector

    with criterion(acceptance_report, 4, "substitution contracts") as info:
        rng = rng_stream(2024, "acceptance:c4")
        checks = 0
        for trial in range(200):
            shape = (int(rng.integers(1, 6)), int(rng.integers(1, 6)), int(rng.choice([1, 3])))
            n_pos = shape[0] * shape[1]
            x = rng.standard_normal(shape)
            gs = rng.standard_normal(shape)
            entry = GoldenCacheEntry(0, gs, ExplanationVector(np.zeros(gs.size), 0, 0.0),
                                     tuple(int(v) for v in rng.permutation(n_pos)), (0,), (0.0,), 0)
            agg = rng.standard_normal(n_pos)
            k = int(rng.integers(1, n_pos + 1))
            # identity
            same, _ = substitute(x, agg, entry, AttackConfig(alpha=0, beta=0, k=k))
            assert same.tobytes() == x.tobytes()
            # paired at alpha = beta = 1 carries golden values exactly
            out, mod = substitute(x, agg, entry, AttackConfig(alpha=1, beta=1, k=k))
            assert len(mod) <= k
            changed = np.flatnonzero(np.any(out.reshape(n_pos, -1) != x.reshape(n_pos, -1), 1))
            assert set(changed.tolist()) <= set(mod)
            x_pos = sorted(range(n_pos), key=lambda i: (-agg[i], i))[:k]
            for r, p in enumerate(x_pos):
                q = entry.positions[r]
                got = out.reshape(n_pos, -1)[p]
                want = x.reshape(n_pos, -1)[p] - x.reshape(n_pos, -1)[p] + gs.reshape(n_pos, -1)[q]
                assert got.tobytes() == want.tobytes()
            # literal mode against the straight-line reference
            a, b = float(rng.uniform(0, 200)), float(rng.uniform(0, 200))
            lit, _ = substitute(x, agg, entry,
                                AttackConfig(alpha=a, beta=b, k=k, placement_mode="literal"))
            ref = _reference_literal(x, x_pos, gs, entry.positions[:k], a, b)
            np.testing.assert_allclose(lit, ref, rtol=0, atol=1e-12)
            checks += 1
        info["msg"] = f"{checks} randomized grids: identity bit-exact, paired <=K & exact, literal == reference"


# 5 -------------------------------------------------------------------------

def _budget_world(shape, seed):
    d = int(np.prod(shape))
    ds = synth_gaussians(40, d, 4, 5.0, seed=seed, shape=shape)
    tr, te = train_test_split(ds)
    model = train(tr, TrainConfig(lr=0.1, epochs=6, seed=seed, hidden=(16,)))
    g = Explainer.from_dataset(model, tr, ExplainerConfig(n_coalitions=4 * d,
                                                          background_size=2, seed=seed))
    return tr, te, model, g


def test_c05_constant_query_budget(acceptance_report):
    with criterion(acceptance_report, 5, "constant query budget") as info:
        counted, rejected = 0, []
        for shape in [(4, 4, 1), (8, 8, 1), (28, 28, 1)]:
            d = int(np.prod(shape))
            _, te, model, g = _budget_world(shape, seed=d)
            base = AttackConfig(alpha=1, beta=1, golden_set_size=2, seed=d)
            cache = build_golden_cache(model, g, te, base)
            kept = filter_correct(model, te)
            for k in (1, 5, 30):
                cfg = base.with_(k=k)
                if k > shape[0] * shape[1]:
                    with pytest.raises(InvalidArgumentError):
                        adversarial_attack(model, g, kept[0], cache, cfg)
                    rejected.append((d, k))
                    continue
                for i in range(min(10, len(kept))):
                    o = adversarial_attack(model, g, kept[i], cache, cfg, index=i)
                    assert (o.queries.predict_count, o.queries.explain_count) == (2, 1)
                    counted += 1
        info["msg"] = (f"{counted} outcomes all 2 predict + 1 explain; infeasible (d, K) "
                       f"{rejected} rejected with InvalidArgumentError")


# 6 -------------------------------------------------------------------------

def test_c06_adversarial_alpha_beta_trend(bench, acceptance_report):
    with criterion(acceptance_report, 6, "desk-scale adversarial trend") as info:
        low = bench.mean((1.0, 1.0, 1), "attack_sr")
        high = bench.mean((100.0, 100.0, 1), "attack_sr")
        accs = [r.accuracy for r in bench.cell(1.0, 1.0, 1)]
        runtime = (bench.prep_seconds + bench.cell_seconds[(1.0, 1.0, 1, "adversarial", False)]
                   + bench.cell_seconds[(100.0, 100.0, 1, "adversarial", False)])
        ab100_b1 = bench.mean((100.0, 1.0, 1), "attack_sr")
        info["msg"] = (f"clean acc min {min(accs):.3f} (>=0.90); SR(a=b=1) {low:.3f}, "
                       f"SR(a=b=100) {high:.3f}, gap {100 * (high - low):.1f}pp (>=20pp); "
                       f"{runtime:.0f}s (<300s); [info] SR(a=100,b=1) {ab100_b1:.3f}")
        assert min(accs) >= 0.90
        assert runtime < 300
        assert high - low >= 0.20


# 7 -------------------------------------------------------------------------

def test_c07_k_trend(bench, acceptance_report):
    with criterion(acceptance_report, 7, "desk-scale K trend") as info:
        k1 = bench.mean((1.0, 3.0, 1), "attack_sr")
        k5 = bench.mean((1.0, 3.0, 5), "attack_sr")
        k30 = bench.mean((1.0, 3.0, 30), "attack_sr")
        info["msg"] = (f"SR K=1 {k1:.3f}, K=5 {k5:.3f} (>= K=1 - 5pp); "
                       f"[info, not asserted] K=30 {k30:.3f}")
        assert k5 >= k1 - 0.05


# 8 -------------------------------------------------------------------------

def test_c08_backdoor(bench, acceptance_report):
    with criterion(acceptance_report, 8, "backdoor") as info:
        cell = (100.0, 1.0, 1)
        bd = bench.cell(*cell, scenario="backdoor")
        adv_sr = bench.mean(cell, "attack_sr")
        clean_acc = float(np.mean([exp.atk.accuracy(ws.model, ws.test) for ws in bench.ws]))
        bd_acc = float(np.mean([r.accuracy for r in bd]))
        bd_sr = float(np.mean([r.attack_sr for r in bd]))
        info["msg"] = (f"(a,b,K)=(100,1,1) p=0.10: clean acc {clean_acc:.3f}, backdoored acc "
                       f"{bd_acc:.3f} (gap {100 * (clean_acc - bd_acc):.1f}pp <=10pp); trigger SR "
                       f"{bd_sr:.3f} >= 0.5 x adversarial SR {adv_sr:.3f}")
        assert abs(clean_acc - bd_acc) <= 0.10
        assert bd_sr >= 0.5 * adv_sr


# 9 -------------------------------------------------------------------------

def test_c09_defense_trend(bench, acceptance_report):
    with criterion(acceptance_report, 9, "defense trend") as info:
        d10 = bench.mean((1.0, 10.0, 1), "detection_rate", defense=True)
        d100 = bench.mean((1.0, 100.0, 1), "detection_rate", defense=True)
        worst_ff, worst_bound = 0.0, 0.0
        for ws in bench.ws:
            ref = ws.reference
            ff = float(np.mean(ref.calibration_scores > ref.threshold))
            bound = 0.01 + 1.0 / ref.n_calibration
            assert ff <= bound
            worst_ff, worst_bound = max(worst_ff, ff), bound
        bd10 = bench.mean((1.0, 10.0, 1), "detection_rate", scenario="backdoor", defense=True)
        bd100 = bench.mean((1.0, 100.0, 1), "detection_rate", scenario="backdoor", defense=True)
        info["msg"] = (f"detection (a=1,b=10) {d10:.3f}, (a=1,b=100) {d100:.3f} (need strict >); "
                       f"calibration false-flag max {worst_ff:.4f} (<= {worst_bound:.4f}); "
                       f"[info] backdoored-model detection b=10 {bd10:.3f}, b=100 {bd100:.3f}")
        assert d100 > d10


# 10 ------------------------------------------------------------------------

REPRO_CONFIG = """
data.n_per_class = 60
data.shape = 4x4x1
data.classes = 3
model.hidden = 16
train.epochs = 8
explainer.coalitions = 64
explainer.background = 8
attack.golden_set_size = 4
defense.enabled = true
sweep.alphas = 1, 100
sweep.betas = 1, 10
sweep.ks = 1, 3
sweep.scenarios = adversarial, backdoor
sweep.seeds = 1, 2, 3
"""


def _without_wall_time(text):
    return "\n".join(line.rsplit(",", 1)[0] for line in text.splitlines())


def test_c10_reproducibility(acceptance_report):
    with criterion(acceptance_report, 10, "reproducibility") as info:
        cfg = parse_config(REPRO_CONFIG)
        runs = {w: exp.records_to_csv(exp.run_sweep(cfg, workers=w)) for w in (1, 3)}
        again = exp.records_to_csv(exp.run_sweep(parse_config(REPRO_CONFIG), workers=1))
        rows = len(runs[1].splitlines()) - 1
        info["msg"] = f"{rows} rows; workers=1 vs 3 vs repeat byte-identical without wall_time"
        assert rows == cfg.sweep_spec().cell_count
        assert _without_wall_time(runs[1]) == _without_wall_time(runs[3])
        assert _without_wall_time(runs[1]) == _without_wall_time(again)
