import numpy as np
import pytest

from mtdfl import adversary as adv
from mtdfl import flengine as fl
from mtdfl.anticipator import EventSequence
from mtdfl.errors import ConfigError, DegenerateStatisticsError

LAYOUT = ((1, 2, "identity"),)


def mp(values):
    return fl.ModelParams(np.asarray(values, dtype=float), LAYOUT)


class TestAttack1:
    def test_paper_constants_closed_form(self):
        cfg = adv.AttackConfig(kind="attack1", learning_rate=1.0, target_scale=-10.0, noise_std=0.0)
        out = adv.craft_attack1(mp([0.5, -0.2, 0.0, 1.0]), cfg, np.random.default_rng(0))
        assert np.array_equal(out.vector, np.array([-5.0, 2.0, 0.0, -10.0]))

    def test_zero_learning_rate_keeps_global(self):
        cfg = adv.AttackConfig(kind="attack1", learning_rate=0.0, noise_std=0.0)
        g = mp([0.3, 0.7, -1.0, 0.1])
        out = adv.craft_attack1(g, cfg, np.random.default_rng(0))
        assert np.array_equal(out.vector, g.vector)

    def test_unit_scale_fixed_point(self):
        cfg = adv.AttackConfig(kind="attack1", learning_rate=0.7, target_scale=1.0, noise_std=0.0)
        g = mp([0.3, 0.7, -1.0, 0.1])
        out = adv.craft_attack1(g, cfg, np.random.default_rng(0))
        assert np.allclose(out.vector, g.vector)

    def test_closed_form_scaling_identity(self):
        # With no noise: poisoned = (1 - lam + lam*scale) * global.
        rng = np.random.default_rng(3)
        g = mp(rng.normal(size=4))
        for lam, scale in [(1.0, -10.0), (0.5, -2.0), (0.25, 3.0)]:
            cfg = adv.AttackConfig(
                kind="attack1", learning_rate=lam, target_scale=scale, noise_std=0.0
            )
            out = adv.craft_attack1(g, cfg, np.random.default_rng(0))
            assert np.allclose(out.vector, (1 - lam + lam * scale) * g.vector, rtol=1e-12)

    def test_noise_is_seed_reproducible(self):
        cfg = adv.AttackConfig(kind="attack1", noise_std=0.05)
        g = mp([0.5, -0.2, 0.0, 1.0])
        a = adv.craft_attack1(g, cfg, np.random.default_rng(9))
        b = adv.craft_attack1(g, cfg, np.random.default_rng(9))
        assert np.array_equal(a.vector, b.vector)


class TestAttack2:
    def test_two_point_population_std(self):
        out = adv.craft_attack2([mp([0.4, 0.4, 0.4, 0.4]), mp([0.6, 0.6, 0.6, 0.6])], z=1.0)
        assert np.allclose(out.vector, 0.4, rtol=1e-12)

    def test_zero_fraction_returns_mean(self):
        rng = np.random.default_rng(1)
        models = [mp(rng.normal(size=4)) for _ in range(5)]
        out = adv.craft_attack2(models, z=0.0)
        mean = np.stack([m.vector for m in models]).mean(axis=0)
        assert np.allclose(out.vector, mean, atol=1e-12)

    def test_identical_models_any_fraction(self):
        models = [mp([1.0, 2.0, 3.0, 4.0]) for _ in range(3)]
        out = adv.craft_attack2(models, z=7.5)
        assert np.array_equal(out.vector, models[0].vector)

    def test_small_fraction_stays_in_envelope_large_exits(self):
        models = [mp([0.0, 0.0, 0.0, 0.0]), mp([1.0, 1.0, 1.0, 1.0])]
        inside = adv.craft_attack2(models, z=0.5)
        assert np.all(inside.vector >= 0.0) and np.all(inside.vector <= 1.0)
        outside = adv.craft_attack2(models, z=3.0)
        assert np.all(outside.vector < 0.0)

    def test_single_model_rejected(self):
        with pytest.raises(DegenerateStatisticsError):
            adv.craft_attack2([mp([1.0, 1.0, 1.0, 1.0])], z=1.0)

    def test_auto_fraction_quantile_rule(self):
        from statistics import NormalDist

        # n=10, m=3: s = floor(10/2+1) - 3 = 3, quantile = 4/7.
        z = adv.little_enough_fraction(10, 3)
        assert z == pytest.approx(NormalDist().inv_cdf(4 / 7), rel=1e-12)


class TestInjection:
    def _log(self, n=50, width=4):
        rng = np.random.default_rng(0)
        return EventSequence(2, rng.normal(size=(n, width)), np.zeros(n, dtype=int))

    def _flow(self, width=4, length=11):
        rng = np.random.default_rng(1)
        feats = rng.normal(size=(length, width))
        labels = np.zeros(length, dtype=int)
        labels[-1] = 1
        return feats, labels

    def test_append_semantics(self):
        log = self._log(50)
        feats, labels = self._flow()
        out = adv.inject_attack_traffic(log, feats, labels, window=10)
        assert len(out) == 61
        assert out.labels[-1] == 1
        assert len(log) == 50  # original untouched

    def test_final_window_labels_attack(self):
        from mtdfl.anticipator import build_windows

        log = self._log(30)
        feats, labels = self._flow()
        out = adv.inject_attack_traffic(log, feats, labels, window=10)
        ds = build_windows(out, 10)
        assert ds.y[-1] == 1
        assert np.allclose(ds.x[-1], out.features[-11:-1])

    def test_wrong_length_rejected(self):
        log = self._log()
        feats, labels = self._flow(length=9)
        with pytest.raises(ConfigError):
            adv.inject_attack_traffic(log, feats, labels, window=10)

    def test_benign_tail_rejected(self):
        log = self._log()
        feats, labels = self._flow()
        labels = labels.copy()
        labels[-1] = 0
        with pytest.raises(ConfigError):
            adv.inject_attack_traffic(log, feats, labels, window=10)


class TestPoisonUploads:
    def _round(self, uploads):
        r = fl.RoundResult()
        for u, m in uploads.items():
            r.uploads[u] = m
            r.upload_counts[u] = 10
            r.local_losses[u] = 0.5
        return r

    def test_no_compromised_unchanged(self):
        rng = np.random.default_rng(0)
        uploads = {i: mp(rng.normal(size=4)) for i in range(4)}
        before = {u: m.vector.copy() for u, m in uploads.items()}
        out = adv.poison_uploads(
            self._round(uploads), (), adv.AttackConfig(kind="attack1"), rng
        )
        for u in uploads:
            assert np.array_equal(out.uploads[u].vector, before[u])

    def test_exactly_compromised_participants_replaced(self):
        rng = np.random.default_rng(0)
        uploads = {i: mp(rng.normal(size=4)) for i in range(10)}
        before = {u: m.vector.copy() for u, m in uploads.items()}
        cfg = adv.AttackConfig(kind="attack1", noise_std=0.0)
        out = adv.poison_uploads(self._round(uploads), (3, 7), cfg, rng)
        changed = [u for u in uploads if not np.array_equal(out.uploads[u].vector, before[u])]
        assert sorted(changed) == [3, 7]

    def test_excluded_compromised_device_uploads_nothing(self):
        rng = np.random.default_rng(0)
        uploads = {i: mp(rng.normal(size=4)) for i in (0, 1, 2)}  # device 5 not present
        cfg = adv.AttackConfig(kind="attack1", noise_std=0.0)
        out = adv.poison_uploads(self._round(uploads), (5,), cfg, rng)
        assert 5 not in out.uploads

    def test_attack1_uses_honest_mean(self):
        cfg = adv.AttackConfig(kind="attack1", noise_std=0.0)
        uploads = {0: mp([1.0, 1.0, 1.0, 1.0]), 1: mp([3.0, 3.0, 3.0, 3.0]), 2: mp([0.0, 0.0, 0.0, 0.0])}
        out = adv.poison_uploads(self._round(uploads), (2,), cfg, np.random.default_rng(0))
        assert np.allclose(out.uploads[2].vector, -20.0)  # -10 * mean([1, 3])

    def test_attack2_colluders_upload_identically(self):
        cfg = adv.AttackConfig(kind="attack2", deviation_fraction=1.0)
        rng = np.random.default_rng(2)
        uploads = {i: mp(rng.normal(size=4)) for i in range(6)}
        out = adv.poison_uploads(self._round(uploads), (1, 4), cfg, rng)
        assert np.array_equal(out.uploads[1].vector, out.uploads[4].vector)


class TestCompromisePlan:
    def test_draw_respects_bounds_and_membership(self):
        rng = np.random.default_rng(0)
        ids = list(range(10))
        for _ in range(50):
            plan = adv.draw_compromise_plan(ids, rng, 2, 4)
            assert 2 <= len(plan.compromised) <= 4
            assert set(plan.compromised) <= set(ids)

    def test_json_roundtrip(self):
        plan = adv.CompromisePlan(compromised=(1, 5), active_from=1)
        again = adv.CompromisePlan.from_json(plan.to_json())
        assert again == plan

    def test_activation_schedule(self):
        plan = adv.CompromisePlan(compromised=(2, 3), active_from=2)
        assert plan.active_at(1) == ()
        assert plan.active_at(2) == (2, 3)
