import math

import numpy as np
import pytest

from ivforecast.data import AR1, SynthConfig, business_dates, generate_synthetic, simulate_underlying
from ivforecast.errors import AlignmentError, GridLookupError
from ivforecast.pricing import OptionSpec, bs_price
from ivforecast.strategies import (
    BacktestRules,
    ButterflySpread,
    CalendarSpread,
    backtest,
    butterfly_payoff,
    calendar_payoff,
    interpolated_vol,
    open_butterfly,
    open_calendar,
    position_value,
    price_legs,
    write_pnl,
    write_trades,
)
from ivforecast.surface import MONEYNESS, SurfaceSeries, VolSurface
from oracles import AuditedSeries, butterfly_table, calendar_table

D0 = business_dates("2020-01-02", 1)[0]


def smile_surface(base=0.2, curv=0.5, term=0.01):
    g = base + curv * (np.array(MONEYNESS) - 1.0) ** 2
    return VolSurface(D0, np.concatenate([g + term * k for k in range(5)]))


class TestConstruction:
    def test_calendar_invariants(self):
        with pytest.raises(ValueError):
            CalendarSpread(100, 5.0, 4.0)  # C2 <= C1
        with pytest.raises(ValueError):
            CalendarSpread(100, 4.0, 5.0, short_tenor=6, long_tenor=3)
        with pytest.raises(ValueError):
            CalendarSpread(100, 4.0, 5.0, direction="flat")

    def test_butterfly_invariants(self):
        with pytest.raises(ValueError):
            ButterflySpread(95, 100, 106, 7, 4, 2)
        with pytest.raises(ValueError):
            ButterflySpread(100, 95, 105, 7, 4, 2)
        ButterflySpread(95, 100, 105, 7, 4, 2)

    def test_butterfly_ratio(self):
        legs = ButterflySpread(95, 100, 105, 7, 4, 2).legs()
        assert [q for _, _, q in legs] == [1.0, -2.0, 1.0]


class TestCalendarPayoff:
    def test_at_strike(self):
        s = CalendarSpread(100, 4.0, 6.5)
        assert calendar_payoff(s, 100.0, 5.0) == 4.0 + 5.0 - 6.5

    def test_unchanged_long_leg(self):
        s = CalendarSpread(100, 4.0, 6.5)
        assert calendar_payoff(s, 90.0, 6.5) == 4.0

    def test_rows(self):
        s = CalendarSpread(100, 4.0, 6.5)
        assert calendar_payoff(s, 80.0, 3.0) == 4.0 + 3.0 - 6.5
        assert calendar_payoff(s, 112.0, 14.0) == 4.0 - 12.0 + 14.0 - 6.5

    def test_short_negates(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            k, c1 = rng.uniform(50, 150), rng.uniform(0, 10)
            c2, ct2, st = c1 + rng.uniform(0.01, 10), rng.uniform(0, 20), rng.uniform(30, 200)
            lo = calendar_payoff(CalendarSpread(k, c1, c2), st, ct2)
            sh = calendar_payoff(CalendarSpread(k, c1, c2, direction="short"), st, ct2)
            assert lo + sh == 0.0


class TestButterflyPayoff:
    def make(self, **kw):
        return ButterflySpread(95.0, 100.0, 105.0, 7.0, 4.0, 2.0, **kw)

    def test_rows(self):
        s = self.make()
        net = 2 * 4.0 - 7.0 - 2.0
        assert butterfly_payoff(s, 80.0) == net
        assert butterfly_payoff(s, 100.0) == 100.0 - 95.0 + net
        assert butterfly_payoff(s, 102.0) == 105.0 - 102.0 + net
        assert butterfly_payoff(s, 130.0) == net

    def test_continuous_with_kinks(self):
        s = self.make()
        eps = 1e-9
        for k in (95.0, 100.0, 105.0):
            assert abs(butterfly_payoff(s, k - eps) - butterfly_payoff(s, k + eps)) < 1e-8
        # slope changes only at the strikes
        slope = lambda a, b: (butterfly_payoff(s, b) - butterfly_payoff(s, a)) / (b - a)
        assert slope(80, 90) == 0 and slope(96, 99) == pytest.approx(1) and slope(101, 104) == pytest.approx(-1)
        assert slope(110, 120) == 0

    def test_antisymmetry(self):
        for st in np.linspace(80, 120, 81):
            assert butterfly_payoff(self.make(), st) + butterfly_payoff(self.make(direction="short"), st) == 0.0

    def test_max_loss_is_premium(self):
        s = self.make()
        grid = np.linspace(50, 150, 2001)
        vals = np.array([butterfly_payoff(s, x) for x in grid])
        assert vals.min() == pytest.approx(2 * 4.0 - 7.0 - 2.0)
        assert np.all(vals[(grid < 95) | (grid > 105)] == vals.min())

    def test_peak_dominates_with_bs_premiums(self):
        surf = smile_surface()
        b = open_butterfly(surf, 100.0, 0.02)
        assert butterfly_payoff(b, b.k2) >= butterfly_payoff(b, b.k1)


class TestPriceLegs:
    def test_flat_surface(self):
        surf = VolSurface(D0, np.full(45, 0.25))
        cal = open_calendar(surf, 100.0, 0.03)
        assert cal.c1 == bs_price(OptionSpec("call", 100.0, 0.25, 100.0, 0.03), 0.25)
        assert cal.c2 == bs_price(OptionSpec("call", 100.0, 0.5, 100.0, 0.03), 0.25)

    def test_butterfly_debit_on_convex_smile(self):
        b = open_butterfly(smile_surface(curv=2.0), 100.0, 0.02)
        assert 2 * b.c2 - b.c1 - b.c3 < 0
        assert b.entry_value == pytest.approx(b.c1 + b.c3 - 2 * b.c2)

    def test_parity_per_leg(self):
        surf = smile_surface()
        b = open_butterfly(surf, 100.0, 0.02)
        put_b = ButterflySpread(b.k1, b.k2, b.k3, b.c1, b.c2, b.c3, kind="put")
        puts = price_legs(put_b, surf, 100.0, 0.02)
        for (k, tenor, _), c, p in zip(b.legs(), (b.c1, b.c2, b.c3), puts):
            assert c - p == pytest.approx(100.0 - k * math.exp(-0.02 * tenor / 12), abs=1e-10)

    def test_off_grid(self):
        surf = smile_surface()
        with pytest.raises(GridLookupError):
            price_legs(CalendarSpread(140.0, 1.0, 2.0), surf, 100.0, 0.0)
        with pytest.raises(GridLookupError):
            price_legs(CalendarSpread(100.0, 1.0, 2.0, short_tenor=2, long_tenor=6), surf, 100.0, 0.0)

    def test_nearest_node_tolerance(self):
        surf = smile_surface()
        a = price_legs(CalendarSpread(100.4, 1.0, 2.0), surf, 100.0, 0.0)
        vol = surf.vol(3, 1.0)
        assert a[0] == bs_price(OptionSpec("call", 100.4, 0.25, 100.0, 0.0), vol)


class TestInterpolation:
    def test_grid_nodes_exact(self):
        surf = smile_surface()
        for t, tm in ((3, 0.25), (12, 1.0), (24, 2.0)):
            for m in MONEYNESS:
                assert interpolated_vol(surf, tm, m) == pytest.approx(surf.vol(t, m), abs=1e-14)

    def test_flat_extrapolation(self):
        surf = smile_surface()
        assert interpolated_vol(surf, 0.01, 0.5) == surf.vol(3, 0.8)

    def test_position_value_at_entry(self):
        surf = smile_surface()
        cal = open_calendar(surf, 100.0, 0.02)
        assert position_value(cal, surf, 100.0, 0.02, 0.0) == pytest.approx(cal.entry_value, abs=1e-12)


def synthetic_path(n=400, seed=3):
    s = generate_synthetic(SynthConfig(n_days=n, seed=seed))
    return s, simulate_underlying(s, 100.0, 0.02, seed=seed)


class TestBacktest:
    @pytest.mark.parametrize("strategy", ["calendar", "butterfly"])
    def test_perfect_foresight_dominance(self, strategy):
        s, spot = synthetic_path()
        rules = BacktestRules(strategy=strategy)
        pf = backtest(s, s.slice(1, len(s)), rules, spot)
        base = backtest(s, None, rules, spot)
        assert pf.total_pnl >= base.total_pnl

    def test_zero_vol_of_vol_flat(self):
        cfg = SynthConfig(n_days=120, seed=0, level=AR1(0.2, 0.9, 0.0), slope=AR1(-0.3, 0.9, 0.0),
                          curvature=AR1(0.5, 0.9, 0.0), term=AR1(0.01, 0.9, 0.0), noise=0.0)
        s = generate_synthetic(cfg)
        pnl = backtest(s, s.slice(1, len(s)), BacktestRules(band_low=0.001), np.full(len(s), 100.0))
        assert not pnl.trades
        assert np.all(pnl.values == 100.0)
        assert pnl.sharpe is None

    def test_deterministic(self, tmp_path):
        s, spot = synthetic_path(250)
        rules = BacktestRules(strategy="butterfly")
        for k in range(2):
            pnl = backtest(s, s.slice(1, len(s)), rules, spot)
            write_trades(pnl, tmp_path / f"t{k}.csv")
            write_pnl(pnl, tmp_path / f"p{k}.csv")
        assert (tmp_path / "t0.csv").read_bytes() == (tmp_path / "t1.csv").read_bytes()
        assert (tmp_path / "p0.csv").read_bytes() == (tmp_path / "p1.csv").read_bytes()

    def test_simulated_spot_is_seeded(self):
        s, _ = synthetic_path(150)
        a = backtest(s, None, BacktestRules(seed=1))
        b = backtest(s, None, BacktestRules(seed=1))
        np.testing.assert_array_equal(a.values, b.values)

    def test_misaligned(self):
        s, spot = synthetic_path(100)
        with pytest.raises(AlignmentError):
            backtest(s, None, BacktestRules(), spot[:-1])
        gappy = SurfaceSeries([s.dates[k] for k in (5, 6, 8, 9)], s.vols[[5, 6, 8, 9]])
        with pytest.raises(AlignmentError):
            backtest(s, gappy, BacktestRules(), spot)
        other = SurfaceSeries(business_dates("2030-01-02", 5), s.vols[:5])
        with pytest.raises(AlignmentError):
            backtest(s, other, BacktestRules(), spot)

    def test_series_invariants(self):
        s, spot = synthetic_path(300)
        pnl = backtest(s, s.slice(1, len(s)), BacktestRules(), spot)
        assert all(b > a for a, b in zip(pnl.dates, pnl.dates[1:]))
        assert pnl.positions[-1] == 0
        assert pnl.total_pnl == pytest.approx(sum(t.pnl for t in pnl.trades), abs=1e-9)
        assert 0.0 <= pnl.max_drawdown < 1.0

    def test_exit_reasons_and_expiry(self):
        s, spot = synthetic_path(400)
        rules = BacktestRules(exit_on_signal=False, stop_loss=50.0, take_profit=50.0)
        pnl = backtest(s, None, rules, spot)
        assert {t.reason for t in pnl.trades} <= {"expiry", "end"}
        expiries = [t for t in pnl.trades if t.reason == "expiry"]
        assert expiries
        for t in expiries:
            assert s.dates.index(t.exit_date) - s.dates.index(t.entry_date) == 63

    def test_transaction_costs_reduce_pnl(self):
        s, spot = synthetic_path(250)
        free = backtest(s, s.slice(1, len(s)), BacktestRules(), spot)
        paid = backtest(s, s.slice(1, len(s)), BacktestRules(cost_per_leg=0.01), spot)
        assert paid.total_pnl == pytest.approx(free.total_pnl - 0.01 * 2 * 2 * len(free.trades), abs=1e-9)

    def test_sharpe_formula(self):
        s, spot = synthetic_path(250)
        pnl = backtest(s, None, BacktestRules(), spot)
        r = pnl.returns[1:]
        assert pnl.sharpe == pytest.approx(r.mean() / r.std(ddof=1) * math.sqrt(252))

    def test_no_look_ahead(self):
        s, spot = synthetic_path(200)
        audited = AuditedSeries.wrap(s)
        backtest(audited, s.slice(1, len(s)), BacktestRules(strategy="butterfly"), spot)
        assert audited.log and not audited.score_reads()
        for start, stop, limit, _ in audited.log:
            assert limit is not None and stop <= limit

    def test_future_perturbation_invisible(self):
        s, spot = synthetic_path(200)
        u = 150
        vols = np.array(s.vols)
        vols[u:] = np.clip(vols[u:] * 1.3, 0.01, 2.0)
        s2 = s.map_vols(vols)
        fc = s.slice(1, len(s))
        a = backtest(s, fc, BacktestRules(), spot)
        b = backtest(s2, fc, BacktestRules(), spot)
        np.testing.assert_array_equal(a.values[:u], b.values[:u])
        assert not np.array_equal(a.values[u:], b.values[u:])
