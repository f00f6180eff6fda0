//! Reference implementations used only by the tests. None of them go through
//! the tape or the library's estimator code.
#![allow(dead_code)]

use astro_float::{BigFloat, Consts, RoundingMode};
use mlmc_grad::nsde::{layout, Drift, GainScheme, HIDDEN};
use mlmc_grad::MarketParams;

pub const PREC: usize = 256;
pub const RM: RoundingMode = RoundingMode::ToEven;

fn sig(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `H(t, s)` and `dH/ds` by direct chain rule on plain floats.
pub fn ref_hedge(p: &[f64], t: f64, s: f64) -> (f64, f64) {
    let mut a1 = [0.0; HIDDEN];
    let mut da1 = [0.0; HIDDEN];
    for i in 0..HIDDEN {
        let z = p[layout::W1 + 2 * i] * t + p[layout::W1 + 2 * i + 1] * s + p[layout::B1 + i];
        let sg = sig(z);
        a1[i] = z * sg;
        da1[i] = (sg + z * sg * (1.0 - sg)) * p[layout::W1 + 2 * i + 1];
    }
    let mut a2 = [0.0; HIDDEN];
    let mut da2 = [0.0; HIDDEN];
    for i in 0..HIDDEN {
        let mut z = p[layout::B2 + i];
        let mut dz = 0.0;
        for j in 0..HIDDEN {
            let w = p[layout::W2 + HIDDEN * i + j];
            z += w * a1[j];
            dz += w * da1[j];
        }
        let sg = sig(z);
        a2[i] = z * sg;
        da2[i] = (sg + z * sg * (1.0 - sg)) * dz;
    }
    let mut z = p[layout::B3];
    let mut dz = 0.0;
    for j in 0..HIDDEN {
        z += p[layout::W3 + j] * a2[j];
        dz += p[layout::W3 + j] * da2[j];
    }
    let h = sig(z);
    (h, h * (1.0 - h) * dz)
}

/// Per-path hedging loss with the price and gain stepped together.
pub fn ref_loss(p: &[f64], mp: &MarketParams, inc: &[f64]) -> f64 {
    let dt = 1.0 / inc.len() as f64;
    let sg = mp.sigma;
    let mut s = mp.s0;
    let mut gain = 0.0;
    for (n, &db) in inc.iter().enumerate() {
        let drift = match mp.drift {
            Drift::Additive => mp.mu,
            Drift::Proportional => mp.mu * s,
        };
        let next = s + drift * dt + sg * s * db + 0.5 * sg * sg * s * (db * db - dt);
        let (h, hs) = ref_hedge(p, n as f64 * dt, s);
        gain += h * (next - s);
        if mp.gain == GainScheme::Milstein {
            gain += 0.5 * sg * sg * s * s * hs * (db * db - dt);
        }
        s = next;
    }
    let r = (s - mp.strike).max(0.0) - gain - p[layout::P0];
    r * r
}

pub fn pair_sums(fine: &[f64]) -> Vec<f64> {
    fine.chunks(2).map(|c| c[0] + c[1]).collect()
}

/// Fine minus coarse loss on one fine increment path.
pub fn ref_coupled(p: &[f64], mp: &MarketParams, fine: &[f64]) -> f64 {
    if fine.len() == 1 {
        ref_loss(p, mp, fine)
    } else {
        ref_loss(p, mp, fine) - ref_loss(p, mp, &pair_sums(fine))
    }
}

/// Fourth-order central difference of `f` along coordinate `i`.
pub fn fd_coord(f: impl Fn(&[f64]) -> f64, p: &[f64], i: usize, h: f64) -> f64 {
    let mut q = p.to_vec();
    let mut at = |d: f64| {
        q[i] = p[i] + d;
        f(&q)
    };
    let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
}

/// Relative error with a floor so that coordinates with a vanishing exact
/// derivative are compared on the scale of the whole gradient.
pub fn rel_err(got: f64, want: f64, floor: f64) -> f64 {
    (got - want).abs() / want.abs().max(got.abs()).max(floor)
}

pub fn big(v: f64) -> BigFloat {
    BigFloat::from_f64(v, PREC)
}

pub fn big_u(v: u64) -> BigFloat {
    BigFloat::from(v)
}

/// Parses the decimal rendering; enough for comparisons at f64 resolution.
pub fn big_to_f64(x: &BigFloat) -> f64 {
    let s = format!("{x}");
    s.parse().unwrap_or_else(|_| panic!("unparseable big float '{s}'"))
}

/// `2^(e)` for a real exponent.
pub fn big_pow2(e: &BigFloat, cc: &mut Consts) -> BigFloat {
    let ln2 = big_u(2).ln(PREC, RM, cc);
    e.mul(&ln2, PREC, RM).exp(PREC, RM, cc)
}

/// Counts `ceil(w_l / sum w * n)` with `w_l = 2^{-(b+c) l / 2}`, clamped
/// below by 1, in 256-bit arithmetic. The ceiling is found by bracketing
/// against integers so no rounding to f64 happens before it.
pub fn ref_allocation(n: u64, b: f64, c: f64, lmax: u32) -> Vec<u64> {
    let mut cc = Consts::new().expect("constants");
    let half = big(-(b + c) / 2.0);
    let weights: Vec<BigFloat> = (0..=lmax)
        .map(|l| big_pow2(&half.mul(&big_u(u64::from(l)), PREC, RM), &mut cc))
        .collect();
    let mut total = big_u(0);
    for w in &weights {
        total = total.add(w, PREC, RM);
    }
    weights
        .iter()
        .map(|w| {
            let q = w.div(&total, PREC, RM).mul(&big_u(n), PREC, RM);
            let mut k = 0u64;
            // smallest integer k with q <= k
            let approx = big_to_f64(&q).ceil().max(0.0) as u64;
            for cand in approx.saturating_sub(2)..=approx + 2 {
                if q.cmp(&big_u(cand)).is_some_and(|o| o <= 0) {
                    k = cand;
                    break;
                }
            }
            k.max(1)
        })
        .collect()
}

/// `v` as `m / 10^k` from its shortest round-trip decimal form.
pub fn decimal_parts(v: f64) -> (u128, u32) {
    let text = format!("{v:e}");
    let (mant, exp) = text.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().unwrap();
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    let digits: u128 = format!("{int}{frac}").parse().unwrap();
    let shift = frac.len() as i32 - exp;
    if shift >= 0 {
        (digits, shift as u32)
    } else {
        (digits * 10u128.pow((-shift) as u32), 0)
    }
}

/// Largest integer `p >= 1` with `p <= 2^{d l}`, `d` read as its decimal.
/// Integer exponents are resolved exactly, the rest in 256-bit arithmetic.
pub fn ref_period(level: u32, d: f64) -> u64 {
    let (m, k) = decimal_parts(d);
    let num = m * u128::from(level);
    let den = 10u128.pow(k);
    if num % den == 0 {
        let e = num / den;
        assert!(e < 64, "period overflows u64");
        return 1u64 << e;
    }
    let mut cc = Consts::new().expect("constants");
    let e = big_u(num as u64).div(&big_u(den as u64), PREC, RM);
    let target = big_pow2(&e, &mut cc);
    let approx = big_to_f64(&target).floor().max(1.0) as u64;
    let mut best = 1;
    for cand in approx.saturating_sub(2).max(1)..=approx + 2 {
        if big_u(cand).cmp(&target).is_some_and(|o| o <= 0) {
            best = cand;
        }
    }
    best
}

/// `min(1/(8 L'), beta / L)` with
/// `beta = 1 / (12 (lmax+1) S_d ln(2T+1))`, `S_d = 1 / (1 - 2^{-d})`.
pub fn ref_step_bound(l_smooth: f64, l_prime: f64, lmax: u32, d: f64, t: u64) -> f64 {
    let mut cc = Consts::new().expect("constants");
    let one = big_u(1);
    let decay = big_pow2(&big(-d), &mut cc);
    let s_d = one.div(&one.sub(&decay, PREC, RM), PREC, RM);
    let log_t = big_u(2 * t + 1).ln(PREC, RM, &mut cc);
    let denom = big_u(12 * (u64::from(lmax) + 1))
        .mul(&s_d, PREC, RM)
        .mul(&log_t, PREC, RM);
    let beta = one.div(&denom, PREC, RM);
    let a = one.div(&big(8.0 * l_prime), PREC, RM);
    let b = beta.div(&big(l_smooth), PREC, RM);
    let m = if a.cmp(&b).is_some_and(|o| o <= 0) { a } else { b };
    big_to_f64(&m)
}

/// Least-squares slope of `y` on `x` through the normal equations.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Kolmogorov-Smirnov statistic of `xs` against `cdf`.
pub fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Independent scheduler: walks the iterations keeping explicit countdowns.
pub fn recount(t_total: u64, d: f64, lmax: u32, counts: &[u64]) -> (Vec<u64>, u64, u64) {
    let periods: Vec<u64> = (0..=lmax).map(|l| ref_period(l, d)).collect();
    let mut countdown = vec![0u64; periods.len()];
    let mut refreshes = vec![0u64; periods.len()];
    let (mut work, mut span) = (0, 0);
    for _ in 0..t_total {
        let mut step_span = 0;
        for l in 0..periods.len() {
            if countdown[l] == 0 {
                refreshes[l] += 1;
                let cost = if l == 0 { 1 } else { 3u64 << (l - 1) };
                work += counts[l] * cost;
                step_span = step_span.max(cost);
                countdown[l] = periods[l];
            }
            countdown[l] -= 1;
        }
        span += step_span;
    }
    (refreshes, work, span)
}
