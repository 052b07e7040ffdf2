//! Bessel function of the first kind, order one.
//!
//! Small arguments use the power series directly. Larger arguments use
//! Miller's backward recurrence normalized with `J0 + 2 * sum(J2k) = 1`,
//! and very large arguments fall back to the Hankel asymptotic expansion.

use std::f64::consts::PI;

const SERIES_LIMIT: f64 = 8.0;
const ASYMPTOTIC_LIMIT: f64 = 250.0;

pub fn j1(x: f64) -> f64 {
    if x < 0.0 {
        return -j1(-x);
    }
    if x == 0.0 {
        return 0.0;
    }
    if x < SERIES_LIMIT {
        series(x)
    } else if x < ASYMPTOTIC_LIMIT {
        miller(x)
    } else {
        asymptotic(x)
    }
}

fn series(x: f64) -> f64 {
    let half = 0.5 * x;
    let q = -half * half;
    let mut term = half;
    let mut sum = half;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= q / (k * (k + 1.0));
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            return sum;
        }
    }
}

fn miller(x: f64) -> f64 {
    let start = x + 20.0 * x.cbrt() + 20.0;
    // even starting order so the normalization sum sees every J_2k
    let top = 2 * ((start as usize) / 2 + 1);

    let mut next = 0.0;
    let mut cur = 1e-280;
    let mut even_sum = 0.0;
    let mut order_one = 0.0;
    for n in (1..=top).rev() {
        if n % 2 == 0 {
            even_sum += cur;
        }
        if n == 1 {
            order_one = cur;
        }
        let prev = (2.0 * n as f64 / x) * cur - next;
        next = cur;
        cur = prev;
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            next *= 1e-250;
            even_sum *= 1e-250;
            order_one *= 1e-250;
        }
    }
    order_one / (cur + 2.0 * even_sum)
}

fn asymptotic(x: f64) -> f64 {
    // P and Q series for nu = 1, mu = 4
    let mu = 4.0;
    let eight_x = 8.0 * x;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    for k in 1..12 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        term *= (mu - odd * odd) / (kf * eight_x);
        if k % 2 == 1 {
            let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            q += sign * term;
        } else {
            let sign = if (k / 2) % 2 == 1 { -1.0 } else { 1.0 };
            p += sign * term;
        }
    }
    let chi = x - 0.75 * PI;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}
