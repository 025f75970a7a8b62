//! Bessel functions of the first kind for the orders a radial transform in
//! integer dimension needs: integers and half-integers.
//!
//! Half-integer orders reduce to spherical Bessel functions. Integer orders
//! use the power series near the origin, Miller's backward recurrence in the
//! transition region and the Hankel asymptotic expansion for large argument.

use std::f64::consts::{FRAC_PI_2, PI};

/// Order of a Bessel function, restricted to `k/2` for a nonnegative integer `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    Integer(u32),
    /// `l + 1/2`
    HalfInteger(u32),
}

impl Order {
    pub fn from_f64(nu: f64) -> Option<Self> {
        let twice = 2.0 * nu;
        if nu < 0.0 || (twice - twice.round()).abs() > 1e-12 {
            return None;
        }
        let twice = twice.round() as u32;
        Some(if twice.is_multiple_of(2) {
            Order::Integer(twice / 2)
        } else {
            Order::HalfInteger(twice / 2)
        })
    }

    pub fn value(self) -> f64 {
        match self {
            Order::Integer(k) => k as f64,
            Order::HalfInteger(l) => l as f64 + 0.5,
        }
    }
}

/// `J_nu(x)` for `x >= 0` and `nu` an integer or half-integer.
pub fn bessel_j(nu: f64, x: f64) -> f64 {
    let order = Order::from_f64(nu).expect("bessel order must be a nonnegative multiple of 1/2");
    match order {
        Order::HalfInteger(l) => {
            if x == 0.0 {
                return 0.0;
            }
            (2.0 * x / PI).sqrt() * spherical_j(l, x)
        }
        Order::Integer(k) => integer_j(k, x),
    }
}

/// `x^{-nu} J_nu(x)`, an entire even function of `x`; finite at the origin.
pub fn bessel_lambda(nu: f64, x: f64) -> f64 {
    let order = Order::from_f64(nu).expect("bessel order must be a nonnegative multiple of 1/2");
    let x = x.abs();
    match order {
        Order::HalfInteger(l) => {
            let lf = l as f64;
            let reduced = if x < lf + 4.0 {
                spherical_j_reduced_series(l, x)
            } else {
                spherical_j(l, x) / x.powi(l as i32)
            };
            (2.0 / PI).sqrt() * reduced
        }
        Order::Integer(k) => {
            if x < 8.0 {
                integer_lambda_series(k, x)
            } else {
                integer_j(k, x) / x.powi(k as i32)
            }
        }
    }
}

/// Spherical Bessel function `j_l(x)`.
fn spherical_j(l: u32, x: f64) -> f64 {
    let lf = l as f64;
    if x < lf + 4.0 {
        return x.powi(l as i32) * spherical_j_reduced_series(l, x);
    }
    let (s, c) = x.sin_cos();
    let j0 = s / x;
    if l == 0 {
        return j0;
    }
    let mut prev = j0;
    let mut cur = s / (x * x) - c / x;
    for k in 1..l {
        let next = (2.0 * k as f64 + 1.0) / x * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `x^{-l} j_l(x)` by its power series.
fn spherical_j_reduced_series(l: u32, x: f64) -> f64 {
    // 1/(2l+1)!!
    let mut lead = 1.0;
    for k in 0..=l {
        lead /= (2 * k + 1) as f64;
    }
    let y = -0.5 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= y / (k as f64 * (2.0 * (l + k as u32) as f64 + 1.0));
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    lead * sum
}

fn integer_lambda_series(k: u32, x: f64) -> f64 {
    // sum_j (-1)^j x^{2j} / (2^{2j+k} j! (j+k)!)
    let mut lead = 0.5_f64.powi(k as i32);
    for j in 1..=k {
        lead /= j as f64;
    }
    let y = -0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..200 {
        term *= y / (j as f64 * (j + k) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    lead * sum
}

fn integer_j(k: u32, x: f64) -> f64 {
    if x == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if x < 8.0 {
        integer_lambda_series(k, x) * x.powi(k as i32)
    } else if x < 40.0 {
        miller_j(k, x)
    } else {
        hankel_asymptotic_j(k as f64, x)
    }
}

/// Backward recurrence normalised by `J_0 + 2 sum J_{2m} = 1`.
fn miller_j(k: u32, x: f64) -> f64 {
    let start = {
        let m = (x as u32).max(k) + 40;
        m + (m % 2)
    };
    let mut next = 0.0; // J_{m+1}
    let mut cur = 1e-30; // J_m
    let mut norm = 0.0;
    let mut wanted = 0.0;
    let mut m = start;
    loop {
        if m == k {
            wanted = cur;
        }
        if m % 2 == 0 {
            norm += if m == 0 { cur } else { 2.0 * cur };
        }
        if m == 0 {
            break;
        }
        let prev = 2.0 * m as f64 / x * cur - next;
        next = cur;
        cur = prev;
        m -= 1;
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            next *= 1e-250;
            norm *= 1e-250;
            wanted *= 1e-250;
        }
    }
    wanted / norm
}

fn hankel_asymptotic_j(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut p = 0.0;
    let mut q = 0.0;
    let mut term: f64 = 1.0;
    let mut last = f64::INFINITY;
    for k in 0..60 {
        if term.abs() > last {
            break;
        }
        last = term.abs();
        match k % 4 {
            0 => p += term,
            1 => q += term,
            2 => p -= term,
            _ => q -= term,
        }
        if term.abs() < 1e-17 {
            break;
        }
        let odd = (2 * k + 1) as f64;
        term *= (mu - odd * odd) / ((k + 1) as f64 * 8.0 * x);
    }
    let chi = x - (0.5 * nu + 0.25) * PI;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// First `count` positive zeros of `J_nu`, strictly increasing.
pub fn bessel_zeros(nu: f64, count: usize) -> Result<Vec<f64>, String> {
    let mu = 4.0 * nu * nu;
    let mut zeros = Vec::with_capacity(count);
    for m in 1..=count {
        let beta = (m as f64 + 0.5 * nu - 0.25) * PI;
        let b8 = 8.0 * beta;
        let mut z = beta - (mu - 1.0) / b8 - 4.0 * (mu - 1.0) * (7.0 * mu - 31.0) / (3.0 * b8.powi(3));
        if let Some(&prev) = zeros.last() {
            if z <= prev + 1.0 {
                z = prev + PI;
            }
        } else if z <= nu {
            z = nu + FRAC_PI_2 + 1.0;
        }
        for _ in 0..100 {
            let j = bessel_j(nu, z);
            let dj = bessel_j(nu - 1.0, z) - nu / z * j;
            let step = j / dj;
            z -= step;
            if step.abs() <= 1e-15 * z {
                break;
            }
        }
        if let Some(&prev) = zeros.last() {
            if !(z > prev + 2.0) {
                return Err(format!("zero search for J_{nu} lost track at index {m}"));
            }
        } else if !(z > nu) {
            return Err(format!("first zero of J_{nu} not found"));
        }
        zeros.push(z);
    }
    Ok(zeros)
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;

    // Reference values from 30-digit arbitrary precision evaluation.
    const REFERENCE: &[(f64, f64, f64)] = &[
        (0.5, 0.05, 0.17833808240219743),
        (0.5, 3.7, -0.21977625985052783),
        (0.5, 4000.1, -0.00949899859945455),
        (1.5, 0.05, 0.0029727968749101474),
        (1.5, 1.0, 0.24029783912342701),
        (1.5, 3.7, 0.29239326992365816),
        (1.5, 12.5, -0.22637633819446599),
        (1.5, 33.0, 0.0060525931591521988),
        (1.5, 250.3, -0.026247810633935042),
        (1.5, 4000.1, 0.0082994317351496253),
        (2.5, 0.05, 2.9730092411405303e-5),
        (2.5, 3.7, 0.45685188411295336),
        (2.5, 12.5, -0.039363071708003454),
        (2.5, 250.3, 0.042853718498142547),
        (3.5, 0.05, 2.1236623038279169e-7),
        (3.5, 12.5, 0.2106311095112646),
        (3.5, 33.0, -0.02701189561898577),
        (0.0, 0.05, 0.99937509764946858),
        (0.0, 12.5, 0.1468840547004211),
        (0.0, 33.0, 0.097270672235509463),
        (0.0, 250.3, -0.012110993458152946),
        (1.0, 1.0, 0.44005058574493352),
        (1.0, 12.5, -0.16548380461475972),
        (1.0, 4000.1, -0.00084772271912144682),
        (2.0, 0.05, 0.00031243490091938447),
        (2.0, 3.7, 0.42832965620657587),
        (2.0, 12.5, -0.17336146343878266),
        (2.0, 33.0, -0.091172511683078099),
        (2.0, 250.3, 0.011719616227052284),
        (2.0, 4000.1, 0.012586672491399427),
        (3.0, 0.05, 2.6037597910554325e-6),
        (3.0, 12.5, 0.11000813631434927),
        (3.0, 33.0, -0.1116708626524603),
        (3.0, 250.3, 0.04916814958494547),
    ];

    #[test]
    fn matches_reference_values() {
        for &(nu, x, expected) in REFERENCE {
            let got = bessel_j(nu, x);
            let err = (got - expected).abs();
            assert!(
                err <= 1e-13 + 1e-11 * expected.abs(),
                "J_{nu}({x}) = {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn lambda_series_agrees_with_recurrence() {
        for l in 1..4u32 {
            for x in [l as f64 + 0.5, l as f64 + 3.9, 7.5] {
                let series = spherical_j_reduced_series(l, x) * x.powi(l as i32);
                let (s, c) = x.sin_cos();
                let mut prev = s / x;
                let mut cur = s / (x * x) - c / x;
                for k in 1..l {
                    let next = (2.0 * k as f64 + 1.0) / x * cur - prev;
                    prev = cur;
                    cur = next;
                }
                assert!((series - cur).abs() < 1e-13, "l={l} x={x}: {series} vs {cur}");
            }
        }
        for k in 0..4u32 {
            for x in [7.9, 8.5, 12.0] {
                let series = integer_lambda_series(k, x) * x.powi(k as i32);
                let miller = miller_j(k, x);
                assert!((series - miller).abs() < 1e-12, "k={k} x={x}: {series} vs {miller}");
            }
        }
        // Lambda(0) = 1 / (2^nu Gamma(nu+1)); nu = 3/2: Gamma(5/2) = 3 sqrt(pi)/4.
        let expected = 1.0 / (2f64.powf(1.5) * 0.75 * PI.sqrt());
        assert!((bessel_lambda(1.5, 0.0) - expected).abs() < 1e-15);
        assert!((bessel_lambda(2.0, 0.0) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn zeros_match_reference() {
        let z = bessel_zeros(2.0, 100).unwrap();
        assert!((z[0] - 5.1356223018406828).abs() < 1e-12);
        assert!((z[2] - 11.619841172149059).abs() < 1e-12);
        assert!((z[99] - 316.50953586812841).abs() < 1e-10);
        let z = bessel_zeros(1.5, 100).unwrap();
        assert!((z[0] - 4.4934094579090642).abs() < 1e-12);
        assert!((z[1] - 7.7252518369377068).abs() < 1e-12);
        assert!((z[99] - 315.72689440204317).abs() < 1e-10);
    }

    #[test]
    fn order_parsing() {
        assert_eq!(Order::from_f64(1.5), Some(Order::HalfInteger(1)));
        assert_eq!(Order::from_f64(2.0), Some(Order::Integer(2)));
        assert_eq!(Order::from_f64(1.3), None);
    }
}
