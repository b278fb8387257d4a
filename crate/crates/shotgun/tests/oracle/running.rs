#![allow(dead_code)]
//! Closed-form model of the two-agent example, written out by hand and
//! independent of the library's chain and occupancy code.
//!
//! A policy is `(alpha, beta)` with `alpha = P(r | 1)` and
//! `beta = P(land | 2)`.

fn xlogy(x: f64, ratio: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * ratio.ln()
    }
}

/// Probability of moving 1 -> 2 under the reference of agent 1 or 2.
pub fn reference_p2(agent: usize) -> f64 {
    if agent == 1 {
        0.9
    } else {
        0.1
    }
}

pub fn p2(alpha: f64) -> f64 {
    0.9 * alpha + 0.1 * (1.0 - alpha)
}

pub fn reach(alpha: f64, beta: f64) -> f64 {
    p2(alpha) * (0.2 + 0.8 * beta)
}

pub fn kl(agent: usize, alpha: f64, beta: f64) -> f64 {
    let r = reference_p2(agent);
    let p = p2(alpha);
    let at1 = xlogy(p, p / r) + xlogy(1.0 - p, (1.0 - p) / (1.0 - r));
    let star = 0.2 + 0.8 * beta;
    let at2 = xlogy(0.8 * (1.0 - beta), 1.0 - beta) + xlogy(star, star / 0.2);
    at1 + p * at2
}

/// Largest `beta` with `kl <= budget` for fixed `alpha`, or `None`.
fn best_beta(agent: usize, alpha: f64, budget: f64) -> Option<f64> {
    if kl(agent, alpha, 0.0) > budget {
        return None;
    }
    if kl(agent, alpha, 1.0) <= budget {
        return Some(1.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if kl(agent, alpha, mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// Best reach with KL at most `budget`, scanning `alpha` on a grid of the
/// given step and solving for `beta` exactly.
pub fn max_reach(agent: usize, budget: f64, step: f64) -> f64 {
    let n = (1.0 / step).round() as usize;
    (0..=n)
        .filter_map(|i| {
            let alpha = i as f64 / n as f64;
            best_beta(agent, alpha, budget).map(|b| reach(alpha, b))
        })
        .fold(0.0, f64::max)
}

/// Smallest budget at which the pair reaches `nu` jointly, found by
/// bisection on the oracle above.
pub fn team_kl(nu: f64, step: f64) -> f64 {
    let joint = |k: f64| 1.0 - (1.0 - max_reach(1, k, step)) * (1.0 - max_reach(2, k, step));
    let (mut lo, mut hi) = (0.0, 4.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if joint(mid) >= nu {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
