#![allow(dead_code)]
//! Random small MDPs with three transient states `d0, d1, d2`, a goal `G`
//! and a sink `Z`, two actions per transient state. A policy is the vector
//! of probabilities of action `a` at each transient state. Everything here
//! is computed directly from the transition table, without the library's
//! chain or occupancy code.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shotgun_core::conic::{Cone, ConicProgram, ConicSolver, ToleranceSet};
use shotgun_core::{AgentSpec, MdpBuilder, StationaryPolicy};

pub const N: usize = 3;
const GOAL: usize = 3;
const NAMES: [&str; 5] = ["d0", "d1", "d2", "G", "Z"];

pub type Params = [f64; N];

#[derive(Debug, Clone)]
pub struct SmallMdp {
    /// `trans[s][a][q]`.
    pub trans: [[[f64; 5]; 2]; N],
    pub reference: Params,
}

pub fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn row(rng: &mut impl RngCore) -> [f64; 5] {
    loop {
        let mut w = [0.0; 5];
        for x in &mut w {
            *x = 0.02 + unit(rng);
        }
        // bias towards staying transient so deviations matter
        w[3] *= 0.5 * unit(rng);
        w[4] *= 0.5 + unit(rng);
        let total: f64 = w.iter().sum();
        for x in &mut w {
            *x /= total;
        }
        if w[3] + w[4] >= 0.05 {
            return w;
        }
    }
}

impl SmallMdp {
    pub fn random(rng: &mut impl RngCore) -> Self {
        let mut trans = [[[0.0; 5]; 2]; N];
        for s in &mut trans {
            for a in s.iter_mut() {
                *a = row(rng);
            }
        }
        let mut reference = [0.0; N];
        for r in &mut reference {
            *r = 0.1 + 0.8 * unit(rng);
        }
        Self { trans, reference }
    }

    fn step(&self, p: &Params) -> [[f64; 5]; N] {
        let mut out = [[0.0; 5]; N];
        for s in 0..N {
            for q in 0..5 {
                out[s][q] = p[s] * self.trans[s][0][q] + (1.0 - p[s]) * self.trans[s][1][q];
            }
        }
        out
    }

    /// Expected visits to each transient state from `d0`.
    fn visits(step: &[[f64; 5]; N]) -> [f64; N] {
        // (I - Q^T) x = e0 by Gaussian elimination with partial pivoting
        let mut a = [[0.0; N + 1]; N];
        for i in 0..N {
            for j in 0..N {
                a[i][j] = if i == j { 1.0 } else { 0.0 } - step[j][i];
            }
            a[i][N] = if i == 0 { 1.0 } else { 0.0 };
        }
        for c in 0..N {
            let piv = (c..N).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..N {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=N {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        let mut x = [0.0; N];
        for i in 0..N {
            x[i] = a[i][N] / a[i][i];
        }
        x
    }

    pub fn reach(&self, p: &Params) -> f64 {
        let step = self.step(p);
        let x = Self::visits(&step);
        (0..N).map(|s| x[s] * step[s][GOAL]).sum()
    }

    pub fn kl(&self, p: &Params) -> f64 {
        let step = self.step(p);
        let base = self.step(&self.reference);
        let x = Self::visits(&step);
        let mut total = 0.0;
        for s in 0..N {
            for q in 0..5 {
                let v = step[s][q];
                if v > 0.0 {
                    total += x[s] * v * (v / base[s][q]).ln();
                }
            }
        }
        total
    }

    pub fn max_reach(&self) -> f64 {
        (0..1 << N)
            .map(|mask| {
                let p: Params = core::array::from_fn(|s| ((mask >> s) & 1) as f64);
                self.reach(&p)
            })
            .fold(0.0, f64::max)
    }

    pub fn agent(&self) -> AgentSpec {
        let mut b = MdpBuilder::new();
        for s in NAMES {
            b.state(s);
        }
        for s in 0..N {
            for (a, name) in ["a", "b"].iter().enumerate() {
                for q in 0..5 {
                    b.transition(NAMES[s], name, NAMES[q], self.trans[s][a][q]).unwrap();
                }
            }
        }
        b.absorbing("G", "stay").unwrap();
        b.absorbing("Z", "stay").unwrap();
        b.initial("d0").unwrap();
        let m = b.build().unwrap();
        let mut probs: Vec<Vec<f64>> = self.reference.iter().map(|&r| vec![r, 1.0 - r]).collect();
        probs.push(vec![1.0]);
        probs.push(vec![1.0]);
        let goal = m.state_index("G").unwrap();
        AgentSpec::new(m, StationaryPolicy::new(probs), vec![goal], 0.5, 1.0).unwrap()
    }
}

/// A random team of two with a threshold halfway between the reference
/// team reach and the best attainable team reach.
pub struct Instance {
    pub agents: [SmallMdp; 2],
    pub nu: f64,
}

impl Instance {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let agents = [SmallMdp::random(&mut rng), SmallMdp::random(&mut rng)];
            let base = joint(agents[0].reach(&agents[0].reference), agents[1].reach(&agents[1].reference));
            let top = joint(agents[0].max_reach(), agents[1].max_reach());
            if top - base > 0.1 {
                return Self { nu: 0.5 * (base + top), agents };
            }
        }
    }

    pub fn joint_reach(&self, p: &[Params; 2]) -> f64 {
        joint(self.agents[0].reach(&p[0]), self.agents[1].reach(&p[1]))
    }

    pub fn worst_kl(&self, p: &[Params; 2]) -> f64 {
        self.agents[0].kl(&p[0]).max(self.agents[1].kl(&p[1]))
    }
}

pub fn joint(a: f64, b: f64) -> f64 {
    1.0 - (1.0 - a) * (1.0 - b)
}

/// Pareto frontier of `(kl, reach)` over every policy on a grid of the given
/// resolution, sorted by KL with strictly increasing reach.
pub fn grid_frontier(m: &SmallMdp, step: f64) -> Vec<(f64, f64)> {
    let n = (1.0 / step).round() as usize;
    let mut pts = Vec::with_capacity((n + 1).pow(N as u32));
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let p = [i as f64 / n as f64, j as f64 / n as f64, k as f64 / n as f64];
                pts.push((m.kl(&p), m.reach(&p)));
            }
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut front: Vec<(f64, f64)> = Vec::new();
    for (k, r) in pts {
        if front.last().is_none_or(|&(_, best)| r > best) {
            front.push((k, r));
        }
    }
    front
}

fn best_within(front: &[(f64, f64)], budget: f64) -> f64 {
    let i = front.partition_point(|&(k, _)| k <= budget);
    if i == 0 {
        0.0
    } else {
        front[i - 1].1
    }
}

/// Smallest grid budget at which the pair reaches `nu`, if any.
pub fn grid_team_kl(fronts: &[Vec<(f64, f64)>; 2], nu: f64) -> Option<f64> {
    let mut budgets: Vec<f64> = fronts.iter().flatten().map(|&(k, _)| k).collect();
    budgets.sort_by(f64::total_cmp);
    let ok = |k: f64| joint(best_within(&fronts[0], k), best_within(&fronts[1], k)) >= nu;
    let i = budgets.partition_point(|&k| !ok(k));
    budgets.get(i).copied()
}

/// Local refinement of `min max_i KL_i s.t. joint reach >= nu` over the six
/// policy parameters: sequential linear programming with an l1 penalty on
/// the reach constraint and a box trust region.
pub struct Refiner<'a, S> {
    pub inst: &'a Instance,
    pub solver: &'a S,
    pub penalty: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Refined {
    pub objective: f64,
    pub violation: f64,
    pub iterations: usize,
}

fn flat(p: &[Params; 2]) -> [f64; 2 * N] {
    core::array::from_fn(|j| p[j / N][j % N])
}

fn unflat(z: &[f64; 2 * N]) -> [Params; 2] {
    [core::array::from_fn(|s| z[s]), core::array::from_fn(|s| z[N + s])]
}

impl<S: ConicSolver> Refiner<'_, S> {
    fn merit(&self, z: &[f64; 2 * N]) -> f64 {
        let p = unflat(z);
        self.inst.worst_kl(&p) + self.penalty * (self.inst.nu - self.inst.joint_reach(&p)).max(0.0)
    }

    fn gradient(&self, z: &[f64; 2 * N], f: impl Fn(&[Params; 2]) -> f64) -> [f64; 2 * N] {
        let h = 1e-7;
        core::array::from_fn(|j| {
            let (mut up, mut down) = (*z, *z);
            up[j] = (z[j] + h).min(1.0);
            down[j] = (z[j] - h).max(0.0);
            (f(&unflat(&up)) - f(&unflat(&down))) / (up[j] - down[j])
        })
    }

    pub fn run(&self, start: [Params; 2]) -> Refined {
        let inst = self.inst;
        let mut z = flat(&start);
        let mut radius: f64 = 0.1;
        let mut iterations = 0;
        let tol = ToleranceSet::default();
        while radius > 1e-9 && iterations < 2000 {
            iterations += 1;
            let p = unflat(&z);
            let kl = [inst.agents[0].kl(&p[0]), inst.agents[1].kl(&p[1])];
            let reach = inst.joint_reach(&p);
            let g0 = self.gradient(&z, |p| inst.agents[0].kl(&p[0]));
            let g1 = self.gradient(&z, |p| inst.agents[1].kl(&p[1]));
            let gr = self.gradient(&z, |p| inst.joint_reach(p));
            // variables: step d (6), level t, slack v
            let (t, v) = (2 * N, 2 * N + 1);
            let mut lp = ConicProgram::new(2 * N + 2);
            lp.linear[t] = 1.0;
            lp.linear[v] = self.penalty;
            let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
            for (i, g) in [g0, g1].iter().enumerate() {
                let range = i * N..(i + 1) * N;
                let mut r: Vec<(usize, f64)> = range.map(|j| (j, g[j])).collect();
                r.push((t, -1.0));
                rows.push((r, -kl[i]));
            }
            let mut r: Vec<(usize, f64)> = (0..2 * N).map(|j| (j, -gr[j])).collect();
            r.push((v, -1.0));
            rows.push((r, reach - inst.nu));
            rows.push((vec![(v, -1.0)], 0.0));
            for j in 0..2 * N {
                rows.push((vec![(j, 1.0)], radius.min(1.0 - z[j])));
                rows.push((vec![(j, -1.0)], radius.min(z[j])));
            }
            let count = rows.len();
            lp.push_block(Cone::Nonnegative(count), rows);
            let sol = match self.solver.solve(&lp, &tol) {
                Ok(s) => s,
                Err(_) => {
                    radius *= 0.5;
                    continue;
                }
            };
            let current = self.merit(&z);
            let predicted = current - (sol.primal[t] + self.penalty * sol.primal[v].max(0.0));
            if predicted <= 1e-13 {
                break;
            }
            let trial: [f64; 2 * N] = core::array::from_fn(|j| (z[j] + sol.primal[j]).clamp(0.0, 1.0));
            let actual = current - self.merit(&trial);
            let ratio = actual / predicted;
            if ratio > 0.1 {
                z = trial;
                let longest = (0..2 * N).map(|j| sol.primal[j].abs()).fold(0.0, f64::max);
                if ratio > 0.75 && longest >= 0.9 * radius {
                    radius = (2.0 * radius).min(0.5);
                }
            } else {
                radius *= 0.25;
            }
        }
        let p = unflat(&z);
        Refined {
            objective: inst.worst_kl(&p),
            violation: (inst.nu - inst.joint_reach(&p)).max(0.0),
            iterations,
        }
    }
}

/// Uniformly random parameters meeting the reach threshold.
pub fn feasible_start(inst: &Instance, rng: &mut impl RngCore) -> Option<[Params; 2]> {
    for _ in 0..200_000 {
        let p = [core::array::from_fn(|_| unit(rng)), core::array::from_fn(|_| unit(rng))];
        if inst.joint_reach(&p) >= inst.nu {
            return Some(p);
        }
    }
    None
}
