//! Monte Carlo for the neutral multinomial Wright-Fisher chain, used as an
//! independent check of the polynomial semigroup.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::poly::Poly;
use crate::simplex::SimplexPoint;

const BLOCK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WFChainConfig {
    pub population: u32,
    pub d: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl WFChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(invalid("N", "population must be positive"));
        }
        if self.d == 0 {
            return Err(invalid("d", "dimension must be positive"));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates", "need at least one replicate"));
        }
        Ok(())
    }

    /// Generations corresponding to diffusion time `t`.
    pub fn generations(&self, t: f64) -> u64 {
        (f64::from(self.population) * t).round() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MCEstimate {
    pub value: f64,
    pub std_error: f64,
    pub replicates: usize,
}

/// Estimates for every `(time, function)` pair from one set of paths.
#[derive(Clone, Debug, Serialize)]
pub struct MCTable {
    pub config: WFChainConfig,
    /// Start point actually used: `x0` rounded to the lattice `Z^d / N`.
    pub start: Vec<f64>,
    pub times: Vec<f64>,
    pub generations: Vec<u64>,
    /// `estimates[time][function]`.
    pub estimates: Vec<Vec<MCEstimate>>,
}

/// One multinomial resampling step via conditional binomials; `counts` has
/// `d + 1` entries summing to the population.
pub fn resample<R: rand::Rng + ?Sized>(counts: &mut [u64], rng: &mut R) {
    let total: u64 = counts.iter().sum();
    let mut rem_old = total;
    let mut rem_new = total;
    let last = counts.len() - 1;
    for i in 0..last {
        let old = counts[i];
        let k = if rem_new == 0 || old == 0 {
            0
        } else if old == rem_old {
            rem_new
        } else {
            Binomial::new(rem_new, old as f64 / rem_old as f64)
                .expect("probability in (0, 1)")
                .sample(rng)
        };
        rem_old -= old;
        rem_new -= k;
        counts[i] = k;
    }
    counts[last] = rem_new;
}

#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(&mut self, o: &Self) {
        if o.count == 0.0 {
            return;
        }
        let n = self.count + o.count;
        let delta = o.mean - self.mean;
        self.mean += delta * o.count / n;
        self.m2 += o.m2 + delta * delta * self.count * o.count / n;
        self.count = n;
    }
}

pub fn start_counts(population: u32, x0: &SimplexPoint) -> Vec<u64> {
    let n = u64::from(population);
    let mut c: Vec<u64> = x0.coords().iter().map(|&v| (v * n as f64).round() as u64).collect();
    let mut s: u64 = c.iter().sum();
    while s > n {
        let k = (0..c.len()).max_by_key(|&k| c[k]).expect("nonempty");
        c[k] -= 1;
        s -= 1;
    }
    c.push(n - s);
    c
}

/// Simulates `replicates` independent paths from `x0` and estimates
/// `E f(X_t)` for every function and time. Replicate `r` draws from the
/// ChaCha stream `r` of `seed`, and blocks are merged in a fixed order, so
/// results do not depend on the thread count.
pub fn simulate_expectations(cfg: &WFChainConfig, x0: &SimplexPoint, fs: &[Poly], times: &[f64]) -> Result<MCTable> {
    cfg.validate()?;
    check_len(cfg.d, x0.dim())?;
    for f in fs {
        check_len(cfg.d, f.nvars())?;
    }
    crate::wf1d::check_times(times)?;
    let gens: Vec<u64> = times.iter().map(|&t| cfg.generations(t)).collect();
    let start = start_counts(cfg.population, x0);
    let n = f64::from(cfg.population);
    let blocks = cfg.replicates.div_ceil(BLOCK);
    let per_block: Vec<Vec<Moments>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![Moments::default(); times.len() * fs.len()];
            let mut x = vec![0.0; cfg.d];
            for r in (b * BLOCK)..((b + 1) * BLOCK).min(cfg.replicates) {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(r as u64);
                let mut counts = start.clone();
                let mut done = 0;
                for (ti, &g) in gens.iter().enumerate() {
                    while done < g {
                        if counts.iter().any(|&c| c == u64::from(cfg.population)) {
                            done = g;
                            break;
                        }
                        resample(&mut counts, &mut rng);
                        done += 1;
                    }
                    for k in 0..cfg.d {
                        x[k] = counts[k] as f64 / n;
                    }
                    for (fi, f) in fs.iter().enumerate() {
                        acc[ti * fs.len() + fi].push(f.eval_f64(&x));
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Moments::default(); times.len() * fs.len()];
    for blk in &per_block {
        for (t, b) in total.iter_mut().zip(blk) {
            t.merge(b);
        }
    }
    let estimates = (0..times.len())
        .map(|ti| {
            (0..fs.len())
                .map(|fi| {
                    let m = &total[ti * fs.len() + fi];
                    let var = if m.count > 1.0 { m.m2 / (m.count - 1.0) } else { 0.0 };
                    MCEstimate {
                        value: m.mean,
                        std_error: (var / m.count).sqrt(),
                        replicates: cfg.replicates,
                    }
                })
                .collect()
        })
        .collect();
    Ok(MCTable {
        config: *cfg,
        start: start[..cfg.d].iter().map(|&c| c as f64 / n).collect(),
        times: times.to_vec(),
        generations: gens,
        estimates,
    })
}

pub fn simulate_expectation(cfg: &WFChainConfig, x0: &SimplexPoint, f: &Poly, t: f64) -> Result<MCEstimate> {
    let table = simulate_expectations(cfg, x0, std::slice::from_ref(f), &[t])?;
    Ok(table.estimates[0][0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::rat;

    fn het() -> Poly {
        // x^2 - x
        let mut p = Poly::zero(1);
        p.add_term(vec![2], rat(1, 1));
        p.add_term(vec![1], rat(-1, 1));
        p
    }

    fn cfg(d: usize, population: u32, replicates: usize) -> WFChainConfig {
        WFChainConfig {
            population,
            d,
            replicates,
            seed: 7,
        }
    }

    #[test]
    fn resampling_stays_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = vec![30, 50, 20];
        for _ in 0..500 {
            resample(&mut c, &mut rng);
            assert_eq!(c.iter().sum::<u64>(), 100);
        }
    }

    #[test]
    fn affine_is_a_martingale() {
        let x0 = SimplexPoint::new(vec![0.3, 0.45]).unwrap();
        let mut f = Poly::zero(2);
        f.add_term(vec![1, 0], rat(2, 1));
        f.add_term(vec![0, 1], rat(-1, 1));
        let e = simulate_expectation(&cfg(2, 200, 20_000), &x0, &f, 1.0).unwrap();
        assert!((e.value - 0.15).abs() <= 3.0 * e.std_error, "{e:?}");
        assert!(e.std_error > 0.0);
    }

    #[test]
    fn heterozygosity_decay() {
        let x0 = SimplexPoint::new(vec![0.5]).unwrap();
        let c = cfg(1, 200, 20_000);
        let e = simulate_expectation(&c, &x0, &het(), 1.0).unwrap();
        let chain = -0.25 * (1.0 - 1.0 / 200.0f64).powi(200);
        assert!((e.value - chain).abs() <= 3.0 * e.std_error, "{e:?} vs {chain}");
        let diffusion = -0.25 * (-1.0f64).exp();
        assert!((e.value - diffusion).abs() <= 3.0 * e.std_error + 2.0 / 200.0);
    }

    #[test]
    fn long_time_fixation() {
        let x0 = SimplexPoint::new(vec![0.5]).unwrap();
        let e = simulate_expectation(&cfg(1, 100, 4_000), &x0, &het(), 20.0).unwrap();
        assert!(e.value.abs() <= 3.0 * e.std_error + 1e-12, "{e:?}");
    }

    #[test]
    fn reproducible() {
        let x0 = SimplexPoint::new(vec![0.2]).unwrap();
        let a = simulate_expectation(&cfg(1, 100, 3000), &x0, &het(), 0.5).unwrap();
        let b = simulate_expectation(&cfg(1, 100, 3000), &x0, &het(), 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn start_rounding() {
        let x0 = SimplexPoint::new(vec![0.333, 0.667]).unwrap();
        let c = start_counts(10, &x0);
        assert_eq!(c.iter().sum::<u64>(), 10);
    }
}
