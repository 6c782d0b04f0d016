//! Whether a probabilistic bundle-to-slot matrix can be realized as a lottery
//! over deterministic allocations that fill every slot with a distinct bundle.

use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::falling_factorial;
use crate::lp::{decimal, find_feasible, LpScalar};
use crate::{Error, Result, STRUCT_TOL};

/// Largest number of assignments the oracle will enumerate.
pub const ASSIGNMENT_LIMIT: u128 = 1_000_000;

/// `C x K` matrix of per-slot bundle probabilities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbAllocation {
    num_bundles: usize,
    num_slots: usize,
    entries: Vec<f64>,
}

impl ProbAllocation {
    /// Requires entries in `[0, 1]` and row sums at most `1 + 1e-9`.
    pub fn new(num_bundles: usize, num_slots: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != num_bundles * num_slots {
            return Err(Error::Shape(format!(
                "{} entries for a {num_bundles}x{num_slots} matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".into()));
        }
        let s = Self {
            num_bundles,
            num_slots,
            entries,
        };
        if let Some(c) = (0..num_bundles).find(|&c| s.row_sum(c) > 1.0 + STRUCT_TOL) {
            return Err(Error::InvalidArgument(format!(
                "bundle {c} has total probability above 1"
            )));
        }
        Ok(s)
    }

    pub fn num_bundles(&self) -> usize {
        self.num_bundles
    }

    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, c: usize, k: usize) -> f64 {
        self.entries[c * self.num_slots + k]
    }

    pub fn row_sum(&self, c: usize) -> f64 {
        self.entries[c * self.num_slots..(c + 1) * self.num_slots].iter().sum()
    }

    pub fn col_sum(&self, k: usize) -> f64 {
        (0..self.num_bundles).map(|c| self.get(c, k)).sum()
    }
}

/// Probabilities over full assignments; `assignments[x][k]` is the bundle in slot `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotteryDistribution {
    pub assignments: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
}

impl LotteryDistribution {
    /// Expected `C x K` allocation realized by the lottery.
    pub fn reconstruct(&self, num_bundles: usize, num_slots: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_bundles * num_slots];
        for (a, &p) in self.assignments.iter().zip(&self.probs) {
            for (k, &c) in a.iter().enumerate() {
                out[c * num_slots + k] += p;
            }
        }
        out
    }

    /// Largest entrywise gap between the reconstruction and `s`.
    pub fn reconstruction_error(&self, s: &ProbAllocation) -> f64 {
        self.reconstruct(s.num_bundles, s.num_slots)
            .iter()
            .zip(&s.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// All injective slot-to-bundle maps in lexicographic order.
pub fn enumerate_full_assignments(num_bundles: usize, num_slots: usize) -> Result<Vec<Vec<usize>>> {
    if num_bundles < num_slots {
        return Err(Error::InvalidArgument(format!(
            "{num_slots} slots cannot be filled by {num_bundles} bundles"
        )));
    }
    let count = falling_factorial(num_bundles, num_slots);
    if count > ASSIGNMENT_LIMIT {
        return Err(Error::SizeLimit {
            count,
            limit: ASSIGNMENT_LIMIT,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut current = Vec::with_capacity(num_slots);
    let mut used = vec![false; num_bundles];
    fill(num_slots, &mut current, &mut used, &mut out);
    Ok(out)
}

fn fill(k: usize, current: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    for c in 0..used.len() {
        if !used[c] {
            used[c] = true;
            current.push(c);
            fill(k, current, used, out);
            current.pop();
            used[c] = false;
        }
    }
}

/// Unit column sums and row sums at most one, both within `1e-9`.
pub fn necessary_condition(s: &ProbAllocation) -> bool {
    (0..s.num_slots).all(|k| (s.col_sum(k) - 1.0).abs() <= STRUCT_TOL)
        && (0..s.num_bundles).all(|c| s.row_sum(c) <= 1.0 + STRUCT_TOL)
}

/// Solves for lottery weights with one equality per `(bundle, slot)` entry plus
/// normalization. `target` is the row-major `C x K` matrix.
fn solve<T: LpScalar>(
    assignments: &[Vec<usize>],
    num_bundles: usize,
    num_slots: usize,
    target: &[T],
) -> Option<Vec<T>> {
    let x = assignments.len();
    let rows = num_bundles * num_slots + 1;
    let mut a = vec![T::zero(); rows * x];
    for (j, asg) in assignments.iter().enumerate() {
        for (k, &c) in asg.iter().enumerate() {
            a[(c * num_slots + k) * x + j] = T::one();
        }
        a[(rows - 1) * x + j] = T::one();
    }
    let mut b = target.to_vec();
    b.push(T::one());
    find_feasible(&a, &b, rows, x)
}

fn to_distribution<T: LpScalar>(assignments: Vec<Vec<usize>>, weights: Vec<T>) -> LotteryDistribution {
    let (assignments, probs) = assignments
        .into_iter()
        .zip(weights)
        .map(|(a, w)| (a, w.to_f64().max(0.0)))
        .filter(|(_, p)| *p > 0.0)
        .unzip();
    LotteryDistribution { assignments, probs }
}

/// Exact decomposition of a rational matrix. `None` means no lottery exists.
pub fn lottery_decompose_exact(
    num_bundles: usize,
    num_slots: usize,
    entries: &[BigRational],
) -> Result<Option<LotteryDistribution>> {
    if entries.len() != num_bundles * num_slots {
        return Err(Error::Shape("entry count does not match matrix shape".into()));
    }
    let assignments = enumerate_full_assignments(num_bundles, num_slots)?;
    Ok(solve(&assignments, num_bundles, num_slots, entries).map(|w| to_distribution(assignments, w)))
}

/// Floating-point decomposition with tolerance `1e-9` on pivots and residuals.
pub fn lottery_decompose_float(s: &ProbAllocation) -> Result<Option<LotteryDistribution>> {
    let assignments = enumerate_full_assignments(s.num_bundles, s.num_slots)?;
    let dist = solve(&assignments, s.num_bundles, s.num_slots, &s.entries).map(|w| to_distribution(assignments, w));
    Ok(dist.filter(|d| d.reconstruction_error(s) <= STRUCT_TOL))
}

/// Denominator used to recognise decimal grid inputs.
const GRID_DENOMINATOR: i64 = 1_000_000;

fn as_decimal(v: f64) -> Option<BigRational> {
    let scaled = v * GRID_DENOMINATOR as f64;
    let rounded = scaled.round();
    ((scaled - rounded).abs() < 1e-6).then(|| decimal(rounded as i64, GRID_DENOMINATOR))
}

/// Decides lottery feasibility. Inputs whose entries are all multiples of
/// `1e-6` are solved in exact rational arithmetic; anything else uses the
/// floating-point path. Returns `None` when infeasible.
pub fn lottery_decompose(s: &ProbAllocation) -> Result<Option<LotteryDistribution>> {
    let exact: Option<Vec<BigRational>> = s.entries.iter().map(|&v| as_decimal(v)).collect();
    match exact {
        Some(q) => lottery_decompose_exact(s.num_bundles, s.num_slots, &q),
        None => lottery_decompose_float(s),
    }
}

/// Random matrix generators for the feasibility survey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    /// Independent `U[0,1]` entries; rows summing above one are rescaled to one.
    UniformSubstochastic,
    /// Columns drawn uniformly from the simplex, redrawn until every row sum is at most one.
    ColumnStochastic,
    /// A uniformly random full deterministic assignment.
    Hard,
}

impl std::str::FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" | "uniform-substochastic" => Ok(Sampler::UniformSubstochastic),
            "column-stochastic" => Ok(Sampler::ColumnStochastic),
            "hard" => Ok(Sampler::Hard),
            other => Err(Error::InvalidArgument(format!("unknown sampler {other:?}"))),
        }
    }
}

const MAX_REJECTIONS: usize = 100_000;

impl Sampler {
    pub fn sample(self, num_bundles: usize, num_slots: usize, rng: &mut impl Rng) -> Result<ProbAllocation> {
        let (c, k) = (num_bundles, num_slots);
        let entries = match self {
            Sampler::UniformSubstochastic => {
                let mut e: Vec<f64> = (0..c * k).map(|_| rng.gen::<f64>()).collect();
                for row in e.chunks_mut(k) {
                    let sum: f64 = row.iter().sum();
                    if sum > 1.0 {
                        row.iter_mut().for_each(|v| *v /= sum);
                    }
                }
                e
            }
            Sampler::ColumnStochastic => column_stochastic(c, k, rng)?,
            Sampler::Hard => {
                if c < k {
                    return Err(Error::InvalidArgument("fewer bundles than slots".into()));
                }
                let mut bundles: Vec<usize> = (0..c).collect();
                let mut e = vec![0.0; c * k];
                for slot in 0..k {
                    let pick = rng.gen_range(slot..c);
                    bundles.swap(slot, pick);
                    e[bundles[slot] * k + slot] = 1.0;
                }
                e
            }
        };
        ProbAllocation::new(c, k, entries)
    }
}

fn column_stochastic(c: usize, k: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    for _ in 0..MAX_REJECTIONS {
        let mut e = vec![0.0; c * k];
        for slot in 0..k {
            let draws: Vec<f64> = (0..c).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let total: f64 = draws.iter().sum();
            for (b, d) in draws.iter().enumerate() {
                e[b * k + slot] = d / total;
            }
        }
        if e.chunks(k).all(|row| row.iter().sum::<f64>() <= 1.0) {
            return Ok(e);
        }
    }
    Err(Error::Numeric(format!(
        "no column-stochastic {c}x{k} draw with row sums at most one after {MAX_REJECTIONS} attempts"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyResult {
    pub num_bundles: usize,
    pub num_slots: usize,
    pub samples: usize,
    pub infeasible: usize,
    pub infeasible_fraction: f64,
}

/// Fraction of sampled matrices that admit no lottery (floating-point oracle).
pub fn infeasibility_survey(
    num_bundles: usize,
    num_slots: usize,
    num_samples: usize,
    sampler: Sampler,
    seed: u64,
) -> Result<SurveyResult> {
    let assignments = enumerate_full_assignments(num_bundles, num_slots)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut infeasible = 0;
    for _ in 0..num_samples {
        let s = sampler.sample(num_bundles, num_slots, &mut rng)?;
        let feasible = solve(&assignments, num_bundles, num_slots, &s.entries)
            .map(|w| to_distribution(assignments.clone(), w))
            .is_some_and(|d| d.reconstruction_error(&s) <= STRUCT_TOL);
        if !feasible {
            infeasible += 1;
        }
    }
    Ok(SurveyResult {
        num_bundles,
        num_slots,
        samples: num_samples,
        infeasible,
        infeasible_fraction: if num_samples == 0 {
            0.0
        } else {
            infeasible as f64 / num_samples as f64
        },
    })
}

/// Every `C x K` matrix with entries in `{0, 1/steps, ..., 1}` whose rows and
/// columns all sum to at most one, as integer numerators (row-major).
pub fn substochastic_grid(num_bundles: usize, num_slots: usize, steps: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; num_bundles * num_slots];
    let mut col = vec![0u32; num_slots];
    grid_fill(0, num_slots, steps, &mut cur, &mut col, 0, &mut out);
    out
}

fn grid_fill(
    pos: usize,
    k: usize,
    steps: u32,
    cur: &mut [u32],
    col: &mut [u32],
    row_sum: u32,
    out: &mut Vec<Vec<u32>>,
) {
    if pos == cur.len() {
        out.push(cur.to_vec());
        return;
    }
    let slot = pos % k;
    let row_sum = if slot == 0 { 0 } else { row_sum };
    let max = (steps - row_sum).min(steps - col[slot]);
    for v in 0..=max {
        cur[pos] = v;
        col[slot] += v;
        grid_fill(pos + 1, k, steps, cur, col, row_sum + v, out);
        col[slot] -= v;
    }
    cur[pos] = 0;
}
