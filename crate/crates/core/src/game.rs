//! Cooperative games over bitmask coalitions and their semivalue attributions.

use std::fmt;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fisher::FisherMatrix;
use crate::linalg::log_det;
use crate::rng::rng_from;

/// Hard cap on the number of players a dense characteristic function may hold.
pub const MAX_PLAYERS: usize = 24;
/// Largest game accepted by the exact enumerators.
pub const MAX_EXACT_PLAYERS: usize = 20;

const MC_CHUNK: usize = 1024;

/// A set of players encoded as a bitmask; bit `i` set means player `i` is a member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Coalition(pub u32);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);

    pub fn grand(n: usize) -> Self {
        Coalition(((1u64 << n) - 1) as u32)
    }

    pub fn singleton(i: usize) -> Self {
        Coalition(1 << i)
    }

    pub fn from_members(members: &[usize]) -> Self {
        Coalition(members.iter().fold(0, |m, &i| m | (1 << i)))
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn with(self, i: usize) -> Self {
        Coalition(self.0 | 1 << i)
    }

    pub fn without(self, i: usize) -> Self {
        Coalition(self.0 & !(1 << i))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..32).filter(move |i| bits >> i & 1 == 1)
    }

    /// All `2^n` coalitions of `n` players in bitmask order.
    pub fn all(n: usize) -> impl Iterator<Item = Coalition> {
        (0..(1u32 << n)).map(Coalition)
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.members().map(|i| (i + 1).to_string()).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

/// Dense characteristic function `v: 2^N → ℝ` with `v(∅) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicFunction {
    n: usize,
    values: Vec<f64>,
    /// Per-coalition Monte-Carlo standard errors, when values are estimates.
    std_errors: Option<Vec<f64>>,
}

impl CharacteristicFunction {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n > MAX_PLAYERS || values.len() != 1usize << n {
            return Err(Error::InvalidGameSize { len: values.len(), max: MAX_PLAYERS });
        }
        if values[0] != 0.0 {
            return Err(Error::InvalidConfig(format!("empty coalition value must be 0, got {}", values[0])));
        }
        Ok(Self { n, values, std_errors: None })
    }

    /// Builds a game from a coalition valuation; the empty coalition is forced to 0.
    pub fn from_fn(n: usize, mut f: impl FnMut(Coalition) -> f64) -> Result<Self> {
        if n > MAX_PLAYERS {
            return Err(Error::InvalidGameSize { len: 1 << n.min(31), max: MAX_PLAYERS });
        }
        let values = Coalition::all(n).map(|s| if s.is_empty() { 0.0 } else { f(s) }).collect();
        Ok(Self { n, values, std_errors: None })
    }

    pub fn with_std_errors(mut self, errors: Vec<f64>) -> Result<Self> {
        if errors.len() != self.values.len() {
            return Err(Error::DimensionMismatch { expected: self.values.len(), found: errors.len() });
        }
        self.std_errors = Some(errors);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn std_errors(&self) -> Option<&[f64]> {
        self.std_errors.as_deref()
    }

    pub fn value(&self, s: Coalition) -> f64 {
        self.values[s.index()]
    }

    pub fn grand_value(&self) -> f64 {
        self.value(Coalition::grand(self.n))
    }

    /// `a·self + b·other`, coalition-wise.
    pub fn linear_combination(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: other.n });
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Self::new(self.n, values)
    }

    /// Adds `c` to every nonempty coalition.
    pub fn shifted(&self, c: f64) -> Self {
        let values = self.values.iter().enumerate().map(|(s, x)| if s == 0 { 0.0 } else { x + c }).collect();
        Self { n: self.n, values, std_errors: self.std_errors.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolutionConcept {
    Shapley,
    Banzhaf,
}

impl SolutionConcept {
    pub fn weights(self, n: usize) -> WeightTable {
        match self {
            SolutionConcept::Shapley => WeightTable::shapley(n),
            SolutionConcept::Banzhaf => WeightTable::banzhaf(n),
        }
    }
}

/// How an attribution was obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Exact,
    MonteCarlo { permutations: usize, seed: u64 },
}

/// Per-player values `φ_i` of a game under a solution concept.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub values: Vec<f64>,
    pub concept: SolutionConcept,
    pub method: Method,
    /// Standard errors: sampling error for MC estimates, or propagated
    /// valuation noise when the game itself carries Monte-Carlo errors.
    pub std_errors: Option<Vec<f64>>,
}

impl Attribution {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Semivalue weights `w_s` for coalitions `S ∌ i` of size `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    weights: Vec<f64>,
}

impl WeightTable {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    /// `s!(n−s−1)!/n! = 1 / (n · C(n−1, s))`, with the binomial kept exact.
    pub fn shapley(n: usize) -> Self {
        let mut weights = Vec::with_capacity(n);
        let mut binom: u64 = 1;
        for s in 0..n {
            weights.push(1.0 / (n as f64 * binom as f64));
            binom = binom * (n - 1 - s) as u64 / (s + 1) as u64;
        }
        Self { weights }
    }

    pub fn banzhaf(n: usize) -> Self {
        let w = 0.5f64.powi(n as i32 - 1);
        Self { weights: vec![w; n] }
    }

    pub fn weight(&self, size: usize) -> f64 {
        self.weights[size]
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }
}

fn check_exact(v: &CharacteristicFunction) -> Result<()> {
    if v.n() > MAX_EXACT_PLAYERS {
        return Err(Error::TooManyPlayers { n: v.n(), max: MAX_EXACT_PLAYERS });
    }
    Ok(())
}

/// Weighted marginal-contribution sum `φ_i = Σ_{S ⊆ N∖{i}} w_{|S|} [v(S∪{i}) − v(S)]`.
pub fn semivalue(v: &CharacteristicFunction, table: &WeightTable) -> Result<Vec<f64>> {
    check_exact(v)?;
    let n = v.n();
    if table.n() != n {
        return Err(Error::DimensionMismatch { expected: n, found: table.n() });
    }
    Ok((0..n)
        .map(|i| {
            Coalition::all(n)
                .filter(|s| !s.contains(i))
                .map(|s| table.weight(s.len()) * (v.value(s.with(i)) - v.value(s)))
                .sum()
        })
        .collect())
}

fn propagated_errors(v: &CharacteristicFunction, table: &WeightTable) -> Option<Vec<f64>> {
    let se = v.std_errors()?;
    let n = v.n();
    Some(
        (0..n)
            .map(|i| {
                Coalition::all(n)
                    .filter(|s| !s.contains(i))
                    .map(|s| table.weight(s.len()).powi(2) * (se[s.with(i).index()].powi(2) + se[s.index()].powi(2)))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect(),
    )
}

fn exact(v: &CharacteristicFunction, concept: SolutionConcept) -> Result<Attribution> {
    let table = concept.weights(v.n());
    let values = semivalue(v, &table)?;
    Ok(Attribution { values, concept, method: Method::Exact, std_errors: propagated_errors(v, &table) })
}

/// Exact Shapley value by enumerating all coalitions.
pub fn shapley_exact(v: &CharacteristicFunction) -> Result<Attribution> {
    exact(v, SolutionConcept::Shapley)
}

/// Exact Banzhaf value by enumerating all coalitions.
pub fn banzhaf(v: &CharacteristicFunction) -> Result<Attribution> {
    exact(v, SolutionConcept::Banzhaf)
}

/// Permutation-sampling Shapley estimate.
///
/// Permutations are processed in fixed-size chunks, each seeded from
/// `(seed, chunk index)` and reduced in chunk order, so the result does not
/// depend on the number of worker threads.
pub fn shapley_mc(v: &CharacteristicFunction, permutations: usize, seed: u64) -> Result<Attribution> {
    if permutations == 0 {
        return Err(Error::TooFewSamples { needed: 1, found: 0 });
    }
    let n = v.n();
    let chunks = permutations.div_ceil(MC_CHUNK);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = MC_CHUNK.min(permutations - c * MC_CHUNK);
            let mut rng = rng_from(seed, &[c as u64]);
            let mut order: Vec<usize> = (0..n).collect();
            let (mut sum, mut sum_sq) = (vec![0.0; n], vec![0.0; n]);
            for _ in 0..count {
                order.shuffle(&mut rng);
                let mut s = Coalition::EMPTY;
                let mut prev = 0.0;
                for &p in &order {
                    s = s.with(p);
                    let cur = v.value(s);
                    let m = cur - prev;
                    sum[p] += m;
                    sum_sq[p] += m * m;
                    prev = cur;
                }
            }
            (sum, sum_sq)
        })
        .collect();
    let (mut sum, mut sum_sq) = (vec![0.0; n], vec![0.0; n]);
    for (s, s2) in &partials {
        for i in 0..n {
            sum[i] += s[i];
            sum_sq[i] += s2[i];
        }
    }
    let p = permutations as f64;
    let values: Vec<f64> = sum.iter().map(|s| s / p).collect();
    let std_errors = values
        .iter()
        .zip(&sum_sq)
        .map(|(mean, s2)| {
            if permutations < 2 {
                return 0.0;
            }
            let var = ((s2 / p - mean * mean) * p / (p - 1.0)).max(0.0);
            (var / p).sqrt()
        })
        .collect();
    Ok(Attribution {
        values,
        concept: SolutionConcept::Shapley,
        method: Method::MonteCarlo { permutations, seed },
        std_errors: Some(std_errors),
    })
}

/// The game `V(S) = ½ ln|Σ_{i∈S} I_i|`, `V(∅) = 0`.
pub fn limiting_game(fishers: &[FisherMatrix]) -> Result<CharacteristicFunction> {
    let n = fishers.len();
    if n == 0 || n > MAX_PLAYERS {
        return Err(Error::InvalidGameSize { len: n, max: MAX_PLAYERS });
    }
    let k = fishers[0].dim();
    if let Some(f) = fishers.iter().find(|f| f.dim() != k) {
        return Err(Error::DimensionMismatch { expected: k, found: f.dim() });
    }
    let mut values = vec![0.0; 1 << n];
    for s in Coalition::all(n).skip(1) {
        let sum = s.members().fold(DMatrix::zeros(k, k), |acc, i| acc + fishers[i].matrix());
        values[s.index()] =
            0.5 * log_det(&sum).map_err(|e| Error::SingularCoalition { coalition: s.0, reason: e.to_string() })?;
    }
    CharacteristicFunction::new(n, values)
}

/// `Δ_ij(v) = φ(i; v) − φ(j; v)` under an exact solution concept.
pub fn delta_pair(v: &CharacteristicFunction, i: usize, j: usize, concept: SolutionConcept) -> Result<f64> {
    let n = v.n();
    for idx in [i, j] {
        if idx >= n {
            return Err(Error::InvalidPlayer { index: idx, n });
        }
    }
    if i == j {
        return Err(Error::InvalidPlayer { index: j, n });
    }
    let phi = exact(v, concept)?;
    Ok(phi.values[i] - phi.values[j])
}
