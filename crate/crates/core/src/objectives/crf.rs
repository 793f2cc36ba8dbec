//! Linear-chain CRF over the three collapsed BIO classes.

use serde::{Deserialize, Serialize};

use crate::corpus::NUM_CLASSES as K;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    /// `transitions[i][j]` scores moving from class `i` to class `j`.
    pub transitions: [[f64; K]; K],
    pub start: [f64; K],
    pub stop: [f64; K],
}

impl CrfParams {
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.transitions.iter().flatten().chain(&self.start).chain(&self.stop)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.transitions.iter_mut().flatten().chain(self.start.iter_mut()).chain(self.stop.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

fn logsumexp(xs: &[f64; K]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn check(emissions: &[[f64; K]]) -> Result<()> {
    if emissions.is_empty() {
        return Err(Error::EmptyInput("CRF sequence"));
    }
    Ok(())
}

/// Unnormalized score of one tag path.
pub fn crf_path_score(emissions: &[[f64; K]], crf: &CrfParams, path: &[usize]) -> f64 {
    let mut score = crf.start[path[0]] + crf.stop[path[path.len() - 1]];
    for (t, &tag) in path.iter().enumerate() {
        score += emissions[t][tag];
        if t > 0 {
            score += crf.transitions[path[t - 1]][tag];
        }
    }
    score
}

fn forward_table(emissions: &[[f64; K]], crf: &CrfParams) -> Vec<[f64; K]> {
    let mut alpha = Vec::with_capacity(emissions.len());
    alpha.push(std::array::from_fn(|j| crf.start[j] + emissions[0][j]));
    for e in &emissions[1..] {
        let prev = alpha.last().unwrap();
        let next = std::array::from_fn(|j| logsumexp(&std::array::from_fn(|i| prev[i] + crf.transitions[i][j])) + e[j]);
        alpha.push(next);
    }
    alpha
}

/// `log Σ_paths exp(score)` by the forward recursion.
pub fn log_partition(emissions: &[[f64; K]], crf: &CrfParams) -> Result<f64> {
    check(emissions)?;
    let alpha = forward_table(emissions, crf);
    let last = alpha.last().unwrap();
    Ok(logsumexp(&std::array::from_fn(|j| last[j] + crf.stop[j])))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfOutput {
    pub loss: f64,
    pub log_z: f64,
    pub d_emissions: Vec<[f64; K]>,
    pub d_crf: CrfParams,
}

/// Negative log-likelihood of `gold` with gradients from forward-backward
/// marginals.
pub fn crf_nll(emissions: &[[f64; K]], crf: &CrfParams, gold: &[usize]) -> Result<CrfOutput> {
    check(emissions)?;
    if emissions.len() != gold.len() {
        return Err(Error::Contract(format!("{} emissions for {} gold tags", emissions.len(), gold.len())));
    }
    if let Some(&g) = gold.iter().find(|&&g| g >= K) {
        return Err(Error::Contract(format!("class index {g} out of range")));
    }
    let n = emissions.len();
    let alpha = forward_table(emissions, crf);
    let log_z = logsumexp(&std::array::from_fn(|j| alpha[n - 1][j] + crf.stop[j]));

    let mut beta = vec![[0.0; K]; n];
    beta[n - 1] = crf.stop;
    for t in (0..n - 1).rev() {
        beta[t] = std::array::from_fn(|i| {
            logsumexp(&std::array::from_fn(|j| crf.transitions[i][j] + emissions[t + 1][j] + beta[t + 1][j]))
        });
    }

    let mut d_emissions = vec![[0.0; K]; n];
    let mut d_crf = CrfParams::default();
    for t in 0..n {
        for j in 0..K {
            d_emissions[t][j] = (alpha[t][j] + beta[t][j] - log_z).exp();
        }
    }
    d_crf.start = d_emissions[0];
    d_crf.stop = d_emissions[n - 1];
    for t in 0..n - 1 {
        for i in 0..K {
            for j in 0..K {
                d_crf.transitions[i][j] +=
                    (alpha[t][i] + crf.transitions[i][j] + emissions[t + 1][j] + beta[t + 1][j] - log_z).exp();
            }
        }
    }

    // subtract the gold path's feature counts
    for (t, &g) in gold.iter().enumerate() {
        d_emissions[t][g] -= 1.0;
        if t > 0 {
            d_crf.transitions[gold[t - 1]][g] -= 1.0;
        }
    }
    d_crf.start[gold[0]] -= 1.0;
    d_crf.stop[gold[n - 1]] -= 1.0;

    Ok(CrfOutput { loss: log_z - crf_path_score(emissions, crf, gold), log_z, d_emissions, d_crf })
}

/// Highest-scoring path. Ties go to the lowest class index.
pub fn crf_viterbi(emissions: &[[f64; K]], crf: &CrfParams) -> Result<Vec<usize>> {
    check(emissions)?;
    let n = emissions.len();
    let argmax = |xs: [f64; K]| {
        let mut best = 0;
        for k in 1..K {
            if xs[k] > xs[best] {
                best = k;
            }
        }
        (best, xs[best])
    };

    let mut delta: [f64; K] = std::array::from_fn(|j| crf.start[j] + emissions[0][j]);
    let mut back = Vec::with_capacity(n.saturating_sub(1));
    for e in &emissions[1..] {
        let mut ptr = [0usize; K];
        let next = std::array::from_fn(|j| {
            let (i, s) = argmax(std::array::from_fn(|i| delta[i] + crf.transitions[i][j]));
            ptr[j] = i;
            s + e[j]
        });
        back.push(ptr);
        delta = next;
    }
    let (mut tag, _) = argmax(std::array::from_fn(|j| delta[j] + crf.stop[j]));
    let mut path = vec![tag; n];
    for t in (1..n).rev() {
        tag = back[t - 1][tag];
        path[t - 1] = tag;
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_potentials() {
        let out = crf_nll(&[[0.0; K]; 2], &CrfParams::default(), &[0, 2]).unwrap();
        assert!((out.log_z - 9f64.ln()).abs() < 1e-12);
        assert!((out.loss - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_potentials_decode_to_lowest_index() {
        let path = crf_viterbi(&[[0.0; K]; 4], &CrfParams::default()).unwrap();
        assert_eq!(path, vec![0, 0, 0, 0]);
    }

    #[test]
    fn peaked_emissions_decode_per_token() {
        let em = [[9.0, 0.0, 0.0], [0.0, 0.0, 9.0], [0.0, 9.0, 0.0]];
        assert_eq!(crf_viterbi(&em, &CrfParams::default()).unwrap(), vec![0, 2, 1]);
    }

    #[test]
    fn transitions_override_weak_emissions() {
        let mut crf = CrfParams::default();
        crf.transitions[2][1] = -100.0; // O -> I forbidden
        let em = [[0.0, 0.0, 1.0], [0.5, 1.0, 0.0]];
        assert_eq!(crf_viterbi(&em, &crf).unwrap(), vec![2, 0]);
    }

    #[test]
    fn empty_sequence() {
        assert!(matches!(crf_nll(&[], &CrfParams::default(), &[]), Err(Error::EmptyInput(_))));
        assert!(matches!(crf_viterbi(&[], &CrfParams::default()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn marginals_sum_to_one() {
        let em = [[0.3, -1.2, 0.8], [1.1, 0.1, -0.4], [0.0, 0.7, 0.2]];
        let mut crf = CrfParams::default();
        crf.transitions[0][1] = 1.5;
        crf.start[2] = 0.4;
        let out = crf_nll(&em, &crf, &[0, 1, 2]).unwrap();
        for (t, row) in out.d_emissions.iter().enumerate() {
            // marginals minus one-hot sum to zero
            assert!(row.iter().sum::<f64>().abs() < 1e-12, "position {t}");
        }
    }
}
