//! Linear-chain CRF: path scoring, forward-algorithm log-partition,
//! negative log-likelihood with analytic gradients, and Viterbi decoding.
//!
//! Structurally invalid BIO moves (start→I-x, O→I-x, B-y→I-x and I-y→I-x for
//! y≠x) are pinned to −∞ and masked out of every update, so Viterbi output
//! always decodes to well-formed BIO without repair.

use ndarray::{Array1, Array2, ArrayView2};

use crate::corpus::{BioLabel, LabelSet};

#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    /// K×K scores, from-label → to-label.
    pub transitions: Array2<f64>,
    pub start: Array1<f64>,
    pub end: Array1<f64>,
    allowed_transitions: Array2<bool>,
    allowed_start: Array1<bool>,
}

/// Gradients of the NLL with respect to every CRF parameter block.
#[derive(Debug, Clone)]
pub struct CrfGradients {
    pub emissions: Array2<f64>,
    pub transitions: Array2<f64>,
    pub start: Array1<f64>,
    pub end: Array1<f64>,
}

impl CrfParams {
    /// All transitions allowed; scores start at zero.
    pub fn unconstrained(k: usize) -> Self {
        CrfParams {
            transitions: Array2::zeros((k, k)),
            start: Array1::zeros(k),
            end: Array1::zeros(k),
            allowed_transitions: Array2::from_elem((k, k), true),
            allowed_start: Array1::from_elem(k, true),
        }
    }

    /// Zero scores with BIO-structural pinning derived from the label names.
    /// An `I-x` may only follow `B-x` or `I-x`; nothing else is constrained.
    pub fn bio(label_set: &LabelSet) -> Self {
        let k = label_set.len();
        let mut params = CrfParams::unconstrained(k);
        for (to, to_name) in label_set.names().iter().enumerate() {
            if let Some(BioLabel::Inside(kind)) = BioLabel::parse(to_name) {
                params.allowed_start[to] = false;
                params.start[to] = f64::NEG_INFINITY;
                for (from, from_name) in label_set.names().iter().enumerate() {
                    let ok = matches!(
                        BioLabel::parse(from_name),
                        Some(BioLabel::Begin(f)) | Some(BioLabel::Inside(f)) if f == kind
                    );
                    if !ok {
                        params.allowed_transitions[(from, to)] = false;
                        params.transitions[(from, to)] = f64::NEG_INFINITY;
                    }
                }
            }
        }
        params
    }

    pub fn num_labels(&self) -> usize {
        self.start.len()
    }

    pub fn transition_allowed(&self, from: usize, to: usize) -> bool {
        self.allowed_transitions[(from, to)]
    }

    pub fn start_allowed(&self, label: usize) -> bool {
        self.allowed_start[label]
    }

    /// Path score: start + emissions along the path + transitions + end.
    /// Invalid sequences hit a pinned −∞ entry and score −∞.
    pub fn score(&self, emissions: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
        assert_eq!(emissions.nrows(), labels.len());
        assert_eq!(emissions.ncols(), self.num_labels());
        let mut s = self.start[labels[0]] + emissions[(0, labels[0])];
        for t in 1..labels.len() {
            s = s + self.transitions[(labels[t - 1], labels[t])];
            s = s + emissions[(t, labels[t])];
        }
        s + self.end[labels[labels.len() - 1]]
    }

    /// log Σ over all K^T paths of exp(score), by the forward recursion.
    pub fn log_partition(&self, emissions: ArrayView2<'_, f64>) -> f64 {
        let alpha = self.forward(emissions);
        let k = self.num_labels();
        let last = alpha.nrows() - 1;
        log_sum_exp((0..k).map(|y| alpha[(last, y)] + self.end[y]))
    }

    fn forward(&self, emissions: ArrayView2<'_, f64>) -> Array2<f64> {
        let t_len = emissions.nrows();
        let k = self.num_labels();
        assert!(t_len >= 1);
        assert_eq!(emissions.ncols(), k);
        let mut alpha = Array2::from_elem((t_len, k), f64::NEG_INFINITY);
        for y in 0..k {
            alpha[(0, y)] = self.start[y] + emissions[(0, y)];
        }
        for t in 1..t_len {
            for y in 0..k {
                let v = log_sum_exp(
                    (0..k).map(|prev| alpha[(t - 1, prev)] + self.transitions[(prev, y)]),
                );
                alpha[(t, y)] = v + emissions[(t, y)];
            }
        }
        alpha
    }

    fn backward(&self, emissions: ArrayView2<'_, f64>) -> Array2<f64> {
        let t_len = emissions.nrows();
        let k = self.num_labels();
        let mut beta = Array2::from_elem((t_len, k), f64::NEG_INFINITY);
        for y in 0..k {
            beta[(t_len - 1, y)] = self.end[y];
        }
        for t in (0..t_len - 1).rev() {
            for y in 0..k {
                beta[(t, y)] = log_sum_exp((0..k).map(|next| {
                    self.transitions[(y, next)] + emissions[(t + 1, next)] + beta[(t + 1, next)]
                }));
            }
        }
        beta
    }

    /// Negative log-likelihood of the gold path and its gradients
    /// (marginal expectations minus indicator counts). Gradients of pinned
    /// entries are identically zero.
    pub fn nll(
        &self,
        emissions: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> (f64, CrfGradients) {
        let t_len = emissions.nrows();
        let k = self.num_labels();
        assert_eq!(labels.len(), t_len);

        let alpha = self.forward(emissions);
        let beta = self.backward(emissions);
        let log_z = log_sum_exp((0..k).map(|y| alpha[(t_len - 1, y)] + self.end[y]));
        let loss = log_z - self.score(emissions, labels);

        let mut d_em = Array2::zeros((t_len, k));
        for t in 0..t_len {
            for y in 0..k {
                d_em[(t, y)] = (alpha[(t, y)] + beta[(t, y)] - log_z).exp();
            }
            d_em[(t, labels[t])] -= 1.0;
        }

        let mut d_trans = Array2::zeros((k, k));
        for t in 0..t_len - 1 {
            for from in 0..k {
                for to in 0..k {
                    if !self.allowed_transitions[(from, to)] {
                        continue;
                    }
                    let lp = alpha[(t, from)]
                        + self.transitions[(from, to)]
                        + emissions[(t + 1, to)]
                        + beta[(t + 1, to)]
                        - log_z;
                    d_trans[(from, to)] += lp.exp();
                }
            }
            d_trans[(labels[t], labels[t + 1])] -= 1.0;
        }

        let mut d_start = Array1::zeros(k);
        for y in 0..k {
            if self.allowed_start[y] {
                d_start[y] = (alpha[(0, y)] + beta[(0, y)] - log_z).exp();
            }
        }
        d_start[labels[0]] -= 1.0;

        let mut d_end = Array1::zeros(k);
        for y in 0..k {
            d_end[y] = (alpha[(t_len - 1, y)] + self.end[y] - log_z).exp();
        }
        d_end[labels[t_len - 1]] -= 1.0;

        (
            loss,
            CrfGradients {
                emissions: d_em,
                transitions: d_trans,
                start: d_start,
                end: d_end,
            },
        )
    }

    /// Argmax-scoring label sequence and its score. Ties break toward the
    /// lowest label index.
    pub fn viterbi(&self, emissions: ArrayView2<'_, f64>) -> (Vec<usize>, f64) {
        let t_len = emissions.nrows();
        let k = self.num_labels();
        assert!(t_len >= 1);
        assert_eq!(emissions.ncols(), k);

        let mut delta = Array2::from_elem((t_len, k), f64::NEG_INFINITY);
        let mut back = Array2::zeros((t_len, k));
        for y in 0..k {
            delta[(0, y)] = self.start[y] + emissions[(0, y)];
        }
        for t in 1..t_len {
            for y in 0..k {
                let mut best_prev = 0usize;
                let mut best = f64::NEG_INFINITY;
                for prev in 0..k {
                    let v = delta[(t - 1, prev)] + self.transitions[(prev, y)];
                    if v > best {
                        best = v;
                        best_prev = prev;
                    }
                }
                delta[(t, y)] = best + emissions[(t, y)];
                back[(t, y)] = best_prev;
            }
        }

        let mut best_last = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for y in 0..k {
            let v = delta[(t_len - 1, y)] + self.end[y];
            if v > best_score {
                best_score = v;
                best_last = y;
            }
        }

        let mut path = vec![0usize; t_len];
        path[t_len - 1] = best_last;
        for t in (1..t_len).rev() {
            path[t - 1] = back[(t, path[t])];
        }
        (path, best_score)
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Brute-force references over all K^T paths, accumulating additions in
    //! the same order as the implementation so scores compare exactly.

    use super::CrfParams;
    use ndarray::ArrayView2;

    pub fn all_paths(t_len: usize, k: usize) -> Vec<Vec<usize>> {
        let mut paths = vec![vec![]];
        for _ in 0..t_len {
            paths = paths
                .into_iter()
                .flat_map(|p| {
                    (0..k).map(move |y| {
                        let mut q = p.clone();
                        q.push(y);
                        q
                    })
                })
                .collect();
        }
        paths
    }

    pub fn path_score(crf: &CrfParams, emissions: ArrayView2<'_, f64>, path: &[usize]) -> f64 {
        let mut s = crf.start[path[0]] + emissions[(0, path[0])];
        for t in 1..path.len() {
            s = s + crf.transitions[(path[t - 1], path[t])];
            s = s + emissions[(t, path[t])];
        }
        s + crf.end[path[path.len() - 1]]
    }

    pub fn enumerate_log_partition(crf: &CrfParams, emissions: ArrayView2<'_, f64>) -> f64 {
        let scores: Vec<f64> = all_paths(emissions.nrows(), crf.num_labels())
            .iter()
            .map(|p| path_score(crf, emissions, p))
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
    }

    pub fn enumerate_max(crf: &CrfParams, emissions: ArrayView2<'_, f64>) -> f64 {
        all_paths(emissions.nrows(), crf.num_labels())
            .iter()
            .map(|p| path_score(crf, emissions, p))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}
