//! Random forests of CART trees with out-of-bag error.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForestKind {
    Regression,
    /// Labels are small nonnegative integers stored as floats.
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestOptions {
    pub ntrees: usize,
    /// Candidate features per split; defaults to p/3 (regression) or sqrt(p).
    pub mtry: Option<usize>,
    /// Nodes this small are not split; defaults to 5 (regression) or 1.
    pub min_node_size: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for ForestOptions {
    fn default() -> Self {
        Self { ntrees: 100, mtry: None, min_node_size: None, seed: 0, execution: Execution::Parallel }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut k = 0usize;
        loop {
            match &self.nodes[k] {
                Node::Leaf(v) => return *v,
                Node::Split { feature, threshold, left, right } => {
                    k = if row[*feature as usize] <= *threshold { *left } else { *right } as usize;
                }
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestFit {
    pub kind: ForestKind,
    pub trees: Vec<Tree>,
    pub mtry: usize,
    pub ntrees: usize,
    /// Out-of-bag prediction per training row; `None` if the row was in every bootstrap sample.
    pub oob_predictions: Vec<Option<f64>>,
    /// OOB MSE over var(y) for regression; OOB error over the mode's error for classification.
    pub oob_nmse: f64,
    n_classes: usize,
}

impl ForestFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self.kind {
            ForestKind::Regression => {
                self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
            }
            ForestKind::Classification => {
                let mut votes = vec![0usize; self.n_classes.max(1)];
                for t in &self.trees {
                    votes[t.predict(row) as usize] += 1;
                }
                argmax(&votes) as f64
            }
        }
    }
}

fn argmax(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &v) in counts.iter().enumerate() {
        if v > counts[best] {
            best = c;
        }
    }
    best
}

struct Builder<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    kind: ForestKind,
    n_classes: usize,
    mtry: usize,
    min_node: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        match self.kind {
            ForestKind::Regression => idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64,
            ForestKind::Classification => {
                let mut counts = vec![0usize; self.n_classes];
                for &i in idx {
                    counts[self.y[i] as usize] += 1;
                }
                argmax(&counts) as f64
            }
        }
    }

    fn is_pure(&self, idx: &[usize]) -> bool {
        let first = self.y[idx[0]];
        idx.iter().all(|&i| self.y[i] == first)
    }

    fn best_split<R: Rng>(&self, idx: &[usize], rng: &mut R, buf: &mut Vec<(f64, f64)>) -> Option<BestSplit> {
        let p = self.x.ncols();
        let n = idx.len();
        let mut best: Option<BestSplit> = None;
        let parent_score = self.parent_score(idx);
        for f in sample(rng, p, self.mtry.min(p)).into_iter() {
            let col = self.x.column(f);
            buf.clear();
            buf.extend(idx.iter().map(|&i| (col[i], self.y[i])));
            buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if buf[0].0 == buf[n - 1].0 {
                continue;
            }
            let candidate = match self.kind {
                ForestKind::Regression => {
                    let total: f64 = buf.iter().map(|v| v.1).sum();
                    let mut left = 0.0;
                    let mut found: Option<(f64, usize)> = None;
                    for k in 0..n - 1 {
                        left += buf[k].1;
                        if buf[k].0 == buf[k + 1].0 {
                            continue;
                        }
                        let nl = (k + 1) as f64;
                        let nr = (n - k - 1) as f64;
                        let right = total - left;
                        let score = left * left / nl + right * right / nr;
                        if found.map_or(true, |(s, _)| score > s) {
                            found = Some((score, k));
                        }
                    }
                    found
                }
                ForestKind::Classification => {
                    let mut total = vec![0.0; self.n_classes];
                    for v in buf.iter() {
                        total[v.1 as usize] += 1.0;
                    }
                    let mut left = vec![0.0; self.n_classes];
                    let mut found: Option<(f64, usize)> = None;
                    for k in 0..n - 1 {
                        left[buf[k].1 as usize] += 1.0;
                        if buf[k].0 == buf[k + 1].0 {
                            continue;
                        }
                        let nl = (k + 1) as f64;
                        let nr = (n - k - 1) as f64;
                        let (mut sl, mut sr) = (0.0, 0.0);
                        for c in 0..self.n_classes {
                            sl += left[c] * left[c];
                            let r = total[c] - left[c];
                            sr += r * r;
                        }
                        let score = sl / nl + sr / nr;
                        if found.map_or(true, |(s, _)| score > s) {
                            found = Some((score, k));
                        }
                    }
                    found
                }
            };
            if let Some((score, k)) = candidate {
                if score > parent_score + 1e-12 * parent_score.abs().max(1.0)
                    && best.as_ref().map_or(true, |b| score > b.score)
                {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: 0.5 * (buf[k].0 + buf[k + 1].0),
                        score,
                    });
                }
            }
        }
        best
    }

    /// Score of leaving the node unsplit, on the same scale as split scores.
    fn parent_score(&self, idx: &[usize]) -> f64 {
        let n = idx.len() as f64;
        match self.kind {
            ForestKind::Regression => {
                let s: f64 = idx.iter().map(|&i| self.y[i]).sum();
                s * s / n
            }
            ForestKind::Classification => {
                let mut counts = vec![0.0; self.n_classes];
                for &i in idx {
                    counts[self.y[i] as usize] += 1.0;
                }
                counts.iter().map(|c| c * c).sum::<f64>() / n
            }
        }
    }

    fn grow<R: Rng>(&self, sample_idx: Vec<usize>, rng: &mut R) -> Tree {
        let mut nodes: Vec<Node> = vec![Node::Leaf(0.0)];
        let mut stack: Vec<(usize, Vec<usize>)> = vec![(0, sample_idx)];
        let mut buf = Vec::new();
        while let Some((slot, idx)) = stack.pop() {
            let split = if idx.len() <= self.min_node || self.is_pure(&idx) {
                None
            } else {
                self.best_split(&idx, rng, &mut buf)
            };
            match split {
                None => nodes[slot] = Node::Leaf(self.leaf_value(&idx)),
                Some(b) => {
                    let col = self.x.column(b.feature);
                    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| col[i] <= b.threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    nodes.push(Node::Leaf(0.0));
                    nodes[slot] = Node::Split {
                        feature: b.feature as u32,
                        threshold: b.threshold,
                        left: left as u32,
                        right: left as u32 + 1,
                    };
                    stack.push((left + 1, r));
                    stack.push((left, l));
                }
            }
        }
        Tree { nodes }
    }
}

/// Fits a random forest on the columns of `x`.
pub fn fit_forest(x: &DMatrix<f64>, y: &[f64], kind: ForestKind, opts: &ForestOptions) -> Result<ForestFit> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n || n == 0 {
        return Err(Error::Validation(format!("forest needs matching nonempty data ({n} rows, {} labels)", y.len())));
    }
    if opts.ntrees == 0 {
        return Err(Error::Config("ntrees must be at least 1".into()));
    }
    let n_classes = match kind {
        ForestKind::Classification => {
            if y.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
                return Err(Error::Validation("class labels must be nonnegative integers".into()));
            }
            y.iter().fold(0.0f64, |m, &v| m.max(v)) as usize + 1
        }
        ForestKind::Regression => 0,
    };
    let mtry = opts
        .mtry
        .unwrap_or(match kind {
            ForestKind::Regression => p / 3,
            ForestKind::Classification => (p as f64).sqrt().floor() as usize,
        })
        .clamp(1, p.max(1));
    let min_node = opts.min_node_size.unwrap_or(match kind {
        ForestKind::Regression => 5,
        ForestKind::Classification => 1,
    });

    let constant = y.iter().all(|&v| v == y[0]);
    if constant || p == 0 {
        let value = match kind {
            ForestKind::Regression if constant => y[0],
            ForestKind::Regression => y.iter().sum::<f64>() / n as f64,
            ForestKind::Classification => {
                let mut counts = vec![0usize; n_classes];
                for &v in y {
                    counts[v as usize] += 1;
                }
                argmax(&counts) as f64
            }
        };
        return Ok(ForestFit {
            kind,
            trees: vec![Tree { nodes: vec![Node::Leaf(value)] }],
            mtry,
            ntrees: opts.ntrees,
            oob_predictions: vec![Some(value); n],
            oob_nmse: if constant { 0.0 } else { 1.0 },
            n_classes,
        });
    }

    let builder = Builder { x, y, kind, n_classes, mtry, min_node };
    let grown: Vec<(Tree, Vec<bool>)> = opts.execution.map_range(opts.ntrees, |t| {
        let mut rng = substream(opts.seed, &[t as u64]);
        let mut in_bag = vec![false; n];
        let idx: Vec<usize> = (0..n)
            .map(|_| {
                let i = rng.gen_range(0..n);
                in_bag[i] = true;
                i
            })
            .collect();
        (builder.grow(idx, &mut rng), in_bag)
    });

    let mut sums = vec![0.0; n];
    let mut votes = vec![vec![0usize; n_classes]; if kind == ForestKind::Classification { n } else { 0 }];
    let mut counts = vec![0usize; n];
    let mut row = vec![0.0; p];
    for (tree, in_bag) in &grown {
        for i in (0..n).filter(|&i| !in_bag[i]) {
            for j in 0..p {
                row[j] = x[(i, j)];
            }
            let v = tree.predict(&row);
            counts[i] += 1;
            match kind {
                ForestKind::Regression => sums[i] += v,
                ForestKind::Classification => votes[i][v as usize] += 1,
            }
        }
    }
    let oob_predictions: Vec<Option<f64>> = (0..n)
        .map(|i| {
            (counts[i] > 0).then(|| match kind {
                ForestKind::Regression => sums[i] / counts[i] as f64,
                ForestKind::Classification => argmax(&votes[i]) as f64,
            })
        })
        .collect();
    let oob_nmse = oob_error(y, &oob_predictions, kind, n_classes);
    Ok(ForestFit {
        kind,
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        mtry,
        ntrees: opts.ntrees,
        oob_predictions,
        oob_nmse,
        n_classes,
    })
}

fn oob_error(y: &[f64], oob: &[Option<f64>], kind: ForestKind, n_classes: usize) -> f64 {
    let pairs: Vec<(f64, f64)> = y.iter().zip(oob).filter_map(|(&a, b)| b.map(|b| (a, b))).collect();
    if pairs.is_empty() {
        return 0.0;
    }
    let m = pairs.len() as f64;
    match kind {
        ForestKind::Regression => {
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64;
            if var <= 0.0 {
                return 0.0;
            }
            pairs.iter().map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m / var
        }
        ForestKind::Classification => {
            let mut counts = vec![0usize; n_classes];
            for &v in y {
                counts[v as usize] += 1;
            }
            let baseline = 1.0 - counts[argmax(&counts)] as f64 / y.len() as f64;
            if baseline <= 0.0 {
                return 0.0;
            }
            let wrong = pairs.iter().filter(|(a, b)| a != b).count() as f64;
            wrong / m / baseline
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = substream(seed, &[]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        DMatrix::from_fn(n, p, |_, _| normal.sample(&mut rng))
    }

    #[test]
    fn constant_response_is_degenerate() {
        let x = design(50, 3, 1);
        let y = vec![4.2; 50];
        let fit = fit_forest(&x, &y, ForestKind::Regression, &ForestOptions::default()).unwrap();
        assert_eq!(fit.oob_nmse, 0.0);
        assert_eq!(fit.predict(&[9.0, -9.0, 0.0]), 4.2);
    }

    #[test]
    fn pure_noise_has_nmse_near_one() {
        let n = 2000;
        let x = design(n, 3, 2);
        let mut rng = substream(3, &[]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let y: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let fit = fit_forest(&x, &y, ForestKind::Regression, &ForestOptions { ntrees: 100, ..Default::default() }).unwrap();
        assert!((0.9..=1.25).contains(&fit.oob_nmse), "nmse {}", fit.oob_nmse);
    }

    #[test]
    fn identity_target_is_learned() {
        let n = 2000;
        let x = design(n, 3, 4);
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
        let opts = ForestOptions { ntrees: 300, ..Default::default() };
        let fit = fit_forest(&x, &y, ForestKind::Regression, &opts).unwrap();
        assert!(fit.oob_nmse < 0.2, "nmse {}", fit.oob_nmse);

        // hold-out check of the same claim
        let test = design(500, 3, 5);
        let mse: f64 = (0..500)
            .map(|i| {
                let row: Vec<f64> = test.row(i).iter().copied().collect();
                (fit.predict(&row) - row[0]).powi(2)
            })
            .sum::<f64>()
            / 500.0;
        assert!(mse < 0.2, "hold-out mse {mse}");
    }

    #[test]
    fn regression_predictions_stay_in_range() {
        let n = 300;
        let x = design(n, 2, 6);
        let y: Vec<f64> = (0..n).map(|i| (x[(i, 0)] * 3.0).sin() + x[(i, 1)]).collect();
        let fit = fit_forest(&x, &y, ForestKind::Regression, &ForestOptions { ntrees: 20, ..Default::default() }).unwrap();
        let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        let probe = design(200, 2, 7) * 5.0;
        for i in 0..200 {
            let row: Vec<f64> = probe.row(i).iter().copied().collect();
            let v = fit.predict(&row);
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn classification_separates_and_is_deterministic() {
        let n = 400;
        let x = design(n, 2, 8);
        let y: Vec<f64> = (0..n).map(|i| f64::from(x[(i, 0)] > 0.0)).collect();
        let opts = ForestOptions { ntrees: 30, seed: 11, ..Default::default() };
        let a = fit_forest(&x, &y, ForestKind::Classification, &opts).unwrap();
        let b = fit_forest(&x, &y, ForestKind::Classification, &ForestOptions { execution: Execution::Sequential, ..opts }).unwrap();
        assert_eq!(a, b);
        assert!(a.oob_nmse < 0.2, "classification nmse {}", a.oob_nmse);
        assert_eq!(a.predict(&[2.0, 0.0]), 1.0);
        assert_eq!(a.predict(&[-2.0, 0.0]), 0.0);
    }

    #[test]
    fn zero_trees_is_rejected() {
        let x = design(10, 1, 9);
        let y = vec![0.0; 10];
        let opts = ForestOptions { ntrees: 0, ..Default::default() };
        assert!(fit_forest(&x, &y, ForestKind::Regression, &opts).is_err());
    }
}
