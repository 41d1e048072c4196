use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::preprocess::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Features tried per split; `None` means `round(sqrt(d))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            max_features: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { pain_fraction: f32 },
    Split { feature: u32, threshold: f32, left: u32, right: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// 1 if the reached leaf is majority pain, 0 if majority no-pain, 0.5 on a tie.
    pub fn vote(&self, x: &[f32]) -> f64 {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { pain_fraction } => {
                    return match pain_fraction.partial_cmp(&0.5) {
                        Some(std::cmp::Ordering::Greater) => 1.0,
                        Some(std::cmp::Ordering::Less) => 0.0,
                        _ => 0.5,
                    };
                }
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature as usize] <= *threshold { *left } else { *right } as usize;
                }
            }
        }
    }
}

/// Bagged CART trees with Gini splits and per-split feature subsampling.
/// Tree `t` draws from its own generator seeded by `(seed, t)`, so the
/// forest does not depend on build order.
pub fn fit_forest(rows: &[Vec<f32>], labels: &[bool], params: &ForestParams) -> Vec<Tree> {
    let d = rows.first().map_or(0, Vec::len);
    let mtry = params
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().round() as usize)
        .clamp(1, d.max(1));
    (0..params.n_trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                b"forest",
                &params.seed.to_le_bytes(),
                &(t as u64).to_le_bytes(),
            ]));
            let sample: Vec<u32> = (0..rows.len()).map(|_| rng.gen_range(0..rows.len()) as u32).collect();
            grow_tree(rows, labels, sample, mtry, params, &mut rng)
        })
        .collect()
}

struct Pending {
    node: usize,
    samples: Vec<u32>,
    depth: usize,
}

fn grow_tree(
    rows: &[Vec<f32>],
    labels: &[bool],
    sample: Vec<u32>,
    mtry: usize,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let d = rows[0].len();
    let mut nodes = vec![Node::Leaf { pain_fraction: 0.0 }];
    let mut stack = vec![Pending {
        node: 0,
        samples: sample,
        depth: 0,
    }];
    let mut features: Vec<u32> = (0..d as u32).collect();
    let mut pairs: Vec<(f32, bool)> = Vec::new();
    while let Some(Pending { node, samples, depth }) = stack.pop() {
        let pos = samples.iter().filter(|&&i| labels[i as usize]).count();
        let n = samples.len();
        let leaf = Node::Leaf {
            pain_fraction: pos as f32 / n as f32,
        };
        let depth_ok = params.max_depth.is_none_or(|m| depth < m);
        if pos == 0 || pos == n || n < params.min_samples_split.max(2) || !depth_ok {
            nodes[node] = leaf;
            continue;
        }
        // try features in a fresh random order, at least `mtry` of them,
        // continuing past that only while no valid split has been found
        features.shuffle(rng);
        let mut best: Option<(f64, u32, f32)> = None;
        for (k, &f) in features.iter().enumerate() {
            if k >= mtry && best.is_some() {
                break;
            }
            pairs.clear();
            pairs.extend(samples.iter().map(|&i| (rows[i as usize][f as usize], labels[i as usize])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut lp, mut ln) = (0usize, 0usize);
            for j in 0..n - 1 {
                if pairs[j].1 {
                    lp += 1;
                } else {
                    ln += 1;
                }
                if pairs[j].0 == pairs[j + 1].0 {
                    continue;
                }
                let nl = (lp + ln) as f64;
                let nr = (n - lp - ln) as f64;
                let rp = (pos - lp) as f64;
                let rn = nr - rp;
                let cost = 2.0 * lp as f64 * ln as f64 / nl + 2.0 * rp * rn / nr;
                if best.is_none_or(|(c, _, _)| cost < c) {
                    let threshold = 0.5 * (pairs[j].0 + pairs[j + 1].0);
                    // midpoint can round up onto the right value
                    let threshold = if threshold >= pairs[j + 1].0 { pairs[j].0 } else { threshold };
                    best = Some((cost, f, threshold));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            nodes[node] = leaf;
            continue;
        };
        let (left, right): (Vec<u32>, Vec<u32>) = samples
            .into_iter()
            .partition(|&i| rows[i as usize][feature as usize] <= threshold);
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { pain_fraction: 0.0 });
        nodes.push(Node::Leaf { pain_fraction: 0.0 });
        nodes[node] = Node::Split {
            feature,
            threshold,
            left: li as u32,
            right: ri as u32,
        };
        stack.push(Pending { node: ri, samples: right, depth: depth + 1 });
        stack.push(Pending { node: li, samples: left, depth: depth + 1 });
    }
    Tree { nodes }
}

pub fn forest_score(trees: &[Tree], x: &[f32]) -> f64 {
    trees.iter().map(|t| t.vote(x)).sum::<f64>() / trees.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learns_threshold() {
        let rows: Vec<Vec<f32>> = (0..40).map(|i| vec![i as f32, (i * 7 % 5) as f32]).collect();
        let labels: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let trees = fit_forest(&rows, &labels, &ForestParams { n_trees: 15, ..Default::default() });
        assert!(forest_score(&trees, &[35.0, 1.0]) > 0.8);
        assert!(forest_score(&trees, &[3.0, 1.0]) < 0.2);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let rows: Vec<Vec<f32>> = (0..60).map(|i| vec![(i % 7) as f32, (i % 11) as f32, i as f32]).collect();
        let labels: Vec<bool> = (0..60).map(|i| (i % 7) > 3).collect();
        let p = ForestParams { n_trees: 10, ..Default::default() };
        assert_eq!(fit_forest(&rows, &labels, &p), fit_forest(&rows, &labels, &p));
    }
}
