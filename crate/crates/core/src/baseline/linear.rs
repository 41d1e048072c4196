use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearParams {
    /// Hinge-loss weight against the L2 penalty.
    pub c: f64,
    pub max_iter: usize,
    /// Stop once the projected-gradient spread falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for LinearParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iter: 1000,
            tol: 0.1,
            seed: 0,
        }
    }
}

/// L2-regularized hinge-loss linear classifier trained by dual coordinate
/// descent. The bias is learned as the weight of a constant unit feature.
/// Returns `(weights, bias)`.
pub fn fit_linear_margin(rows: &[Vec<f32>], labels: &[bool], params: &LinearParams) -> (Vec<f32>, f32) {
    let d = rows.first().map_or(0, Vec::len);
    let n = rows.len();
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let q: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() + 1.0)
        .collect();
    let mut w = vec![0f64; d];
    let mut b = 0f64;
    let mut alpha = vec![0f64; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let c = params.c;

    for iter in 0..params.max_iter {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let xi = &rows[i];
            let margin: f64 = xi.iter().zip(&w).map(|(&x, &wj)| x as f64 * wj).sum::<f64>() + b;
            let g = y[i] * margin - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / q[i]).clamp(0.0, c);
                let step = (alpha[i] - old) * y[i];
                if step != 0.0 {
                    for (wj, &x) in w.iter_mut().zip(xi) {
                        *wj += step * x as f64;
                    }
                    b += step;
                }
            }
        }
        if pg_max - pg_min < params.tol {
            log::debug!("linear margin converged after {} passes", iter + 1);
            break;
        }
    }
    (w.into_iter().map(|v| v as f32).collect(), b as f32)
}
