use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_dim, common_dim, BinaryInstance};
use crate::error::{Error, Result};
use crate::seed;

/// An index with its value.
type Scored = (usize, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarginParams {
    /// Soft-margin penalty.
    pub c: f64,
    /// KKT violation tolerance.
    pub tol: f64,
    /// Consecutive sweeps without any update required to stop.
    pub max_passes: usize,
    pub seed: u64,
    /// Scale the penalty per class by `n / (2 · n_class)`.
    pub class_weighting: bool,
    /// Hard cap on sweeps over the data.
    pub max_sweeps: usize,
}

impl Default for MarginParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-3,
            max_passes: 5,
            seed: 1,
            class_weighting: false,
            max_sweeps: 10_000,
        }
    }
}

/// Per-feature `(mean, stddev)`. Zero-variance features keep stddev 1 and
/// therefore map every training value to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(xs: &[&[f64]], dim: usize) -> Self {
        let n = xs.len() as f64;
        let mut mean = vec![0.0; dim];
        for x in xs {
            for (m, v) in mean.iter_mut().zip(x.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for x in xs {
            for ((s, v), m) in var.iter_mut().zip(x.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginModel {
    /// Weights in standardized feature space.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
}

impl MarginModel {
    pub fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.weights.len(), x)?;
        let z = self.standardizer.apply(x);
        Ok(dot(&self.weights, &z) + self.bias)
    }

    /// A decision value of exactly 0 is a positive prediction.
    pub fn predict(&self, x: &[f64]) -> Result<bool> {
        Ok(self.decision_value(x)? >= 0.0)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Smo<'a> {
    x: &'a [Vec<f64>],
    y: Vec<f64>,
    c: Vec<f64>,
    alpha: Vec<f64>,
    w: Vec<f64>,
    b: f64,
    err: Vec<f64>,
    sq: Vec<f64>,
}

impl Smo<'_> {
    fn step(&mut self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        let (yi, yj) = (self.y[i], self.y[j]);
        let (ai, aj) = (self.alpha[i], self.alpha[j]);
        let (ci, cj) = (self.c[i], self.c[j]);
        let (lo, hi) = if yi != yj {
            let k = aj - ai;
            (k.max(0.0), cj.min(ci + k))
        } else {
            let s = ai + aj;
            ((s - ci).max(0.0), cj.min(s))
        };
        if hi - lo < 1e-12 {
            return false;
        }
        let kij = dot(&self.x[i], &self.x[j]);
        let eta = 2.0 * kij - self.sq[i] - self.sq[j];
        let (ei, ej) = (self.err[i], self.err[j]);
        let aj_new = if eta < -1e-12 {
            (aj - yj * (ei - ej) / eta).clamp(lo, hi)
        } else {
            // flat curvature (coincident points): the objective is linear in
            // a_j, so move to whichever end it favours
            let slope = yj * (ei - ej);
            if slope > 1e-12 {
                hi
            } else if slope < -1e-12 {
                lo
            } else {
                return false;
            }
        };
        if (aj_new - aj).abs() < 1e-10 {
            return false;
        }
        let snap = |a: f64, c: f64| {
            if a < 1e-12 * c {
                0.0
            } else if a > c * (1.0 - 1e-12) {
                c
            } else {
                a
            }
        };
        let aj_new = snap(aj_new, cj);
        let ai_new = snap(ai + yi * yj * (aj - aj_new), ci);
        let (dai, daj) = (ai_new - ai, aj_new - aj);

        let b1 = self.b - ei - yi * dai * self.sq[i] - yj * daj * kij;
        let b2 = self.b - ej - yi * dai * kij - yj * daj * self.sq[j];
        let b_new = if ai_new > 0.0 && ai_new < ci {
            b1
        } else if aj_new > 0.0 && aj_new < cj {
            b2
        } else {
            (b1 + b2) / 2.0
        };

        let dw: Vec<f64> = self.x[i]
            .iter()
            .zip(&self.x[j])
            .map(|(xi, xj)| yi * dai * xi + yj * daj * xj)
            .collect();
        for (w, d) in self.w.iter_mut().zip(&dw) {
            *w += d;
        }
        let db = b_new - self.b;
        for (e, xk) in self.err.iter_mut().zip(self.x) {
            *e += dot(&dw, xk) + db;
        }
        self.alpha[i] = ai_new;
        self.alpha[j] = aj_new;
        self.b = b_new;
        true
    }

    fn in_up(&self, i: usize) -> bool {
        if self.y[i] > 0.0 {
            self.alpha[i] < self.c[i]
        } else {
            self.alpha[i] > 0.0
        }
    }

    fn in_low(&self, i: usize) -> bool {
        if self.y[i] > 0.0 {
            self.alpha[i] > 0.0
        } else {
            self.alpha[i] < self.c[i]
        }
    }

    /// Extremes of `w·x_i − y_i` over the two index sets: the smallest over
    /// the "up" set and the largest over the "low" set, with their indices.
    fn extremes(&self) -> (Option<Scored>, Option<Scored>) {
        let mut up: Option<Scored> = None;
        let mut low: Option<Scored> = None;
        for k in 0..self.x.len() {
            let f = self.err[k] - self.b;
            if self.in_up(k) && up.is_none_or(|(_, v)| f < v) {
                up = Some((k, f));
            }
            if self.in_low(k) && low.is_none_or(|(_, v)| f > v) {
                low = Some((k, f));
            }
        }
        (up, low)
    }

    /// The maximal violating pair, if the optimality gap exceeds `2·tol`.
    fn worst_pair(&self, tol: f64) -> Option<(usize, usize)> {
        match self.extremes() {
            (Some((i, up)), Some((j, low))) if low - up > 2.0 * tol && i != j => Some((i, j)),
            _ => None,
        }
    }

    /// Moves the bias to the middle of the interval allowed by the KKT
    /// conditions.
    fn center_bias(&mut self) {
        let b = match self.extremes() {
            (Some((_, up)), Some((_, low))) => -(up + low) / 2.0,
            (Some((_, up)), None) => -up,
            (None, Some((_, low))) => -low,
            (None, None) => return,
        };
        let db = b - self.b;
        for e in &mut self.err {
            *e += db;
        }
        self.b = b;
    }

    /// Tries to move multiplier `i` with the partner maximizing `|E_i − E_j|`,
    /// else with a random partner.
    fn examine(&mut self, i: usize, tol: f64, rng: &mut impl Rng) -> bool {
        if !self.violates(i, tol) {
            return false;
        }
        let n = self.x.len();
        let ei = self.err[i];
        let best_j = (0..n)
            .filter(|&j| j != i)
            .max_by(|&a, &b| (ei - self.err[a]).abs().total_cmp(&(ei - self.err[b]).abs()));
        if best_j.is_some_and(|j| self.step(i, j)) {
            return true;
        }
        if n < 2 {
            return false;
        }
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        self.step(i, j)
    }

    fn violates(&self, i: usize, tol: f64) -> bool {
        let r = self.y[i] * self.err[i];
        (r < -tol && self.alpha[i] < self.c[i]) || (r > tol && self.alpha[i] > 0.0)
    }

    /// Bias from the KKT conditions: the mean over free support vectors, or
    /// the midpoint of the feasible interval when none is free.
    fn final_bias(&self) -> f64 {
        let mut free_sum = 0.0;
        let mut free_n = 0usize;
        let mut lower = f64::NEG_INFINITY;
        let mut upper = f64::INFINITY;
        for k in 0..self.x.len() {
            let r = self.y[k] - dot(&self.w, &self.x[k]);
            let (a, c) = (self.alpha[k], self.c[k]);
            if a > 1e-12 && a < c - 1e-12 {
                free_sum += r;
                free_n += 1;
            } else if (a <= 1e-12) == (self.y[k] > 0.0) {
                lower = lower.max(r);
            } else {
                upper = upper.min(r);
            }
        }
        if free_n > 0 {
            free_sum / free_n as f64
        } else if lower.is_finite() && upper.is_finite() {
            (lower + upper) / 2.0
        } else {
            self.b
        }
    }
}

/// Linear soft-margin classifier. Features are standardized with training
/// statistics, then the dual is optimized by SMO pairwise updates: each
/// step updates the maximal violating pair until the optimality gap is
/// within `2·tol`. A confirming sweep then visits every multiplier, pairing
/// each KKT violator with the partner maximizing `|E_i − E_j|` (or a seeded
/// random one). Training stops after `max_passes` consecutive sweeps with
/// no update.
pub fn train_margin(data: &[BinaryInstance], params: &MarginParams) -> Result<MarginModel> {
    let dim = common_dim(data.iter().map(|d| &d.x))?;
    let n_pos = data.iter().filter(|d| d.y).count();
    let n_neg = data.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid(
            "margin classifier needs both positive and negative examples",
        ));
    }
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(Error::invalid(format!("penalty c must be positive, got {}", params.c)));
    }

    let raw: Vec<&[f64]> = data.iter().map(|d| d.x.as_slice()).collect();
    let standardizer = Standardizer::fit(&raw, dim);
    let x: Vec<Vec<f64>> = raw.iter().map(|r| standardizer.apply(r)).collect();
    let y: Vec<f64> = data.iter().map(|d| if d.y { 1.0 } else { -1.0 }).collect();
    let n = data.len();
    let c: Vec<f64> = data
        .iter()
        .map(|d| {
            if !params.class_weighting {
                params.c
            } else if d.y {
                params.c * n as f64 / (2.0 * n_pos as f64)
            } else {
                params.c * n as f64 / (2.0 * n_neg as f64)
            }
        })
        .collect();
    let sq = x.iter().map(|v| dot(v, v)).collect();

    let mut smo = Smo {
        x: &x,
        err: y.iter().map(|v| -v).collect(),
        y,
        c,
        alpha: vec![0.0; n],
        w: vec![0.0; dim],
        b: 0.0,
        sq,
    };
    let mut rng = seed::rng(params.seed);
    let budget = params.max_sweeps.saturating_mul(n);
    let mut spent = 0usize;
    let mut passes = 0;
    while passes < params.max_passes && spent < budget {
        while spent < budget {
            let Some((i_up, i_low)) = smo.worst_pair(params.tol) else {
                break;
            };
            spent += 1;
            if !smo.step(i_up, i_low) {
                break;
            }
        }
        smo.center_bias();
        let mut changed = 0;
        for i in 0..n {
            if smo.examine(i, params.tol, &mut rng) {
                changed += 1;
            }
        }
        spent += n;
        if changed == 0 {
            passes += 1;
        } else {
            passes = 0;
        }
    }

    let bias = smo.final_bias();
    let weights = smo.w;
    if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
        return Err(Error::invalid("margin training diverged"));
    }
    Ok(MarginModel {
        weights,
        bias,
        standardizer,
    })
}
