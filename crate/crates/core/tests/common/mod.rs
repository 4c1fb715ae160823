//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use ldp_gradtrack::linalg::Matrix;
use ldp_gradtrack::noise::StepsizeSchedule;
use ldp_gradtrack::problem::{loss_grad, DataPoint, LossModel, StreamProblem};

/// `ϱ_{t,s}` and `ϱ_{t,θ}` straight from their double sums, `O(T²)`.
pub fn naive_sensitivity(
    c_l: f64,
    c_c: f64,
    c_r: f64,
    c_z: f64,
    gamma: f64,
    inv_u: f64,
    step: StepsizeSchedule,
    horizon: usize,
) -> (Vec<f64>, Vec<f64>) {
    let rho_s: Vec<f64> = (0..=horizon)
        .map(|t| 2.0 * c_l * (1..=t).map(|p| (1.0 - c_c).powi((t - p) as i32) * step.at(p - 1)).sum::<f64>())
        .collect();
    let rho_th = (0..=horizon)
        .map(|t| {
            (1..=t)
                .map(|q| {
                    (1.0 - c_r).powi((t - q) as i32)
                        * (c_z * gamma.powi(q as i32 - 1) + inv_u)
                        * (rho_s[q] + rho_s[q - 1])
                })
                .sum::<f64>()
        })
        .collect();
    (rho_s, rho_th)
}

/// `∇f_{i,t}(θ)` recomputed from the stream, no buffering or fast paths.
pub fn direct_local_grad(problem: &StreamProblem, i: usize, theta: &[f64], t: usize) -> Vec<f64> {
    let mut g = vec![0.0; theta.len()];
    for k in 0..=t {
        let p = problem.sample(i, k);
        let (gk, _) = problem.sample_grad(theta, &p).unwrap();
        for (a, b) in g.iter_mut().zip(gk) {
            *a += b / (t + 1) as f64;
        }
    }
    g
}

/// `Σ_i Σ_{j≠i} C_ij e_j`, the column-sum of the mixed noise.
pub fn mixed_noise_sum(c: &Matrix, noise: &[Vec<f64>]) -> Vec<f64> {
    let m = c.rows();
    let n = noise[0].len();
    let mut out = vec![0.0; n];
    for i in 0..m {
        for j in 0..m {
            if i != j {
                for k in 0..n {
                    out[k] += c[(i, j)] * noise[j][k];
                }
            }
        }
    }
    out
}

/// Central finite-difference gradient of the per-sample loss.
pub fn fd_grad(model: &LossModel, theta: &[f64], p: &DataPoint, h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|j| {
            let mut a = theta.to_vec();
            let mut b = theta.to_vec();
            a[j] += h;
            b[j] -= h;
            (loss_grad(model, &a, p).unwrap().0 - loss_grad(model, &b, p).unwrap().0) / (2.0 * h)
        })
        .collect()
}

pub fn column_total(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out
}

pub fn line(id: u32, name: &str, pass: bool, detail: &str) {
    println!("ACCEPTANCE {id:>2} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}
