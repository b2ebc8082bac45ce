//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use lamopt_core::nn::{loss, loss_and_gradient, Gradients, NetworkModel, Stage, TrainConfig, TrainingSet};
use lamopt_core::voigt::{LameCoefficients, VoigtTensor};

pub type Mat2 = [[f64; 2]; 2];

/// Voigt strain `[e11, e22, g12]` as a symmetric 2×2 tensor.
pub fn strain_tensor(v: [f64; 3]) -> Mat2 {
    [[v[0], 0.5 * v[2]], [0.5 * v[2], v[1]]]
}

/// Isotropic Hooke's law applied to a symmetric tensor.
pub fn hooke(lame: &LameCoefficients, xi: &Mat2) -> Mat2 {
    let tr = xi[0][0] + xi[1][1];
    let mut s = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            s[i][j] = 2.0 * lame.mu * xi[i][j] + if i == j { lame.lambda * tr } else { 0.0 };
        }
    }
    s
}

fn double_dot(a: &Mat2, b: &Mat2) -> f64 {
    (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| a[i][j] * b[i][j]).sum()
}

/// Laminate-phase quadratic form evaluated directly from its tensor
/// definition: `A xi : xi - |(A xi) v|^2 / mu + c (v . (A xi) v)^2`.
pub fn laminate_quadratic_form(lame: &LameCoefficients, v: [f64; 2], xi: &Mat2) -> f64 {
    let (l, m) = (lame.lambda, lame.mu);
    let s = hooke(lame, xi);
    let sv = [s[0][0] * v[0] + s[0][1] * v[1], s[1][0] * v[0] + s[1][1] * v[1]];
    let vsv = v[0] * sv[0] + v[1] * sv[1];
    double_dot(&s, xi) - (sv[0] * sv[0] + sv[1] * sv[1]) / m + (m + l) / (m * (2.0 * m + l)) * vsv * vsv
}

/// Gauss–Jordan inverse with partial pivoting.
pub fn lu_inverse(a: &VoigtTensor) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 6]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a.0[i]);
        m[i][3 + i] = 1.0;
    }
    for c in 0..3 {
        let p = (c..3).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, p);
        let d = m[c][c];
        m[c].iter_mut().for_each(|x| *x /= d);
        for r in 0..3 {
            if r != c {
                let f = m[r][c];
                let row = m[c];
                m[r].iter_mut().zip(row).for_each(|(x, y)| *x -= f * y);
            }
        }
    }
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        out[i].copy_from_slice(&m[i][3..]);
    }
    out
}

pub fn max_abs_diff(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs(a: &[[f64; 3]; 3]) -> f64 {
    a.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max)
}

fn block_params(model: &mut NetworkModel, which: usize) -> Option<&mut Vec<f64>> {
    match which {
        0 => model.encoder.as_mut().map(|b| &mut b.params),
        1 => model.ff.as_mut().map(|b| &mut b.params),
        _ => Some(&mut model.decoder.params),
    }
}

fn grad_of(g: &Gradients, which: usize) -> Option<&Vec<f64>> {
    match which {
        0 => g.encoder.as_ref(),
        1 => g.ff.as_ref(),
        _ => g.decoder.as_ref(),
    }
}

/// Largest relative error between backprop and central differences over
/// every parameter of every trained block. Relative errors use
/// `max(|fd|, |bp|, floor)` in the denominator.
pub fn gradient_check(model: &NetworkModel, data: &TrainingSet, batch: &[usize], cfg: &TrainConfig, stage: Stage, h: f64) -> f64 {
    let (_, grads) = loss_and_gradient(model, data, batch, cfg, stage).unwrap();
    let mut worst = 0.0f64;
    let mut probe = model.clone();
    for which in 0..3 {
        let Some(g) = grad_of(&grads, which) else { continue };
        for (k, &gk) in g.iter().enumerate() {
            let p0 = block_params(&mut probe, which).unwrap()[k];
            block_params(&mut probe, which).unwrap()[k] = p0 + h;
            let up = loss(&probe, data, batch, cfg, stage).unwrap().total;
            block_params(&mut probe, which).unwrap()[k] = p0 - h;
            let down = loss(&probe, data, batch, cfg, stage).unwrap().total;
            block_params(&mut probe, which).unwrap()[k] = p0;
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(gk.abs()).max(1e-6);
            worst = worst.max((fd - gk).abs() / denom);
        }
    }
    worst
}

/// Small model with all parameters pushed away from the ReLU kinks and from
/// zero, so central differences see a smooth loss.
pub fn smooth_model(model: &mut NetworkModel, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |p: &mut Vec<f64>| {
        for x in p.iter_mut() {
            let mag: f64 = rng.random_range(0.2..0.9);
            *x = if rng.random_bool(0.7) { mag } else { -mag };
        }
    };
    if let Some(b) = model.encoder.as_mut() {
        fill(&mut b.params);
    }
    if let Some(b) = model.ff.as_mut() {
        fill(&mut b.params);
    }
    fill(&mut model.decoder.params);
}
