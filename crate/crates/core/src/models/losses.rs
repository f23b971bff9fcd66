//! Scalar objectives and their gradients with respect to network outputs.

use crate::projection::GridScan;
use crate::{Error, Result};

use super::vae::LatentCode;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow; `-ln σ(x) = softplus(-x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// KL(N(mu, diag(exp(log_var))) ‖ N(0, I)).
pub fn kl_divergence(code: &LatentCode) -> f64 {
    kl_terms(&code.mu, &code.log_var)
}

pub(crate) fn kl_terms(mu: &[f64], log_var: &[f64]) -> f64 {
    let s: f64 = mu.iter().zip(log_var).map(|(&m, &lv)| 1.0 + lv - m * m - lv.exp()).sum();
    (-0.5 * s).max(0.0)
}

/// Mean squared error over channels; with `masked`, only over cells occupied
/// in `x` (zero if none are).
pub fn recon_loss(x: &GridScan, x_hat: &GridScan, masked: bool) -> Result<f64> {
    if (x.height, x.width, x.representation) != (x_hat.height, x_hat.width, x_hat.representation) {
        return Err(Error::Shape("reconstruction shape differs from input".into()));
    }
    let c = x.num_channels();
    let (mut sum, mut count) = (0.0, 0usize);
    for cell in 0..x.cells() {
        if masked && !x.mask[cell] {
            continue;
        }
        for k in 0..c {
            let d = x_hat.channels[cell * c + k] as f64 - x.channels[cell * c + k] as f64;
            sum += d * d;
        }
        count += c;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// `mean_i softplus(sr·(r_i − f̄)) + mean_j softplus(sf·(f_j − r̄))` and its
/// gradient with respect to both score vectors.
fn relativistic(real: &[f64], fake: &[f64], sr: f64, sf: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let (nr, nf) = (real.len() as f64, fake.len() as f64);
    let rbar = real.iter().sum::<f64>() / nr;
    let fbar = fake.iter().sum::<f64>() / nf;
    let a: Vec<f64> = real.iter().map(|&r| sr * (r - fbar)).collect();
    let b: Vec<f64> = fake.iter().map(|&f| sf * (f - rbar)).collect();
    let loss = a.iter().map(|&v| softplus(v)).sum::<f64>() / nr + b.iter().map(|&v| softplus(v)).sum::<f64>() / nf;
    // d softplus(s·u)/du = s·σ(s·u)
    let da: Vec<f64> = a.iter().map(|&v| sr * sigmoid(v)).collect();
    let db: Vec<f64> = b.iter().map(|&v| sf * sigmoid(v)).collect();
    let mean_da = da.iter().sum::<f64>() / nr;
    let mean_db = db.iter().sum::<f64>() / nf;
    let g_real = da.iter().map(|&d| (d - mean_db) / nr).collect();
    let g_fake = db.iter().map(|&d| (d - mean_da) / nf).collect();
    (loss, g_real, g_fake)
}

fn non_empty(real: &[f64], fake: &[f64]) -> Result<()> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Precondition("adversarial losses need non-empty real and fake batches".into()));
    }
    Ok(())
}

/// Relativistic-average losses `(d_loss, g_loss)` from pre-sigmoid scores.
pub fn ragan_losses(real: &[f64], fake: &[f64]) -> Result<(f64, f64)> {
    non_empty(real, fake)?;
    Ok((relativistic(real, fake, -1.0, 1.0).0, relativistic(real, fake, 1.0, -1.0).0))
}

pub(crate) fn ragan_d_grad(real: &[f64], fake: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    relativistic(real, fake, -1.0, 1.0)
}

pub(crate) fn ragan_g_grad(real: &[f64], fake: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    relativistic(real, fake, 1.0, -1.0)
}

/// The original minimax pair: `d_loss = −E log σ(r) − E log(1 − σ(f))` and
/// `g_loss = E log(1 − σ(f))`.
pub fn standard_gan_losses(real: &[f64], fake: &[f64]) -> Result<(f64, f64)> {
    non_empty(real, fake)?;
    Ok((standard_d_grad(real, fake).0, standard_g_grad(fake).0))
}

pub(crate) fn standard_d_grad(real: &[f64], fake: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (nr, nf) = (real.len() as f64, fake.len() as f64);
    let loss = real.iter().map(|&r| softplus(-r)).sum::<f64>() / nr + fake.iter().map(|&f| softplus(f)).sum::<f64>() / nf;
    let gr = real.iter().map(|&r| -sigmoid(-r) / nr).collect();
    let gf = fake.iter().map(|&f| sigmoid(f) / nf).collect();
    (loss, gr, gf)
}

pub(crate) fn standard_g_grad(fake: &[f64]) -> (f64, Vec<f64>) {
    let nf = fake.len() as f64;
    let loss = -fake.iter().map(|&f| softplus(f)).sum::<f64>() / nf;
    (loss, fake.iter().map(|&f| -sigmoid(f) / nf).collect())
}

/// `mean σ(r − f̄) − mean σ(f − r̄)`: 0 when the discriminator cannot tell
/// the batches apart, approaching 1 when it separates them completely.
pub fn score_gap(real: &[f64], fake: &[f64]) -> f64 {
    let rbar = real.iter().sum::<f64>() / real.len() as f64;
    let fbar = fake.iter().sum::<f64>() / fake.len() as f64;
    real.iter().map(|&r| sigmoid(r - fbar)).sum::<f64>() / real.len() as f64
        - fake.iter().map(|&f| sigmoid(f - rbar)).sum::<f64>() / fake.len() as f64
}

/// Fraction of scores on the correct side of the opposing batch's mean: real
/// above the mean fake score, fake below the mean real score.
pub fn relativistic_accuracy(real: &[f64], fake: &[f64]) -> f64 {
    let rbar = real.iter().sum::<f64>() / real.len() as f64;
    let fbar = fake.iter().sum::<f64>() / fake.len() as f64;
    let ok = real.iter().filter(|&&r| r > fbar).count() + fake.iter().filter(|&&f| f < rbar).count();
    ok as f64 / (real.len() + fake.len()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::Representation;
    use rand::Rng;

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&LatentCode { mu: vec![0.0; 4], log_var: vec![0.0; 4] }), 0.0);
        assert!((kl_divergence(&LatentCode { mu: vec![1.0], log_var: vec![0.0] }) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn recon_examples() {
        let mut x = GridScan::empty(Representation::Polar, 2, 2);
        x.normalized = true;
        let mut y = x.clone();
        y.channels.fill(1.0);
        assert_eq!(recon_loss(&x, &x, false).unwrap(), 0.0);
        assert_eq!(recon_loss(&x, &y, false).unwrap(), 1.0);
        // Masked: only cell 1 counts.
        x.mask[1] = true;
        let before = recon_loss(&x, &y, true).unwrap();
        y.channels[0] = 7.0;
        assert_eq!(recon_loss(&x, &y, true).unwrap(), before);
        let other = GridScan::empty(Representation::Cartesian, 2, 2);
        assert!(recon_loss(&x, &other, false).is_err());
    }

    #[test]
    fn ragan_anchor_and_saturation() {
        let (d, g) = ragan_losses(&[0.3; 4], &[0.3; 4]).unwrap();
        assert!((d - 2.0 * 2f64.ln()).abs() < 1e-12 && (g - 2.0 * 2f64.ln()).abs() < 1e-12);
        let (d, g) = ragan_losses(&[10.0; 3], &[-10.0; 3]).unwrap();
        assert!(d < 1e-8 && g > 39.0);
        assert!(ragan_losses(&[], &[1.0]).is_err());
        assert!(standard_gan_losses(&[1.0], &[]).is_err());
    }

    #[test]
    fn adversarial_gradients_match_finite_differences() {
        let mut rng = crate::seed::rng(3);
        type G = fn(&[f64], &[f64]) -> (f64, Vec<f64>, Vec<f64>);
        let std_g: G = |_, f| {
            let (l, g) = standard_g_grad(f);
            (l, vec![0.0; 4], g)
        };
        for (name, f) in [("ragan d", ragan_d_grad as G), ("ragan g", ragan_g_grad as G), ("std d", standard_d_grad as G), ("std g", std_g)] {
            for _ in 0..20 {
                let real: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
                let fake: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
                let (_, gr, gf) = f(&real, &fake);
                let h = 1e-6;
                for k in 0..8 {
                    let bump = |d: f64| {
                        let (mut r, mut fk) = (real.clone(), fake.clone());
                        if k < 4 { r[k] += d } else { fk[k - 4] += d }
                        f(&r, &fk).0
                    };
                    let num = (bump(h) - bump(-h)) / (2.0 * h);
                    let ana = if k < 4 { gr[k] } else { gf[k - 4] };
                    let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8);
                    assert!(rel < 1e-6 || (num - ana).abs() < 1e-10, "{name} k={k}: {ana} vs {num}");
                }
            }
        }
    }

    #[test]
    fn losses_are_batch_permutation_invariant() {
        let real = [0.5, -1.0, 2.0, 0.1];
        let fake = [-0.3, 1.2, 0.0, -2.0];
        let (d, g) = ragan_losses(&real, &fake).unwrap();
        let (d2, g2) = ragan_losses(&[2.0, 0.1, 0.5, -1.0], &[0.0, -2.0, 1.2, -0.3]).unwrap();
        assert!((d - d2).abs() < 1e-12 && (g - g2).abs() < 1e-12);
    }

    #[test]
    fn diagnostics() {
        assert_eq!(score_gap(&[1.0; 3], &[1.0; 3]), 0.0);
        assert!(score_gap(&[20.0], &[-20.0]) > 0.999);
        assert_eq!(relativistic_accuracy(&[1.0, 2.0], &[-1.0, 3.0]), 0.5);
    }
}
