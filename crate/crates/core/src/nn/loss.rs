//! Softplus GAN objectives on raw discriminator scores.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLosses {
    /// `mean softplus(D(real)) + mean softplus(-D(fake))`
    pub generator: f64,
    /// `mean softplus(-D(real)) + mean softplus(D(fake))`
    pub discriminator: f64,
}

fn check_scores(d_real: &Tensor, d_fake: &Tensor) -> Result<()> {
    if d_real.shape() != d_fake.shape() || d_real.cols() != 1 {
        return Err(Error::shape("gan_losses", d_real.shape(), d_fake.shape()));
    }
    d_real.ensure_finite("real scores")?;
    d_fake.ensure_finite("fake scores")
}

fn mean_of(t: &Tensor, f: impl Fn(f64) -> f64) -> f64 {
    t.data().iter().map(|&v| f(v)).sum::<f64>() / t.len() as f64
}

/// Batch-mean generator and discriminator losses.
pub fn gan_losses(d_real: &Tensor, d_fake: &Tensor) -> Result<GanLosses> {
    check_scores(d_real, d_fake)?;
    let sp_real = mean_of(d_real, softplus);
    let sp_neg_real = mean_of(d_real, |s| softplus(-s));
    let sp_fake = mean_of(d_fake, softplus);
    let sp_neg_fake = mean_of(d_fake, |s| softplus(-s));
    Ok(GanLosses {
        generator: sp_real + sp_neg_fake,
        discriminator: sp_neg_real + sp_fake,
    })
}

/// Gradients of the discriminator loss with respect to the real and fake scores.
pub fn discriminator_score_grads(d_real: &Tensor, d_fake: &Tensor) -> Result<(Tensor, Tensor)> {
    check_scores(d_real, d_fake)?;
    let n = d_real.len() as f64;
    let map = |t: &Tensor, f: &dyn Fn(f64) -> f64| {
        Tensor::from_vec(t.shape(), t.data().iter().map(|&v| f(v) / n).collect())
    };
    Ok((map(d_real, &|s| -sigmoid(-s))?, map(d_fake, &sigmoid)?))
}

/// Gradient of the generator loss with respect to the fake scores (the real
/// term does not depend on the generator).
pub fn generator_score_grad(d_fake: &Tensor) -> Result<Tensor> {
    d_fake.ensure_finite("fake scores")?;
    let n = d_fake.len() as f64;
    Tensor::from_vec(
        d_fake.shape(),
        d_fake.data().iter().map(|&s| -sigmoid(-s) / n).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Tensor {
        Tensor::from_vec(&[v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn zero_scores_give_two_log_two() {
        let l = gan_losses(&col(&[0.0; 4]), &col(&[0.0; 4])).unwrap();
        let expected = 2.0 * std::f64::consts::LN_2;
        assert!((l.generator - expected).abs() < 1e-12);
        assert!((l.discriminator - expected).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_asymptotics() {
        let l = gan_losses(&col(&[50.0; 3]), &col(&[-50.0; 3])).unwrap();
        assert!(l.discriminator < 1e-20);
        assert!((l.generator - 100.0).abs() < 1e-12);
    }

    #[test]
    fn stable_at_extreme_scores() {
        let l = gan_losses(&col(&[1e3, -1e3]), &col(&[-1e3, 1e3])).unwrap();
        assert!(l.generator.is_finite() && l.discriminator.is_finite());
        assert!((softplus(1e3) - 1e3).abs() < 1e-12);
        assert_eq!(softplus(-1e3), 0.0);
    }

    #[test]
    fn rejects_mismatched_or_nan_scores() {
        assert!(gan_losses(&col(&[0.0]), &col(&[0.0, 1.0])).is_err());
        assert!(gan_losses(&col(&[f64::NAN]), &col(&[0.0])).is_err());
    }

    #[test]
    fn score_grads_match_finite_differences() {
        let real = [0.3, -1.2, 2.5];
        let fake = [-0.7, 0.1, 4.0];
        let (gr, gf) = discriminator_score_grads(&col(&real), &col(&fake)).unwrap();
        let gg = generator_score_grad(&col(&fake)).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut rp = real;
            rp[i] += h;
            let mut rm = real;
            rm[i] -= h;
            let fd = (gan_losses(&col(&rp), &col(&fake)).unwrap().discriminator
                - gan_losses(&col(&rm), &col(&fake)).unwrap().discriminator)
                / (2.0 * h);
            assert!((fd - gr.data()[i]).abs() < 1e-8);
            let mut fp = fake;
            fp[i] += h;
            let mut fm = fake;
            fm[i] -= h;
            let fd_d = (gan_losses(&col(&real), &col(&fp)).unwrap().discriminator
                - gan_losses(&col(&real), &col(&fm)).unwrap().discriminator)
                / (2.0 * h);
            let fd_g = (gan_losses(&col(&real), &col(&fp)).unwrap().generator
                - gan_losses(&col(&real), &col(&fm)).unwrap().generator)
                / (2.0 * h);
            assert!((fd_d - gf.data()[i]).abs() < 1e-8);
            assert!((fd_g - gg.data()[i]).abs() < 1e-8);
        }
    }
}
