use super::network::DehazePyramid;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{mse, Tape, Var};

/// Weight of the adversarial term in the total loss.
pub const ADV_WEIGHT: f64 = 0.001;
/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` before logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Sum over scales of the per-scale mean squared error, all scales weighted equally.
pub fn content_loss(pred: &DehazePyramid, truth: &DehazePyramid) -> Result<f64> {
    if pred.levels.len() != truth.levels.len() {
        return shape_err(format!(
            "pyramid depths differ: {} vs {}",
            pred.levels.len(),
            truth.levels.len()
        ));
    }
    pred.levels.iter().zip(&truth.levels).map(|(p, t)| mse(p, t)).sum()
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `E[log D(J)] + E[log(1 − D(F(I)))]` over the batch.
pub fn adversarial_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::Empty("adversarial loss needs at least one probability on each side".into()));
    }
    let real = d_real.iter().map(|&p| clamp_prob(p).ln()).sum::<f64>() / d_real.len() as f64;
    let fake = d_fake.iter().map(|&p| (1.0 - clamp_prob(p)).ln()).sum::<f64>() / d_fake.len() as f64;
    Ok(real + fake)
}

pub fn total_loss(cont: f64, adv: f64) -> f64 {
    total_loss_weighted(cont, adv, ADV_WEIGHT)
}

/// `cont + weight · adv`; weight 0 gives the content-only model.
pub fn total_loss_weighted(cont: f64, adv: f64, weight: f64) -> f64 {
    cont + weight * adv
}

pub(crate) fn content_loss_var(tape: &mut Tape, pred: &[Var], truth: &[Var]) -> Result<Var> {
    if pred.is_empty() || pred.len() != truth.len() {
        return shape_err(format!("pyramid depths differ: {} vs {}", pred.len(), truth.len()));
    }
    let mut total = tape.mse(pred[0], truth[0])?;
    for (&p, &t) in pred.iter().zip(truth).skip(1) {
        let term = tape.mse(p, t)?;
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// Non-saturating generator term `mean(−log D(F(I)))`.
pub(crate) fn generator_adv_var(tape: &mut Tape, p_fake: Var) -> Var {
    let logs = tape.ln_clamped(p_fake, PROB_EPS, 1.0 - PROB_EPS);
    let mean = tape.mean(logs);
    tape.affine(mean, -1.0, 0.0)
}

/// Discriminator objective to minimise: the negated adversarial loss.
pub(crate) fn discriminator_loss_var(tape: &mut Tape, p_real: Var, p_fake: Var) -> Result<Var> {
    let lr = tape.ln_clamped(p_real, PROB_EPS, 1.0 - PROB_EPS);
    let real = tape.mean(lr);
    let one_minus = tape.affine(p_fake, -1.0, 1.0);
    let lf = tape.ln_clamped(one_minus, PROB_EPS, 1.0 - PROB_EPS);
    let fake = tape.mean(lf);
    let sum = tape.add(real, fake)?;
    Ok(tape.affine(sum, -1.0, 0.0))
}
