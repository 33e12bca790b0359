use serde::Serialize;

use super::{check_pair, stats::student_t_p, EvalError, Result};

/// Linear fit of residual (`pred − truth`) on truth.
///
/// `pearson_r` and `p_value` are `None` when the residuals have no
/// variance, for instance a perfect prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasReport {
    pub alpha: f64,
    pub beta: f64,
    pub pearson_r: Option<f64>,
    pub p_value: Option<f64>,
    pub m: usize,
}

pub fn bias_fit(truth: &[f64], pred: &[f64]) -> Result<BiasReport> {
    check_pair(truth, pred, 3)?;
    let m = truth.len();
    let n = m as f64;
    let mean_t = truth.iter().sum::<f64>() / n;
    let resid: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| p - t).collect();
    let mean_e = resid.iter().sum::<f64>() / n;
    let mut stt = 0.0;
    let mut see = 0.0;
    let mut ste = 0.0;
    for (&t, &e) in truth.iter().zip(&resid) {
        let (dt, de) = (t - mean_t, e - mean_e);
        stt += dt * dt;
        see += de * de;
        ste += dt * de;
    }
    if stt == 0.0 {
        return Err(EvalError::Undefined("bias fit needs variance in truth"));
    }
    let beta = ste / stt;
    let alpha = mean_e - beta * mean_t;
    let (pearson_r, p_value) = if see == 0.0 {
        (None, None)
    } else {
        let r = (ste / (stt * see).sqrt()).clamp(-1.0, 1.0);
        let dof = (m - 2) as f64;
        let t = if r.abs() == 1.0 {
            f64::INFINITY.copysign(r)
        } else {
            r * (dof / (1.0 - r * r)).sqrt()
        };
        (Some(r), Some(student_t_p(t, dof)))
    };
    Ok(BiasReport {
        alpha,
        beta,
        pearson_r,
        p_value,
        m,
    })
}
