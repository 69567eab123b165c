use super::params::NetworkParams;
use super::NeuralError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam first/second moments plus the shared step counter.
#[derive(Debug, Clone)]
pub struct OptState {
    pub m: NetworkParams,
    pub v: NetworkParams,
    pub step: u64,
}

impl OptState {
    pub fn new_for(params: &NetworkParams) -> Self {
        let mut zero = params.clone();
        for r in &mut zero.records {
            r.data.fill(0.0);
        }
        OptState {
            m: zero.clone(),
            v: zero,
            step: 0,
        }
    }
}

/// Standard Adam with bias correction. Rejects non-finite gradients without
/// touching the parameters.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    opt: &mut OptState,
    lr: f64,
) -> Result<(), NeuralError> {
    params.check_layout(grads)?;
    params.check_layout(&opt.m)?;
    if !grads.all_finite() {
        return Err(NeuralError::NonFinite("gradients".into()));
    }
    opt.step += 1;
    let t = opt.step as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for ((p, g), (m, v)) in params
        .records
        .iter_mut()
        .zip(&grads.records)
        .map(|(p, g)| (p, g))
        .zip(opt.m.records.iter_mut().zip(opt.v.records.iter_mut()))
    {
        for ((pv, &gv), (mv, vv)) in p
            .data
            .iter_mut()
            .zip(g.data.iter())
            .zip(m.data.iter_mut().zip(v.data.iter_mut()))
        {
            *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Slow target blend: target <- rho * target + (1 - rho) * main.
pub fn polyak_update(
    target: &mut NetworkParams,
    main: &NetworkParams,
    rho: f64,
) -> Result<(), NeuralError> {
    target.check_layout(main)?;
    if !(0.0..=1.0).contains(&rho) {
        return Err(NeuralError::Layout(format!("rho {rho} outside [0, 1]")));
    }
    for (t, m) in target.records.iter_mut().zip(&main.records) {
        t.data.zip_mut_with(&m.data, |t, &m| *t = rho * *t + (1.0 - rho) * m);
    }
    Ok(())
}
