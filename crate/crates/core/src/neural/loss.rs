/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Binary cross-entropy on a logit: returns `(loss, dloss/dlogit)`.
pub fn bce_loss(logit: f64, label: u8) -> (f64, f64) {
    let y = f64::from(label);
    (softplus(logit) - y * logit, sigmoid(logit) - y)
}
