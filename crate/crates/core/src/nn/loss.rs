use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::NnError;

/// Floor applied to probabilities before taking logarithms.
pub const EPS_LOG: f64 = 1e-12;

/// Overflow-safe softmax (max subtraction).
pub fn softmax(z: ArrayView1<'_, f64>) -> Array1<f64> {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = z.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let p = softmax(row.view());
        row.assign(&p);
    }
    out
}

/// Categorical cross-entropy `-ln p[label]`, with `p` floored at [`EPS_LOG`].
pub fn cross_entropy(p: ArrayView1<'_, f64>, label: usize) -> f64 {
    -p[label].max(EPS_LOG).ln()
}

/// Mean softmax cross-entropy over a batch of logits, with the gradient with
/// respect to the logits.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>), NnError> {
    if logits.nrows() != labels.len() {
        return Err(NnError::Shape(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.ncols()) {
        return Err(NnError::Shape(format!("label {bad} out of {} classes", logits.ncols())));
    }
    let n = labels.len() as f64;
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for (mut row, &l) in grad.axis_iter_mut(Axis(0)).zip(labels) {
        loss += cross_entropy(row.view(), l);
        row[l] -= 1.0;
    }
    grad /= n;
    Ok((loss / n, grad))
}

/// Mean squared error over all elements.
pub fn mse(pred: &Array2<f64>, target: &Array2<f64>) -> Result<f64, NnError> {
    Ok(mse_loss(pred, target)?.0)
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>), NnError> {
    if pred.dim() != target.dim() {
        return Err(NnError::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let diff = pred - target;
    let n = diff.len().max(1) as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}
