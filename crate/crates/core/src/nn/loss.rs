use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let &[_, k] = logits.shape() else {
        return Err(Error::InvalidShape {
            shape: logits.shape().to_vec(),
            reason: "softmax expects N×K".into(),
        });
    };
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Var<T>, labels: &[usize]) -> Result<Var<T>> {
    let &[n, k] = logits.shape() else {
        return Err(Error::InvalidShape {
            shape: logits.shape().to_vec(),
            reason: "cross-entropy expects N×K logits".into(),
        });
    };
    if labels.len() != n {
        return Err(Error::arg(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::arg(format!("label {bad} out of range for {k} classes")));
    }
    let ld = logits.value().data();
    let mut total = T::zero();
    for (row, &y) in ld.chunks(k).zip(labels) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for &v in row {
            s += (v - m).exp();
        }
        total += s.ln() + m - row[y];
    }
    let nf = T::of(n as f64);
    let value = Tensor::scalar(total / nf);
    let labels = labels.to_vec();
    Var::from_op(
        "cross_entropy",
        value,
        vec![logits.clone()],
        Box::new(move |g, ps| {
            let mut p = softmax(ps[0].value())?;
            let scale = g.data()[0] / nf;
            for (row, &y) in p.data_mut().chunks_mut(k).zip(&labels) {
                row[y] -= T::one();
                for v in row.iter_mut() {
                    *v *= scale;
                }
            }
            Ok(vec![Some(p)])
        }),
    )
}
