use crate::error::{shape, LoraError};
use crate::matrix::dot;
use crate::{Matrix, Scalar};

/// Numerically stable softmax; the maximum is subtracted before exponentiating.
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
    z.iter().map(|&v| v - lse).collect()
}

/// One query against a set of keys and values. Returns the attention
/// weights and the weighted sum of values.
pub(crate) fn attend<T: Scalar>(q: &[T], keys: &[Vec<T>], values: &[Vec<T>]) -> Result<(Vec<T>, Vec<T>), LoraError> {
    let d_k = q.len();
    if d_k == 0 {
        return Err(LoraError::ZeroDk);
    }
    if keys.is_empty() || keys.len() != values.len() {
        return Err(shape(
            "attention",
            format!("{} keys and {} values", keys.len(), values.len()),
        ));
    }
    if keys.iter().any(|k| k.len() != d_k) {
        return Err(shape("attention", "key width differs from query width"));
    }
    let d_v = values[0].len();
    if values.iter().any(|v| v.len() != d_v) {
        return Err(shape("attention", "ragged values"));
    }
    let scale = T::lit(d_k as f64).sqrt();
    let scores: Vec<T> = keys.iter().map(|k| dot(q, k) / scale).collect();
    let alpha = softmax(&scores);
    let mut out = vec![T::zero(); d_v];
    for (a, v) in alpha.iter().zip(values) {
        for (o, &x) in out.iter_mut().zip(v) {
            *o = *o + *a * x;
        }
    }
    Ok((alpha, out))
}

/// `softmax(Q Kᵀ / sqrt(d_k)) V`, softmax taken row-wise.
pub fn attention<T: Scalar>(q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>) -> Result<Matrix<T>, LoraError> {
    if q.cols() != k.cols() {
        return Err(shape(
            "attention",
            format!("Q has width {} but K has width {}", q.cols(), k.cols()),
        ));
    }
    if k.rows() != v.rows() {
        return Err(shape("attention", format!("{} keys and {} values", k.rows(), v.rows())));
    }
    let keys: Vec<Vec<T>> = (0..k.rows()).map(|r| k.row(r).to_vec()).collect();
    let values: Vec<Vec<T>> = (0..v.rows()).map(|r| v.row(r).to_vec()).collect();
    let mut data = Vec::with_capacity(q.rows() * v.cols());
    for r in 0..q.rows() {
        data.extend(attend(q.row(r), &keys, &values)?.1);
    }
    Matrix::new(q.rows(), v.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0f64, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && p[2] == 0.0);
        let lp = log_softmax(&[1000.0f64, 1000.0]);
        assert!((lp[0] + 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_width_query_is_rejected() {
        assert_eq!(attend::<f64>(&[], &[vec![]], &[vec![1.0]]), Err(LoraError::ZeroDk));
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let q = Matrix::<f64>::zeros(1, 2).unwrap();
        let k = Matrix::<f64>::zeros(2, 3).unwrap();
        assert!(attention(&q, &k, &k).is_err());
    }
}
