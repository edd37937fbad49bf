//! NT-Xent / InfoNCE over a batch of `2N` paired embeddings, with analytic
//! gradients. Computed in `f64`.

use ndarray::{Array1, Array2, Axis};

use crate::{Error, Result};

/// Pairwise similarity used inside the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Similarity {
    /// `uᵀv / (‖u‖‖v‖)`.
    Cosine,
    /// Raw `uᵀv`.
    Dot,
}

/// `2N` embeddings plus the positive-pair bijection and temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub embeddings: Array2<f64>,
    /// `pairing[i]` is the positive of row `i`; an involution without fixed points.
    pub pairing: Vec<usize>,
    pub temperature: f64,
}

impl EmbeddingBatch {
    pub fn new(embeddings: Array2<f64>, pairing: Vec<usize>, temperature: f64) -> Result<Self> {
        let b = embeddings.nrows();
        if pairing.len() != b {
            return Err(Error::Shape { expected: format!("pairing of length {b}"), actual: pairing.len().to_string() });
        }
        for (i, &j) in pairing.iter().enumerate() {
            if j >= b || j == i || pairing[j] != i {
                return Err(Error::InvalidArgument(format!("pairing is not a fixed-point-free involution at row {i}")));
            }
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self { embeddings, pairing, temperature })
    }

    /// Rows `0..N` are anchors, rows `N..2N` their positives in the same order.
    pub fn from_views(embeddings: Array2<f64>, temperature: f64) -> Result<Self> {
        let b = embeddings.nrows();
        if b % 2 != 0 {
            return Err(Error::Shape { expected: "an even number of rows".into(), actual: b.to_string() });
        }
        let n = b / 2;
        Self::new(embeddings, (0..b).map(|i| (i + n) % b).collect(), temperature)
    }

    pub fn n_pairs(&self) -> usize {
        self.embeddings.nrows() / 2
    }
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape { expected: format!("length {}", u.len()), actual: v.len().to_string() });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 {
        return Err(Error::ZeroNorm { row: 0 });
    }
    if nv == 0.0 {
        return Err(Error::ZeroNorm { row: 1 });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Rows scaled to unit norm; zero rows are an error.
pub fn normalize_rows(z: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms = z.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(row) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNorm { row });
    }
    let u = z / &norms.view().insert_axis(Axis(1));
    Ok((u, norms))
}

/// Full `2N × 2N` similarity matrix.
pub fn similarity_matrix(z: &Array2<f64>, sim: Similarity) -> Result<Array2<f64>> {
    match sim {
        Similarity::Cosine => {
            let (u, _) = normalize_rows(z)?;
            Ok(u.dot(&u.t()))
        }
        Similarity::Dot => Ok(z.dot(&z.t())),
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// `∂loss/∂embeddings`, same shape as the input.
    pub grad: Array2<f64>,
}

/// Mean over all `2N` anchors of
/// `−log( exp(s_{i,p(i)}/τ) / Σ_{k≠i} exp(s_{ik}/τ) )`, max-subtracted.
pub fn contrastive_loss(batch: &EmbeddingBatch, sim: Similarity, temperature: f64) -> Result<LossOutput> {
    let z = &batch.embeddings;
    let b = z.nrows();
    if b < 4 {
        return Err(Error::InvalidArgument(format!("need at least 2 pairs (4 rows), got {b} rows")));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embeddings".into()));
    }
    let (u, norms) = match sim {
        Similarity::Cosine => {
            let (u, n) = normalize_rows(z)?;
            (u, Some(n))
        }
        Similarity::Dot => (z.clone(), None),
    };
    let s = u.dot(&u.t()) / temperature;

    let mut loss = 0.0;
    // dL/ds, zero on the diagonal.
    let mut g = Array2::<f64>::zeros((b, b));
    for i in 0..b {
        let row = s.row(i);
        let m = (0..b).filter(|&k| k != i).map(|k| row[k]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..b).filter(|&k| k != i).map(|k| (row[k] - m).exp()).sum();
        let p = batch.pairing[i];
        loss += -(row[p] - m) + denom.ln();
        for k in (0..b).filter(|&k| k != i) {
            g[[i, k]] = (row[k] - m).exp() / denom;
        }
        g[[i, p]] -= 1.0;
    }
    let scale = 1.0 / b as f64;
    loss *= scale;
    // s_ik is symmetric in (i, k), so each pair feeds both rows.
    let h = (&g + &g.t()) * (scale / temperature);
    let a = h.dot(&u);
    let grad = match norms {
        None => a,
        Some(norms) => {
            let radial = (&a * &u).sum_axis(Axis(1));
            let tangential = a - &u * &radial.insert_axis(Axis(1));
            tangential / &norms.insert_axis(Axis(1))
        }
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(LossOutput { loss, grad })
}

/// NT-Xent: cosine similarity at the batch temperature.
pub fn nt_xent_loss(batch: &EmbeddingBatch) -> Result<f64> {
    Ok(contrastive_loss(batch, Similarity::Cosine, batch.temperature)?.loss)
}

pub fn nt_xent_loss_with_grad(batch: &EmbeddingBatch) -> Result<LossOutput> {
    contrastive_loss(batch, Similarity::Cosine, batch.temperature)
}

/// InfoNCE: raw dot product with unit temperature; the batch temperature is ignored.
pub fn info_nce_loss(batch: &EmbeddingBatch) -> Result<f64> {
    Ok(contrastive_loss(batch, Similarity::Dot, 1.0)?.loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn orthonormal_batch(t: f64) -> EmbeddingBatch {
        let z = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        EmbeddingBatch::new(z, vec![1, 0, 3, 2], t).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[2.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm { .. })));
    }

    #[test]
    fn identical_rows_give_log_of_negatives() {
        let z = Array2::from_elem((4, 3), 0.7);
        let b = EmbeddingBatch::from_views(z, 0.5).unwrap();
        assert!((nt_xent_loss(&b).unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_case() {
        let b = orthonormal_batch(0.5);
        let expected = (1.0 + 2.0 * (-2.0f64).exp()).ln();
        assert!((nt_xent_loss(&b).unwrap() - expected).abs() < 1e-12);
        let info = info_nce_loss(&b).unwrap();
        let e = std::f64::consts::E;
        assert!((info + (e / (e + 2.0)).ln()).abs() < 1e-12);
    }

    #[test]
    fn unit_rows_at_unit_temperature_coincide() {
        let z = array![[0.6, 0.8], [1.0, 0.0], [0.0, -1.0], [-0.8, 0.6]];
        let b = EmbeddingBatch::from_views(z, 1.0).unwrap();
        assert!((nt_xent_loss(&b).unwrap() - info_nce_loss(&b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let z = Array2::from_elem((4, 2), 1.0);
        assert!(EmbeddingBatch::from_views(z.clone(), 0.0).is_err());
        assert!(EmbeddingBatch::new(z.clone(), vec![0, 1, 2, 3], 0.5).is_err());
        let mut nan = z.clone();
        nan[[2, 1]] = f64::NAN;
        let b = EmbeddingBatch::from_views(nan, 0.5).unwrap();
        assert!(matches!(nt_xent_loss(&b), Err(Error::NonFinite(_))));
        let mut zero = z;
        zero[[3, 0]] = 0.0;
        zero[[3, 1]] = 0.0;
        let b = EmbeddingBatch::from_views(zero, 0.5).unwrap();
        assert!(matches!(nt_xent_loss(&b), Err(Error::ZeroNorm { row: 3 })));
        let small = EmbeddingBatch::from_views(Array2::from_elem((2, 2), 1.0), 0.5).unwrap();
        assert!(nt_xent_loss(&small).is_err());
    }
}
