//! NT-Xent on hand-built batches: closed forms, temperature, gradients, and
//! the unnormalised InfoNCE variant.

use histoclr::contrastive::{info_nce_loss, nt_xent_loss, nt_xent_loss_with_grad, similarity_matrix, EmbeddingBatch, Similarity};
use ndarray::{array, Array2};

fn main() -> histoclr::Result<()> {
    // Every view identical: the positive is indistinguishable from 2N-2 negatives.
    for n in [2usize, 8, 128] {
        let z = Array2::from_elem((2 * n, 4), 1.0);
        let loss = nt_xent_loss(&EmbeddingBatch::from_views(z, 0.5)?)?;
        println!("N={n:<4} loss {loss:.6}  log(2N-1) {:.6}", ((2 * n - 1) as f64).ln());
    }

    // Two pairs on orthogonal axes, views of a pair identical.
    let z = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
    for tau in [0.1, 0.5, 1.0] {
        let loss = nt_xent_loss(&EmbeddingBatch::from_views(z.clone(), tau)?)?;
        println!("tau {tau:<4} loss {loss:.6}");
    }

    let z = array![[0.9, 0.1, 0.0], [0.0, 1.0, 0.2], [1.0, 0.0, 0.1], [0.1, 0.8, 0.0]];
    let batch = EmbeddingBatch::from_views(z.clone(), 0.5)?;
    println!("cosine similarities\n{:.3}", similarity_matrix(&z, Similarity::Cosine)?);
    let out = nt_xent_loss_with_grad(&batch)?;
    println!("loss {:.6}\ngradient\n{:.4}", out.loss, out.grad);
    println!("InfoNCE (dot product, tau 1): {:.6}", info_nce_loss(&batch)?);
    Ok(())
}
