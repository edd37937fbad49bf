use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::contrastive::EmbeddingBatch;

fn oracle(batch: &EmbeddingBatch, threshold: f64) -> (u64, u64) {
    let z = &batch.embeddings;
    let (mut above, mut total) = (0, 0);
    for i in 0..z.nrows() {
        for k in 0..z.nrows() {
            if k == i || k == batch.pairing[i] {
                continue;
            }
            let dot: f64 = z.row(i).dot(&z.row(k));
            let s = dot / (z.row(i).dot(&z.row(i)).sqrt() * z.row(k).dot(&z.row(k)).sqrt());
            above += u64::from(s > threshold);
            total += 1;
        }
    }
    (above, total)
}

#[test]
fn matches_brute_force_and_histogram_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20 {
        let z = Array2::from_shape_fn((12, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let b = EmbeddingBatch::from_views(z, 0.5).unwrap();
        let stats = false_negative_stats(std::slice::from_ref(&b), &[0.9, 0.5]).unwrap();
        let (above, total) = oracle(&b, 0.5);
        assert_eq!(stats.n_pairs, total);
        assert_eq!(stats.fraction(0.5).unwrap(), above as f64 / total as f64);
        assert_eq!(stats.histogram.iter().sum::<u64>(), stats.n_pairs);
    }
}

#[test]
fn extremes_and_constructed_batch() {
    let same = EmbeddingBatch::from_views(Array2::from_elem((6, 4), 1.0), 0.5).unwrap();
    assert_eq!(false_negative_stats(&[same], &[0.9]).unwrap().fraction(0.9), Some(1.0));
    let eye = EmbeddingBatch::from_views(Array2::eye(6), 0.5).unwrap();
    assert_eq!(false_negative_stats(&[eye], &[0.9]).unwrap().fraction(0.9), Some(0.0));
    let z = array![
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0]
    ];
    let b = EmbeddingBatch::from_views(z, 0.5).unwrap();
    let stats = false_negative_stats(&[b], &[0.9]).unwrap();
    assert_eq!(stats.n_pairs, 48);
    assert_eq!(stats.fraction(0.9), Some(0.125));
}

#[test]
fn rejects_tiny_batches() {
    let b = EmbeddingBatch::from_views(Array2::eye(2), 0.5).unwrap();
    assert!(false_negative_stats(&[b], &[0.9]).is_err());
}

#[test]
fn bins_cover_closed_interval() {
    assert_eq!(bin_index(-1.0), 0);
    assert_eq!(bin_index(1.0), HISTOGRAM_BINS - 1);
    assert_eq!(bin_index(0.0), HISTOGRAM_BINS / 2);
}

#[test]
fn pca_recovers_planted_plane() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let basis = Array2::from_shape_fn((2, 6), |_| rng.sample::<f64, _>(StandardNormal));
    let coeffs = Array2::from_shape_fn((40, 2), |_| rng.sample::<f64, _>(StandardNormal));
    let offset = Array2::from_shape_fn((1, 6), |_| rng.random::<f64>());
    let x = coeffs.dot(&basis) + &offset;
    let pca = Pca::fit(&x, 2).unwrap();
    let recon = pca.inverse_transform(&pca.transform(&x));
    let err = (&recon - &x).iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(err < 1e-8, "{err}");
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    assert!((dot(&pca.axes[0], &pca.axes[0]) - 1.0).abs() < 1e-10);
    assert!((dot(&pca.axes[1], &pca.axes[1]) - 1.0).abs() < 1e-10);
    assert!(dot(&pca.axes[0], &pca.axes[1]).abs() < 1e-10);
    assert!(pca.explained_variance[0] >= pca.explained_variance[1]);
}

#[test]
fn balanced_sample_is_even_and_deterministic() {
    let labels: Vec<usize> = (0..100).map(|i| i % 5).collect();
    let s = balanced_sample(&labels, 5, 10, 3);
    for c in 0..5 {
        assert_eq!(s.iter().filter(|&&i| labels[i] == c).count(), 2);
    }
    assert_eq!(s, balanced_sample(&labels, 5, 10, 3));
    let all = balanced_sample(&labels, 5, 1000, 3);
    assert_eq!(all.len(), 100);
}

#[test]
fn plots_render() {
    let h = render_histogram(&[1, 5, 3, 0, 2], 100, 60);
    assert_eq!(h.dimensions(), (100, 60));
    let pts = array![[0.0, 0.0], [1.0, 2.0], [0.5, 1.0]];
    let s = render_scatter(&pts, &[0, 1, 2], 80);
    assert!(s.pixels().any(|p| p.0 != [255, 255, 255] && p.0 != [0, 0, 0]));
}
