//! Class-balanced embedding export and 2-D PCA projection.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::contrastive::train::to_f64_matrix;
use crate::eval::LabeledImages;
use crate::imaging::{images_to_batch, resize};
use crate::nn::Encoder;
use crate::rng::rng_for_str;
use crate::{Error, Result};

/// Default sample size for exports.
pub const DEFAULT_EXPORT_SAMPLES: usize = 5000;

#[derive(Debug, Clone)]
pub struct EmbeddingExport {
    pub patch_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub features: Array2<f64>,
}

/// Indices of a class-balanced random sample: `n / C` per class (remainder to
/// the lowest class indices), all of a class when it has fewer.
pub fn balanced_sample(labels: &[usize], n_classes: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = rng_for_str(seed, "export");
    let mut out = Vec::with_capacity(n);
    for (c, members) in by_class.iter().enumerate() {
        let want = n / n_classes + usize::from(c < n % n_classes);
        if members.len() < want {
            log::warn!("class {c}: only {} of {want} samples available; taking all", members.len());
        }
        let take = want.min(members.len());
        let mut idx = index::sample(&mut rng, members.len(), take).into_vec();
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|k| members[k]));
    }
    out
}

/// Backbone features of a class-balanced sample of `data`.
pub fn export_embeddings(encoder: &mut Encoder, data: &LabeledImages, n_samples: usize, seed: u64, input_size: u32) -> Result<EmbeddingExport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("nothing to export".into()));
    }
    let idx = balanced_sample(&data.labels, data.n_classes(), n_samples, seed);
    let mut rows = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(256) {
        let views: Vec<_> = chunk
            .iter()
            .map(|&i| {
                let img = &data.images[i];
                if img.width() == input_size && img.height() == input_size { img.clone() } else { resize(img, input_size, input_size) }
            })
            .collect();
        let f = encoder.features(&images_to_batch(&views)?.into_dyn())?;
        rows.push(to_f64_matrix(&f)?);
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let features = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(EmbeddingExport {
        patch_ids: idx.iter().map(|&i| data.ids[i].clone()).collect(),
        labels: idx.iter().map(|&i| data.labels[i]).collect(),
        features,
    })
}

/// `patch_id,label,f0..f{d−1}`.
pub fn write_embeddings_csv(path: &Path, export: &EmbeddingExport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = export.features.ncols();
    let mut header = vec!["patch_id".to_string(), "label".to_string()];
    header.extend((0..d).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for (i, id) in export.patch_ids.iter().enumerate() {
        let mut rec = vec![id.clone(), export.labels[i].to_string()];
        rec.extend(export.features.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm, mutually orthogonal principal axes (one per row).
    pub axes: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl Pca {
    /// Principal axes from the eigendecomposition of the covariance matrix.
    pub fn fit(x: &Array2<f64>, components: usize) -> Result<Self> {
        let (n, d) = x.dim();
        if n < 2 || components == 0 || components > d {
            return Err(Error::InvalidArgument(format!("PCA of {n}x{d} data into {components} components")));
        }
        let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
        let centered = x - &mean;
        let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
        let m = DMatrix::from_row_iterator(d, d, cov.iter().copied());
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let axes = order[..components].iter().map(|&k| eig.eigenvectors.column(k).iter().copied().collect()).collect();
        let explained_variance = order[..components].iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
        Ok(Self { mean: mean.to_vec(), axes, explained_variance })
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let k = self.axes.len();
        Array2::from_shape_fn((x.nrows(), k), |(i, c)| {
            x.row(i).iter().zip(&self.mean).zip(&self.axes[c]).map(|((v, m), a)| (v - m) * a).sum()
        })
    }

    /// Maps projected coordinates back into the input space.
    pub fn inverse_transform(&self, y: &Array2<f64>) -> Array2<f64> {
        let d = self.mean.len();
        Array2::from_shape_fn((y.nrows(), d), |(i, j)| self.mean[j] + (0..self.axes.len()).map(|c| y[[i, c]] * self.axes[c][j]).sum::<f64>())
    }
}

pub fn write_projection_csv(path: &Path, export: &EmbeddingExport, projected: &Array2<f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "patch_id,label,pc1,pc2")?;
    for (i, id) in export.patch_ids.iter().enumerate() {
        writeln!(f, "{id},{},{},{}", export.labels[i], projected[[i, 0]], projected[[i, 1]])?;
    }
    Ok(())
}
