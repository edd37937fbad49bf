//! Export backbone embeddings of a class-balanced sample and project them on
//! their first two principal components.

use histoclr::data::{build_desk_corpus, DeskCorpusConfig, Split};
use histoclr::diagnostics::{export_embeddings, render_scatter, save_png, write_embeddings_csv, write_projection_csv, Pca};
use histoclr::eval::LabeledImages;
use histoclr::nn::{Encoder, EncoderConfig};
use rand::SeedableRng;

fn main() -> histoclr::Result<()> {
    let corpus = build_desk_corpus(&DeskCorpusConfig { unsupervised_slides: 1, ..DeskCorpusConfig::default() })?;
    let test = LabeledImages::from_patch_set(&corpus.labeled, Split::Test)?;
    let mut encoder = Encoder::new(EncoderConfig::small_cnn(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
    let export = export_embeddings(&mut encoder, &test, 300, 0, 32)?;
    let pca = Pca::fit(&export.features, 2)?;
    let projected = pca.transform(&export.features);

    let out = std::env::temp_dir().join("histoclr_embedding_export");
    std::fs::create_dir_all(&out)?;
    write_embeddings_csv(&out.join("embeddings.csv"), &export)?;
    write_projection_csv(&out.join("pca.csv"), &export, &projected)?;
    save_png(&render_scatter(&projected, &export.labels, 400), &out.join("pca.png"))?;
    println!("{} embeddings of dim {}, explained variance {:.4?}", export.labels.len(), export.features.ncols(), pca.explained_variance);
    println!("written to {}", out.display());
    Ok(())
}
