//! Generate a small synthetic capsule-endoscopy dataset and write it to
//! disk as PPM images + PGM oracle masks with a JSON manifest.
//!
//!     cargo run --release --example generate_dataset

use deal_lab::synthgen::{
    generate_dataset, save_dataset, split_folds, ClassLabel, DatasetManifest, GENERATOR_VERSION,
};

fn main() -> deal_lab::Result<()> {
    let counts = [20, 20, 20];
    let samples = generate_dataset(64, counts, 42)?;
    let labels: Vec<ClassLabel> = samples.iter().map(|s| s.class_label).collect();
    let manifest = DatasetManifest {
        seed: 42,
        image_size: 64,
        counts,
        k_folds: 5,
        fold_of: split_folds(&labels, 5, 42)?,
        generator_version: GENERATOR_VERSION.to_string(),
    };

    for class in [ClassLabel::Normal, ClassLabel::Vascular, ClassLabel::Inflammatory] {
        let of_class: Vec<_> = samples.iter().filter(|s| s.class_label == class).collect();
        let fg: usize = of_class.iter().map(|s| s.oracle_mask.count()).sum();
        println!(
            "{:?}: {} samples, {:.2}% mean foreground",
            class,
            of_class.len(),
            100.0 * fg as f64 / (of_class.len() * 64 * 64) as f64
        );
    }

    let out = std::env::temp_dir().join("deal-lab-dataset");
    save_dataset(&out, &samples, &manifest)?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}
