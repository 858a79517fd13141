use std::time::Instant;

use deal_lab::cam::{generate_cams, CamConfig};
use deal_lab::synthgen::generate_dataset;

fn main() -> deal_lab::Result<()> {
    let records = generate_dataset(64, [200, 200, 200], 7)?;
    let cfg = CamConfig {
        epochs: 8,
        ..CamConfig::default()
    };
    let t0 = Instant::now();
    let art = generate_cams(&records, &cfg, 7)?;
    println!("generated {} triples in {:.1?}", art.triples.len(), t0.elapsed());
    println!("classifier train accuracy: {:.3}", art.train_accuracy);
    let nonempty = art.triples.iter().filter(|t| !t.standard.is_empty()).count();
    println!("non-empty standard CAMs: {}", nonempty);
    Ok(())
}
