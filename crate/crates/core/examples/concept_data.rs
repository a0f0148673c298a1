//! Generates every concept's train and reference splits and writes them as
//! CSV under the directory given as the first argument (default `data`).

use std::path::PathBuf;

use imma::concepts::{generate, held_out_specs, pretraining_specs, save_dataset, DEFAULT_REFERENCE, DEFAULT_TRAIN};
use imma::metrics::energy_distance;

fn main() -> imma::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    println!("{:<14} {:>4} {:>8} {:>12}", "concept", "id", "train", "split-half ED");
    for (group, specs) in [("pretraining", pretraining_specs()), ("held out", held_out_specs())] {
        println!("-- {group}");
        for spec in specs {
            let ds = generate(&spec, DEFAULT_TRAIN, DEFAULT_REFERENCE, 0)?;
            let half = ds.reference.len() / 2;
            let ed = energy_distance(&ds.reference[..half], &ds.reference[half..])?;
            println!("{:<14} {:>4} {:>8} {:>12.5}", spec.name(), spec.concept_id, ds.train.len(), ed);
            save_dataset(&ds, &root)?;
        }
    }
    println!("wrote {}", root.display());
    Ok(())
}
