//! Peek at the pretext task: class balance, determinism, and a very short
//! training run against chance level.
//!
//!     cargo run --release --example pretext_scenes

use adapterkit::backbone::{Backbone, ConvBackboneSpec};
use adapterkit::pretext::{pretrain, PretextDataset, NUM_CLASSES};

fn main() -> adapterkit::Result<()> {
    let dataset = PretextDataset::new(5, 1_200);
    let mut counts = [0usize; NUM_CLASSES];
    for i in 0..dataset.train_images {
        counts[dataset.train_example(i).1] += 1;
    }
    println!("class counts over {} images: {counts:?}", dataset.train_images);

    let backbone = Backbone::Conv(ConvBackboneSpec::default());
    let untrained = pretrain::<f32>(&backbone, &dataset, 0, 3, 48)?;
    println!(
        "untrained val accuracy: {:.3} (chance = {:.3}), weak-base flag: {}",
        untrained.val_accuracy,
        1.0 / NUM_CLASSES as f64,
        untrained.weak_base
    );

    let trained = pretrain::<f32>(&backbone, &dataset, 2, 3, 48)?;
    println!(
        "after 2 epochs on {} images: val accuracy {:.3}",
        dataset.train_images, trained.val_accuracy
    );
    Ok(())
}
