//! Apply a train-time augmentation pipeline with a fixed seed, twice.

use trunk::config::{regimes, TransformKind, TransformSpec};
use trunk::data::build_pipeline;
use trunk::seed::SeedSource;
use trunk::tensor::{Image, ImageShape};

fn checksum(img: &Image) -> f64 {
    img.data.iter().enumerate().map(|(i, v)| v * (i % 97) as f64).sum()
}

fn main() -> trunk::Result<()> {
    let shape = ImageShape::new(3, 32, 32);
    let raw: Vec<u8> = (0..shape.len()).map(|i| (i * 7 % 256) as u8).collect();
    let img = Image::from_u8(shape, &raw);

    let specs = regimes::regime(3).expect("regime 3").transforms;
    let pipeline = build_pipeline(&specs, shape)?;
    println!("{}", pipeline.describe().join("\n"));

    let seeds = SeedSource::new(42);
    for run in 0..2 {
        let mut rng = seeds.rng("augment");
        let sums: Vec<String> = (0..4)
            .map(|_| format!("{:.1}", checksum(&pipeline.apply(img.clone(), &mut rng))))
            .collect();
        println!("run {run}: {}", sums.join(" "));
    }

    let flip_only = build_pipeline(&[TransformSpec::new(TransformKind::RandomHorizontalFlip)], shape)?;
    println!("flip only, stochastic: {}", flip_only.is_stochastic());
    Ok(())
}
