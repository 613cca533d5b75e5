//! Interrupts a training run, saves a checkpoint, resumes from the file and
//! checks the result is byte-identical to an uninterrupted run.

use gfn::scene::procedural_scene;
use gfn::hazesim::{synthesize_variant, VariantOverrides};
use gfn::train::{load_checkpoint, save_checkpoint, train, TrainConfig, TrainHooks, TrainingPair, TrainingSet};

fn main() -> gfn::Result<()> {
    let pairs = (0..3)
        .map(|k| {
            let (clean, depth) = procedural_scene(k, 48, 48)?;
            let hazy = synthesize_variant(&clean, &depth, true, 10 + k, VariantOverrides::default())?.hazy;
            Ok(TrainingPair { hazy, clean })
        })
        .collect::<gfn::Result<Vec<_>>>()?;
    let set = TrainingSet::new(pairs)?;
    let cfg = TrainConfig {
        patch_size: 32,
        batch_size: 2,
        total_iters: 8,
        seed: 42,
        ..Default::default()
    };

    let straight = train(&cfg, &set, None, &mut TrainHooks::default())?;

    let work = tempfile::tempdir().map_err(|e| gfn::Error::Format(e.to_string()))?;
    let path = work.path().join("half.gfnc");
    let half = train(
        &cfg,
        &set,
        None,
        &mut TrainHooks {
            stop_at: Some(4),
            ..Default::default()
        },
    )?;
    save_checkpoint(&half, &path)?;
    let size = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!("saved after {} iterations ({size} bytes)", half.iteration);

    let resumed = train(&cfg, &set, Some(load_checkpoint(&path)?), &mut TrainHooks::default())?;
    let same = resumed.to_bytes()? == straight.to_bytes()?;
    println!("resumed to {} iterations; identical to uninterrupted run: {same}", resumed.iteration);
    Ok(())
}
