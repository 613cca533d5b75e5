//! Trains on a single hazy/clean pair with the content loss only and reports
//! the loss curve and the PSNR gain. A quick way to see that the whole
//! forward/backward/Adam loop learns.
//!
//! ```text
//! cargo run --release --example overfit -- --iters 500
//! ```

use std::time::Instant;

use clap::Parser;
use gfn::gfn::{dehaze, GfnConfig};
use gfn::hazesim::{synthesize_variant, VariantOverrides};
use gfn::metrics::psnr;
use gfn::scene::procedural_scene;
use gfn::train::{train, Telemetry, TrainConfig, TrainHooks, TrainingPair, TrainingSet};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 500)]
    iters: u64,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 3)]
    scales: usize,
}

fn main() -> gfn::Result<()> {
    let args = Args::parse();
    let (clean, depth) = procedural_scene(61, args.size, args.size)?;
    let hazy = synthesize_variant(&clean, &depth, true, 62, VariantOverrides::default())?.hazy;
    let set = TrainingSet::new(vec![TrainingPair {
        hazy: hazy.clone(),
        clean: clean.clone(),
    }])?;
    let cfg = TrainConfig {
        model: GfnConfig {
            scale_count: args.scales,
            ..Default::default()
        },
        patch_size: args.size,
        batch_size: 1,
        total_iters: args.iters,
        adversarial_enabled: false,
        ..Default::default()
    };

    let start = Instant::now();
    let mut window = Vec::new();
    let mut log = |t: &Telemetry| {
        window.push(t.l_cont);
        if window.len() == 50 {
            let mean = window.iter().sum::<f64>() / 50.0;
            println!("iters {:>5}: mean loss {mean:.5}", t.iteration + 1);
            window.clear();
        }
    };
    let ckpt = train(
        &cfg,
        &set,
        None,
        &mut TrainHooks {
            on_step: Some(&mut log),
            ..Default::default()
        },
    )?;
    let before = psnr(&hazy, &clean)?;
    let after = psnr(&dehaze(&hazy, &ckpt.generator)?, &clean)?;
    println!(
        "PSNR {before:.2} -> {after:.2} dB ({:+.2}) in {:.0} s",
        after - before,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
