//! Generates procedural clean/depth pairs and a hazy dataset from them, then
//! prints the manifest: one line per hazy variant with its haze parameters.
//!
//! ```text
//! cargo run --example synthesize -- --scenes 3 --out out/dataset
//! ```

use std::path::PathBuf;

use clap::Parser;
use gfn::hazesim::{generate_dataset, SynthOptions, MANIFEST_FILE};
use gfn::scene::write_procedural_pairs;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 2)]
    scenes: usize,
    #[arg(long, default_value_t = 7)]
    variants: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "dataset")]
    out: PathBuf,
}

fn main() -> gfn::Result<()> {
    let args = Args::parse();
    let pairs = write_procedural_pairs(args.out.join("scenes"), args.scenes, 100, (args.size, args.size), 10.0, false)?;
    let opts = SynthOptions {
        variants_per_image: args.variants,
        global_seed: args.seed,
        ..Default::default()
    };
    let manifest = generate_dataset(&pairs, &opts, &args.out)?;
    println!("{:<20} {:>6} {:>6} {:>6}", "hazy", "A", "beta", "sigma");
    for e in &manifest.entries {
        println!(
            "{:<20} {:>6.3} {:>6.3} {:>6.3}",
            e.hazy_path, e.atmospheric_light, e.beta, e.noise_sigma
        );
    }
    println!("manifest: {}", args.out.join(MANIFEST_FILE).display());
    Ok(())
}
