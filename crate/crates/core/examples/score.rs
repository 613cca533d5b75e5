//! PSNR and SSIM of hazy inputs against their clean images, grouped into
//! light, medium and heavy haze by β.

use gfn::hazesim::{generate_dataset, SynthOptions};
use gfn::metrics::{evaluate, EvalOptions, HazeGrouping, Identity, HAZE_LEVELS};
use gfn::scene::write_procedural_pairs;

fn main() -> gfn::Result<()> {
    let work = tempfile::tempdir().map_err(|e| gfn::Error::Format(e.to_string()))?;
    let pairs = write_procedural_pairs(work.path().join("scenes"), 4, 500, (64, 64), 10.0, true)?;
    let opts = SynthOptions {
        variants_per_image: 3,
        betas: Some(HAZE_LEVELS.iter().map(|&(_, b)| b).collect()),
        raw_output: true,
        ..Default::default()
    };
    let manifest = generate_dataset(&pairs, &opts, work.path().join("hazy"))?;
    for eight_bit in [false, true] {
        let report = evaluate(&manifest, &Identity, &HazeGrouping::default(), EvalOptions { eight_bit })?;
        println!("{}", if eight_bit { "8-bit" } else { "float" });
        print!("{}", report.to_table("hazy input"));
    }
    Ok(())
}
