//! Dehazes one image and writes the three confidence maps next to it.
//!
//! With a checkpoint the trained network gates the inputs; without one the
//! untrained equal-weight fusion is used, which is only a baseline.
//!
//! ```text
//! cargo run --release --example dehaze -- hazy.png restored.png --model model.gfnc
//! ```

use std::path::PathBuf;

use clap::Parser;
use gfn::derive::derive_inputs;
use gfn::gfn::{dehaze_with_maps, fuse_images, ConfidenceMaps};
use gfn::io::{read_image, write_gray_png, write_image};
use gfn::train::load_checkpoint;

#[derive(Parser)]
struct Args {
    input: PathBuf,
    output: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
}

fn main() -> gfn::Result<()> {
    let args = Args::parse();
    let hazy = read_image(&args.input)?;
    let (h, w) = hazy.dims();
    let (restored, maps) = match &args.model {
        Some(path) => dehaze_with_maps(&hazy, &load_checkpoint(path)?.generator)?,
        None => {
            let maps = ConfidenceMaps::uniform(1, h, w, 1.0 / 3.0);
            (fuse_images(&maps, &derive_inputs(&hazy))?, maps)
        }
    };
    write_image(&args.output, &restored)?;
    let stem = args.output.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    for (name, map) in ["wb", "ce", "gc"].iter().zip(maps.as_array()) {
        let mean = map.data().iter().sum::<f64>() / map.len() as f64;
        let path = args.output.with_file_name(format!("{stem}_map_{name}.png"));
        write_gray_png(&path, h, w, map.data())?;
        println!("{name}: mean confidence {mean:.3} -> {}", path.display());
    }
    Ok(())
}
