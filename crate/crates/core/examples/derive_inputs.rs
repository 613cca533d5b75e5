//! Builds a hazy procedural scene and writes the three derived inputs the
//! network fuses: white balanced, contrast enhanced and gamma corrected.
//!
//! ```text
//! cargo run --example derive_inputs -- out/derived
//! ```

use std::path::PathBuf;

use gfn::derive::{derive_inputs, mean_luminance, white_balance};
use gfn::hazesim::{synthesize_variant, VariantOverrides};
use gfn::io::write_image;
use gfn::scene::procedural_scene;

fn main() -> gfn::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "derived".into()));
    std::fs::create_dir_all(&out).map_err(|e| gfn::Error::io(&out, e))?;

    let (clean, depth) = procedural_scene(3, 96, 128)?;
    let hazy = synthesize_variant(&clean, &depth, true, 11, VariantOverrides::default())?.hazy;

    let lum = mean_luminance(&hazy);
    let wb = white_balance(&hazy);
    println!("mean luminance {:.4}, contrast gain {:.4}", lum.mean_luminance, lum.amplification);
    println!("white-balance gains {:.4?}", wb.gains);

    let d = derive_inputs(&hazy);
    for (name, img) in [("hazy", &hazy), ("clean", &clean), ("wb", &d.wb), ("ce", &d.ce), ("gc", &d.gc)] {
        let path = out.join(format!("{name}.png"));
        write_image(&path, img)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
