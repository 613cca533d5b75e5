//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Criteria 6 and 7 train real models and take several minutes each in an
//! optimized build. Set `GFN_ACCEPTANCE_QUICK=1` to skip them (reported as
//! SKIP, never as PASS).

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use gfn::derive::{contrast_enhance, gamma_correct, white_balance, DerivedInputs};
use gfn::gfn::{adversarial_loss, dehaze, fuse, fuse_images, total_loss, ConfidenceMaps, GfnConfig};
use gfn::hazesim::{
    generate_dataset, synthesize_hazy, synthesize_variant, transmission_from_depth, DepthMap, HazeParams, SynthOptions,
    VariantOverrides,
};
use gfn::image::ImageRGB;
use gfn::metrics::{evaluate, psnr, ssim, EvalOptions, HazeGrouping, Identity};
use gfn::scene::{procedural_scene, write_procedural_pairs};
use gfn::tensor::Tensor;
use gfn::train::{
    adam_step, load_checkpoint, lr_at, save_checkpoint, train, AdamState, Checkpoint, Telemetry, TrainConfig,
    TrainHooks, TrainingPair, TrainingSet,
};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn derived_input_goldens() -> Outcome {
    let start = Instant::now();
    let g = gamma_correct(&ImageRGB::filled(1, 1, 0.5).unwrap(), 1.0, 2.5).unwrap().get(0, 0, 0);
    if (g - 0.176777).abs() > 1e-6 {
        return Err(format!("gamma_correct(0.5) = {g}"));
    }
    let two = ImageRGB::new(1, 2, vec![0.2, 0.2, 0.2, 0.6, 0.6, 0.6]).unwrap();
    let ce = contrast_enhance(&two);
    let (lo, hi) = (ce.get(0, 0, 0), ce.get(0, 1, 0));
    if lo.abs() > 1e-6 || (hi - 0.36).abs() > 1e-6 {
        return Err(format!("contrast_enhance gave {{{lo}, {hi}}}"));
    }
    let mut r = common::rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let tint: [f64; 3] = [r.random_range(0.5..1.0), r.random_range(0.5..1.0), r.random_range(0.5..1.0)];
        let img = ImageRGB::from_fn(16, 16, |_, _, c| tint[c] * r.random_range(0.1..0.6)).unwrap();
        let m = white_balance(&img).image.channel_means();
        let avg = (m[0] + m[1] + m[2]) / 3.0;
        for v in m {
            worst = worst.max((v - avg).abs() / avg);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-6 && secs < 1.0,
        format!("gamma {g:.6}, contrast {{{lo:.6}, {hi:.6}}}, white balance spread {worst:.1e}, {secs:.2} s"),
    )
}

fn haze_round_trip() -> Outcome {
    let start = Instant::now();
    let mut r = common::rng(2);
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for trial in 0..100 {
        let (h, w) = (8, 8);
        let clean = ImageRGB::from_fn(h, w, |_, _, _| r.random::<f64>()).unwrap();
        let depth = DepthMap::new(h, w, (0..h * w).map(|_| r.random_range(0.0..4.0)).collect()).unwrap();
        let params = HazeParams {
            atmospheric_light: r.random_range(0.8..1.0),
            scattering_coefficient: r.random_range(0.5..1.5),
            noise_sigma: 0.0,
        };
        let t = transmission_from_depth(&depth, params.scattering_coefficient, false).unwrap();
        let hazy = synthesize_hazy(&clean, &t, &params, trial).unwrap();
        let a = params.atmospheric_light;
        for (p, &tv) in t.data().iter().enumerate() {
            for c in 0..3 {
                let (y, x) = (p / w, p % w);
                let (i, j) = (hazy.get(y, x, c), clean.get(y, x, c));
                if i < j.min(a) - 1e-12 || i > j.max(a) + 1e-12 {
                    return Err(format!("trial {trial}: {i} outside [{j}, {a}]"));
                }
                if tv >= 0.05 {
                    worst = worst.max(((i - a * (1.0 - tv)) / tv - j).abs());
                    checked += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-6 && secs < 5.0,
        format!("max inversion error {worst:.1e} over {checked} values, convex bound holds, {secs:.2} s"),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let ops = common::all_op_errors();
    let (worst_name, worst_op) = ops
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, e)| (n.clone(), *e))
        .unwrap();
    let (_, net) = common::generator_errors();
    let disc = common::discriminator_error();
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst_op < common::TOLERANCE && net < common::TOLERANCE && disc < common::TOLERANCE && secs < 60.0,
        format!(
            "{} ops, worst {worst_name} {worst_op:.1e}; dL_total/dΘ {net:.1e}; discriminator {disc:.1e}; {secs:.1} s",
            ops.len()
        ),
    )
}

fn fusion_identities() -> Outcome {
    let mut r = common::rng(4);
    let img = |r: &mut rand_chacha::ChaCha8Rng| ImageRGB::from_fn(6, 5, |_, _, _| r.random::<f64>()).unwrap();
    let d = DerivedInputs {
        wb: img(&mut r),
        ce: img(&mut r),
        gc: img(&mut r),
        wb_degenerate: false,
    };
    let ones = Tensor::full([1, 1, 6, 5], 1.0);
    let zeros = Tensor::zeros([1, 1, 6, 5]);
    for k in 0..3 {
        let pick = |i: usize| if i == k { ones.clone() } else { zeros.clone() };
        let maps = ConfidenceMaps {
            wb: pick(0),
            ce: pick(1),
            gc: pick(2),
        };
        if fuse_images(&maps, &d).unwrap() != *d.as_array()[k] {
            return Err(format!("one-hot map {k} does not reproduce its input"));
        }
    }
    let v = img(&mut r);
    let same = DerivedInputs {
        wb: v.clone(),
        ce: v.clone(),
        gc: v.clone(),
        wb_degenerate: false,
    };
    let out = fuse_images(&ConfidenceMaps::uniform(1, 6, 5, 1.0 / 3.0), &same).unwrap();
    let drift = out.data().iter().zip(v.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let maps = ConfidenceMaps {
        wb: Tensor::full([1, 1, 1, 1], 0.5),
        ce: Tensor::full([1, 1, 1, 1], 0.25),
        gc: Tensor::full([1, 1, 1, 1], 0.25),
    };
    let inputs = [0.4, 0.8, 0.2].map(|v| Tensor::full([1, 3, 1, 1], v));
    let j = fuse(&maps, [&inputs[0], &inputs[1], &inputs[2]]).unwrap();
    let exact = j.data().iter().all(|&x| x == 0.45);
    ensure(
        exact && drift <= 2.0 * f64::EPSILON,
        format!("one-hot exact, equal maps drift {drift:.1e} (rounding of 1/3), 0.5/0.25/0.25 -> {}", j.data()[0]),
    )
}

fn metric_oracles() -> Outcome {
    let a = ImageRGB::filled(16, 16, 0.5).unwrap();
    let b = ImageRGB::filled(16, 16, 0.6).unwrap();
    let p = psnr(&a, &b).unwrap();
    let mut r = common::rng(5);
    let x = ImageRGB::from_fn(16, 16, |_, _, _| r.random::<f64>()).unwrap();
    let s_same = ssim(&x, &x).unwrap();
    let zero = ImageRGB::filled(16, 16, 0.0).unwrap();
    let one = ImageRGB::filled(16, 16, 1.0).unwrap();
    let s01 = ssim(&zero, &one).unwrap();
    let mut naive_gap: f64 = 0.0;
    for _ in 0..20 {
        let (a, b) = common::random_pair(&mut r);
        naive_gap = naive_gap
            .max((psnr(&a, &b).unwrap() - common::naive_psnr(&a, &b)).abs())
            .max((ssim(&a, &b).unwrap() - common::naive_ssim(&a, &b)).abs());
    }
    ensure(
        (p - 20.0).abs() < 1e-12 && (s_same - 1.0).abs() < 1e-12 && (s01 - 9.999e-5).abs() < 1e-9 && naive_gap < 1e-8,
        format!("PSNR {p:.15} dB, SSIM(x,x) {s_same:.15}, SSIM(0,1) {s01:.6e}, naive gap on 20 pairs {naive_gap:.1e}"),
    )
}

fn overfit_oracle() -> Outcome {
    let start = Instant::now();
    let (clean, depth) = procedural_scene(61, 128, 128).map_err(|e| e.to_string())?;
    let hazy = synthesize_variant(&clean, &depth, true, 62, VariantOverrides::default())
        .map_err(|e| e.to_string())?
        .hazy;
    let set = TrainingSet::new(vec![TrainingPair {
        hazy: hazy.clone(),
        clean: clean.clone(),
    }])
    .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        patch_size: 128,
        batch_size: 1,
        total_iters: 500,
        adversarial_enabled: false,
        seed: 6,
        ..Default::default()
    };
    let mut losses = Vec::new();
    let mut record = |t: &Telemetry| losses.push(t.l_total);
    let ckpt = train(
        &cfg,
        &set,
        None,
        &mut TrainHooks {
            on_step: Some(&mut record),
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let windows: Vec<f64> = losses.chunks(50).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    let decreasing = windows.windows(2).all(|p| p[1] < p[0]);
    let before = psnr(&hazy, &clean).unwrap();
    let after = psnr(&dehaze(&hazy, &ckpt.generator).map_err(|e| e.to_string())?, &clean).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let trace: Vec<String> = windows.iter().map(|v| format!("{v:.4}")).collect();
    ensure(
        decreasing && after - before >= 3.0 && secs < 600.0,
        format!(
            "window means [{}], PSNR {before:.2} -> {after:.2} dB ({:+.2}), {secs:.0} s",
            trace.join(" "),
            after - before
        ),
    )
}

fn generalization_oracle(work: &Path) -> Outcome {
    let start = Instant::now();
    let size = (64, 64);
    let err = |e: gfn::Error| e.to_string();
    let opts = SynthOptions {
        raw_output: true,
        ..Default::default()
    };
    let train_src = write_procedural_pairs(work.join("src_train"), 20, 1000, size, 10.0, true).map_err(err)?;
    let test_src = write_procedural_pairs(work.join("src_test"), 5, 9000, size, 10.0, true).map_err(err)?;
    let train_set = generate_dataset(&train_src, &opts, work.join("train")).map_err(err)?;
    let test_set = generate_dataset(
        &test_src,
        &SynthOptions {
            global_seed: 1_000_000,
            ..opts.clone()
        },
        work.join("test"),
    )
    .map_err(err)?;
    let set = TrainingSet::from_manifest(&train_set).map_err(err)?;
    let grouping = HazeGrouping::None;
    let score = |m: &dyn gfn::metrics::Dehazer| -> Result<f64, String> {
        let report = evaluate(&test_set, m, &grouping, EvalOptions::default()).map_err(err)?;
        Ok(report.group("all").unwrap().mean_psnr)
    };
    let hazy = score(&Identity)?;
    let mut results = Vec::new();
    for scales in [3, 1] {
        let cfg = TrainConfig {
            model: GfnConfig {
                scale_count: scales,
                ..Default::default()
            },
            patch_size: 32,
            batch_size: 4,
            lr0: 5e-4,
            total_iters: 5000,
            adversarial_enabled: false,
            ..Default::default()
        };
        let ckpt = train(&cfg, &set, None, &mut TrainHooks::default()).map_err(err)?;
        results.push(score(&ckpt.generator)?);
    }
    let (multi, single) = (results[0], results[1]);
    let secs = start.elapsed().as_secs_f64();
    ensure(
        multi - hazy >= 1.0 && multi > single && secs < 7200.0,
        format!(
            "hazy {hazy:.2} dB, 3-scale {multi:.2} dB ({:+.2}), 1-scale {single:.2} dB, {:.0} min",
            multi - hazy,
            secs / 60.0
        ),
    )
}

fn schedule_and_optimizer() -> Outcome {
    let cfg = TrainConfig::default();
    let (a, b) = (lr_at(10_000, &cfg), lr_at(25_000, &cfg));
    let mut theta = Tensor::scalar(0.0);
    let mut state = AdamState::new([&theta]);
    adam_step(&mut [&mut theta], &[Tensor::scalar(1.0)], &mut state, 1e-4, &cfg).map_err(|e| e.to_string())?;
    let step = theta.data()[0];
    ensure(
        a == 7.5e-5 && b == 5.625e-5 && (step + 1e-4).abs() <= 1e-10,
        format!("lr_at(10000) = {a:e}, lr_at(25000) = {b:e}, first Adam step {step:e}"),
    )
}

fn determinism_and_checkpointing(work: &Path) -> Outcome {
    let err = |e: gfn::Error| e.to_string();
    let pairs = (0..2)
        .map(|k| {
            let (clean, depth) = procedural_scene(70 + k, 40, 40)?;
            let hazy = synthesize_variant(&clean, &depth, true, 80 + k, VariantOverrides::default())?.hazy;
            Ok(TrainingPair { hazy, clean })
        })
        .collect::<gfn::Result<Vec<_>>>()
        .map_err(err)?;
    let set = TrainingSet::new(pairs).map_err(err)?;
    let cfg = TrainConfig {
        patch_size: 32,
        batch_size: 2,
        total_iters: 6,
        seed: 9,
        ..Default::default()
    };
    let run = |resume: Option<Checkpoint>, stop: Option<u64>| {
        train(
            &cfg,
            &set,
            resume,
            &mut TrainHooks {
                stop_at: stop,
                ..Default::default()
            },
        )
    };
    let first = run(None, None).map_err(err)?.to_bytes().map_err(err)?;
    let second = run(None, None).map_err(err)?.to_bytes().map_err(err)?;
    let half = run(None, Some(3)).map_err(err)?;
    let path = work.join("half.gfnc");
    save_checkpoint(&half, &path).map_err(err)?;
    let on_disk = std::fs::read(&path).map_err(|e| e.to_string())?;
    let reloaded = load_checkpoint(&path).map_err(err)?;
    let round_trip = reloaded.to_bytes().map_err(err)? == on_disk;
    let resumed = run(Some(reloaded), None).map_err(err)?.to_bytes().map_err(err)?;
    ensure(
        first == second && resumed == first && round_trip,
        format!(
            "repeat identical: {}, resume at 3 of 6 identical: {}, round trip identical: {} ({} bytes)",
            first == second,
            resumed == first,
            round_trip,
            first.len()
        ),
    )
}

fn loss_arithmetic() -> Outcome {
    let adv = adversarial_loss(&[0.5], &[0.5]).map_err(|e| e.to_string())?;
    let total = total_loss(1.0, -1.386294);
    ensure(
        (adv + 1.386294).abs() <= 1e-6 && (total - 0.998614).abs() <= 1e-6,
        format!("adversarial(0.5, 0.5) = {adv:.6}, total(1, -1.386294) = {total:.6}"),
    )
}

type Criterion<'a> = (u32, &'static str, Box<dyn Fn() -> Outcome + 'a>, bool);

fn main() {
    let quick = std::env::var_os("GFN_ACCEPTANCE_QUICK").is_some();
    let work = tempfile::tempdir().expect("temporary directory");
    let w = work.path();
    let criteria: Vec<Criterion> = vec![
        (1, "derived-input goldens", Box::new(derived_input_goldens), false),
        (2, "haze model round trip", Box::new(haze_round_trip), false),
        (3, "gradient correctness", Box::new(gradient_correctness), false),
        (4, "fusion identities", Box::new(fusion_identities), false),
        (5, "metric oracles", Box::new(metric_oracles), false),
        (6, "overfit oracle", Box::new(overfit_oracle), true),
        (7, "small generalization oracle", Box::new(move || generalization_oracle(w)), true),
        (8, "schedule and optimizer exactness", Box::new(schedule_and_optimizer), false),
        (9, "determinism and checkpointing", Box::new(move || determinism_and_checkpointing(w)), false),
        (10, "loss arithmetic", Box::new(loss_arithmetic), false),
    ];
    let mut failed = 0;
    for (n, name, check, slow) in &criteria {
        if *slow && quick {
            println!("SKIP criterion {n:>2} {name}: GFN_ACCEPTANCE_QUICK is set");
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {n:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n:>2} {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
