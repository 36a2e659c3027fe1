//! Trains supervised, unnormalized and normalized models on seeded splits of
//! the default synthetic task and prints held-out type accuracy.
//!
//! Usage: cargo run --release --example trend -- [seeds] [first_seed] [config]
//!
//! `config` defaults to data/trend.cfg; its mode is overridden per run.

use std::path::Path;
use std::time::Instant;

use diffreason::fol::parse_kb;
use diffreason::synth::{generate, SynthConfig};
use diffreason::train::{train, Mode, TrainConfig};
use rayon::prelude::*;

const KB: &str = include_str!("../data/furniture.kb");
const CONFIG: &str = include_str!("../data/trend.cfg");

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map_or(20, |s| s.parse().expect("seed count"));
    let first: u64 = args.get(2).map_or(0, |s| s.parse().expect("first seed"));
    let base = match args.get(3) {
        Some(path) => TrainConfig::read(Path::new(path)).expect("config"),
        None => TrainConfig::parse(CONFIG, Path::new("trend.cfg")).expect("bundled config"),
    };
    let kb = parse_kb(KB).expect("bundled rules parse");
    let modes = [Mode::Supervised, Mode::Unnormalized, Mode::Normalized];
    let start = Instant::now();
    let rows: Vec<(u64, Vec<f64>)> = (first..first + seeds)
        .into_par_iter()
        .map(|seed| {
            let data = generate(&SynthConfig { seed, ..SynthConfig::default() }, &kb).expect("generate");
            let accs = modes
                .par_iter()
                .map(|&mode| {
                    let config = TrainConfig { mode, seed, log_every: 0, ..base.clone() };
                    let out = train(&data, &kb, &config).expect("train");
                    out.records.last().and_then(|r| r.type_accuracy).unwrap_or(f64::NAN)
                })
                .collect();
            (seed, accs)
        })
        .collect();
    let mut sums = [0.0; 3];
    let mut wins = 0;
    for (seed, accs) in &rows {
        println!("seed {seed:2}: supervised {:.4}  unnormalized {:.4}  normalized {:.4}", accs[0], accs[1], accs[2]);
        for k in 0..3 {
            sums[k] += accs[k];
        }
        wins += usize::from(accs[2] > accs[0]);
    }
    let n = rows.len() as f64;
    println!(
        "mean: supervised {:.4}  unnormalized {:.4}  normalized {:.4}  (normalized beats supervised in {wins}/{})",
        sums[0] / n,
        sums[1] / n,
        sums[2] / n,
        rows.len()
    );
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
}
