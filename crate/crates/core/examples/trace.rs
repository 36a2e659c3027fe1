//! Prints the diagnostics trajectory of one training run on the default
//! synthetic task, using the settings of data/trend.cfg.
//!
//! Usage: cargo run --release --example trace -- [mode] [seed]

use std::path::Path;

use diffreason::diagnostics::emit_csv;
use diffreason::fol::parse_kb;
use diffreason::synth::{generate, SynthConfig};
use diffreason::train::TrainConfig;

const KB: &str = include_str!("../data/furniture.kb");
const CONFIG: &str = include_str!("../data/trend.cfg");

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map_or("normalized", String::as_str).parse().expect("mode");
    let seed = args.get(2).map_or(0, |s| s.parse().expect("seed"));
    let kb = parse_kb(KB).expect("bundled rules parse");
    let data = generate(&SynthConfig { seed, ..SynthConfig::default() }, &kb).expect("generate");
    let base = TrainConfig::parse(CONFIG, Path::new("trend.cfg")).expect("bundled config");
    let config = TrainConfig { mode, seed, log_every: base.iterations / 10, ..base };
    let out = diffreason::train::train(&data, &kb, &config).expect("train");
    emit_csv(&out.records, std::io::stdout()).expect("stdout");
}
