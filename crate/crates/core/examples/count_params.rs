//! Trainable parameter counts over the width and depth grids.

use arbsr::generator::{count_params, GeneratorConfig};

fn main() {
    let base = GeneratorConfig::default();
    println!("default (d={}, w={}): {}", base.depth, base.width, count_params(&base));
    println!("tiny: {}", count_params(&GeneratorConfig::tiny()));
    for w in [4, 8, 16, 32, 64, 128] {
        let c = count_params(&GeneratorConfig { width: w, ..base.clone() });
        println!("w={w:<4} {:.3}M", c as f64 / 1e6);
    }
    for d in [2, 4, 8, 16, 32, 64] {
        let c = count_params(&GeneratorConfig { depth: d, ..base.clone() });
        println!("d={d:<4} {:.3}M", c as f64 / 1e6);
    }
}
