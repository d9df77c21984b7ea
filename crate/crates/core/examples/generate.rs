//! One generator, many scales: super-resolves a degraded phantom slice at
//! non-integer factors and prints the output sizes.
//!
//! `cargo run --example generate`

use arbsr::data::{degrade, phantom_volumes, DatasetProfile};
use arbsr::generator::{Generator, GeneratorConfig};
use arbsr::nn::InitScheme;

fn main() -> arbsr::Result<()> {
    let (_, vol) = phantom_volumes(&DatasetProfile::builtin("phantom")?, 1, 4, 0)?.remove(0);
    let hr = vol.slice(2);
    let g = Generator::new(GeneratorConfig::tiny(), 0, InitScheme::KaimingUniform)?;
    for s in [1.3, 2.0, 2.7, 3.3, 4.0] {
        let lr = degrade(&hr, s)?;
        let sr = g.generate(&lr, s)?;
        println!("s={s:<5} lr {:?} -> sr {:?}", &lr.shape()[1..], &sr.shape()[1..]);
    }
    Ok(())
}
