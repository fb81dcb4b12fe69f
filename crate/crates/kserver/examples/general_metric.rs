//! End to end on a random metric: embed, run the barely random algorithm,
//! and compare with the offline optimum in the original metric.

use kserver::harness::{run, ExperimentConfig, GeneratorSpec, InstanceSpec, Mode};
use kserver::rat::fmt;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig {
        mode: Mode::EndToEnd,
        instance: InstanceSpec::RandomMetric { n: 6, max_len: 12 },
        generator: GeneratorSpec::Uniform,
        k: 2,
        steps: 60,
        seed: 5,
        ..Default::default()
    };
    let s = run(&cfg)?.summary;
    println!("expected cost {} (sampled member {:?}: {})", fmt(&s.totals.ensemble), s.sampled_member, fmt(&s.totals.sampled));
    println!("OPT {}, ratio {:.3}", s.opt.unwrap_or_default(), s.ratio.unwrap_or(f64::NAN));
    println!("bits: {} for the embedding, {} for the draw", s.bits.embedding, s.bits.sampling);
    Ok(())
}
