//! Barely random paging against the lazy adversary, compared with OPT.

use kserver::harness::{run, ExperimentConfig, GeneratorSpec, InstanceSpec, Mode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(500);
    let cfg = ExperimentConfig {
        mode: Mode::BarelyRandom,
        instance: InstanceSpec::Uniform { n: 4 },
        generator: GeneratorSpec::Lazy,
        k: 3,
        steps,
        ..Default::default()
    };
    let out = run(&cfg)?;
    let s = &out.summary;
    println!("k = {}, m = {}, T = {}, forwarded = {}", s.k, s.m, s.steps, s.forwarded);
    println!("fractional {}", kserver::rat::fmt(&s.totals.stages.fractional));
    println!("ensemble   {}", kserver::rat::fmt(&s.totals.ensemble));
    println!("advised    {}", kserver::rat::fmt(&s.totals.advised));
    println!("OPT        {}", s.opt.as_deref().unwrap_or("n/a"));
    println!("ratio      {:.3}", s.ratio.unwrap_or(f64::NAN));
    println!("bits       {}", s.bits.total);
    Ok(())
}
