//! Superfluous-request filtering on the far-point instance: the filtered
//! pipeline stops paying once every clustered point is fully covered.

use kserver::harness::{run, ExperimentConfig, GeneratorSpec, InstanceSpec, Mode};
use kserver::rat::fmt;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for steps in [100, 1_000, 10_000] {
        let cfg = ExperimentConfig {
            mode: Mode::BarelyRandom,
            instance: InstanceSpec::FarPoint { far: 10 },
            generator: GeneratorSpec::FarPoint,
            k: 3,
            steps,
            opt_limit: 1_000,
            ..Default::default()
        };
        let s = run(&cfg)?.summary;
        println!(
            "T = {:>6}: forwarded {:>4}, fractional {}, output {}, ensemble {}, bits {}",
            s.steps,
            s.forwarded,
            fmt(&s.totals.stages.fractional),
            fmt(&s.totals.output),
            fmt(&s.totals.ensemble),
            s.bits.total
        );
    }
    Ok(())
}
