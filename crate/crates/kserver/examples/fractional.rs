//! The fractional algorithm on a two-level HST: one Bregman projection per request.

use kserver::fractional::{FractionalAlgorithm, FractionalState};
use kserver::metric::hst;
use kserver::rat::{fmt, int};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let h = hst(&[2, 3], int(10), int(10))?;
    let leaves = h.tree().leaves().to_vec();
    let mut f = FractionalState::init(&h, 2, &leaves[..2])?;
    for &r in &[leaves[3], leaves[4], leaves[0], leaves[5], leaves[3]] {
        let z = f.serve(r)?;
        let mass: Vec<String> = leaves.iter().map(|&l| format!("{:.3}", kserver::rat::to_f64(&z.value(l)))).collect();
        println!("request {r}: leaf mass [{}], step cost {}", mass.join(", "), fmt(&f.last_step().unwrap().cost));
    }
    println!("total movement {}", fmt(&f.cost()));
    Ok(())
}
