//! Turning a fractional trajectory into an m-barely fractional one, stage by stage.

use kserver::bits::BitStream;
use kserver::discretize::{min_granularity, random_trajectory, BarelyFractional, Pipeline};
use kserver::fractional::ScriptedFractional;
use kserver::measure::MassVector;
use kserver::metric::random_tree;
use kserver::rat::fmt;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut bits = BitStream::new(4);
    let tree = random_tree(12, &mut bits);
    let k = 2;
    let (c0, requests, steps) = random_trajectory(&tree, k, 40, 64, &mut bits);
    let src = ScriptedFractional::new(tree.clone(), k, MassVector::from_config(&tree, &c0, 64), steps);
    let mut p = Pipeline::new(src, min_granularity(k))?;
    for &r in &requests {
        p.serve(r)?;
    }
    let t = p.state().totals();
    println!("m = {}, m' = {}", p.state().m(), p.state().m_prime());
    println!("fractional {}", fmt(&t.fractional));
    println!("sigma      {}", fmt(&t.z1));
    println!("hysteresis {}", fmt(&t.z2));
    println!("scaled     {}", fmt(&t.z3));
    println!("on grid    {}", fmt(&t.z4));
    println!("leaves     {}", fmt(&t.deferred));
    Ok(())
}
