//! Offline optimum of a request trace, by min-cost flow and by configuration DP.

use kserver::bits::BitStream;
use kserver::metric::MetricSpace;
use kserver::offline::{opt_dp, opt_flow, RequestTrace};
use kserver::rat::fmt;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut bits = BitStream::new(8);
    let metric = MetricSpace::random(5, 9, &mut bits);
    let requests: Vec<usize> = (0..30).map(|_| bits.below(5) as usize).collect();
    let trace = RequestTrace::new(vec![0, 1], requests);
    println!("distances {:?}", metric.matrix());
    println!("OPT by flow {}", fmt(&opt_flow(&metric, &trace)?));
    println!("OPT by DP   {}", fmt(&opt_dp(&metric, &trace)?));
    Ok(())
}
