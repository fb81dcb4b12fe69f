//! Random τ-HST embedding of a finite metric: bits used and average stretch.

use kserver::bits::BitStream;
use kserver::metric::{frt_embed, MetricSpace};
use kserver::rat::{int, to_f64};

fn main() {
    let metric = MetricSpace::random(8, 20, &mut BitStream::new(1));
    let mut bits = BitStream::new(2);
    let samples = 100;
    let mut stretch = 0.0;
    for _ in 0..samples {
        let e = frt_embed(&metric, int(16), &mut bits);
        for x in 0..8 {
            for y in x + 1..8 {
                let d = int(metric.dist(x, y) as i128);
                assert!(e.tree_distance(x, y) >= d, "embedding contracted a pair");
                stretch += to_f64(&(e.tree_distance(x, y) / d));
            }
        }
    }
    println!("mean stretch over {samples} trees: {:.2}", stretch / (samples * 28) as f64);
    println!("bits per embedding: {:.1}", bits.used() as f64 / samples as f64);
}
