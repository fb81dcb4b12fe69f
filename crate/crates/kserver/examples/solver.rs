//! Minimizing a strongly convex function over a set given only by a separation oracle.

use kserver::solver::{minimize_convex, project_simplex, Quadratic, SimplexSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let c = vec![0.9, 0.6, -0.2, 0.4];
    let set = SimplexSet { dim: c.len(), scale: 1.0 };
    let f = Quadratic { c: c.clone(), diam: 4.0, max_value: 36.0 };
    let (x, stats) = minimize_convex(&f, &set, 1e-5)?;
    println!("ellipsoid   {x:.5?}");
    println!("closed form {:.5?}", project_simplex(&c, 1.0));
    println!("{stats:?}");
    Ok(())
}
