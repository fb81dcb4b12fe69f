//! Rounding barely fractional measures into m deterministic configurations,
//! on a line and on an HST.

use kserver::bits::BitStream;
use kserver::measure::MassVector;
use kserver::metric::{hst, path_tree};
use kserver::rat::{fmt, int};
use kserver::rounding::{round_line, sample_index, HstRounding};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (line, points) = path_tree(4);
    let mut leaf = vec![0i64; line.len()];
    leaf[points[0]] = 1;
    leaf[points[2]] = 2;
    leaf[points[3]] = 3;
    let z = MassVector::from_leaves(&line, 3, &leaf);
    let e = round_line(&line, &points, &z, 3)?;
    println!("line ensemble: {}", serde_json::to_string(&e.snapshot(&z))?);

    let t = hst(&[2, 2], int(10), int(10))?.into_tree();
    let l = t.leaves().to_vec();
    let mut r = HstRounding::new(&t, &[l[0], l[2]], 2);
    let targets = [[1, 1, 2, 0], [0, 2, 1, 1], [0, 2, 0, 2]];
    for nums in targets {
        let mut leaf = vec![0i64; t.len()];
        for (i, &q) in nums.iter().enumerate() {
            leaf[l[i]] = q;
        }
        let s = r.step(&MassVector::from_leaves(&t, 2, &leaf))?;
        println!("members {:?}: OT {}, ensemble movement {}", r.ensemble().members(), fmt(&s.ot), fmt(&s.ensemble_cost));
    }
    let i = sample_index(2, &mut BitStream::new(9));
    println!("sampled member {i}, its total cost {}", fmt(&r.member_costs()[i]));
    Ok(())
}
