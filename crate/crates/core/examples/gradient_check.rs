// Finite-difference check of every network's parameter gradients.

use hiervc::nets::gradcheck::{gradcheck, NetKind};

pub fn run_example() {
    for kind in NetKind::ALL {
        let r = gradcheck(kind, 3, 1e-3, 4).unwrap();
        println!(
            "{:<22} {:>3} tensors, worst relative error {:.2e} ({})",
            kind.name(),
            r.n_tensors,
            r.max_rel_err,
            r.worst_tensor
        );
        assert!(r.passed(1e-3));
    }
}

#[allow(dead_code)]
fn main() {
    run_example();
}
