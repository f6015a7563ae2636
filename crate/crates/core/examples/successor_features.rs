//! Successor features of a fixed policy on a small tabular MDP: the closed
//! form, the iterative solution, and the identity `Q = psi . w` for a reward
//! that is linear in the cumulants.
//!
//!     cargo run --release --example successor_features

use basis::mdp::{
    exact_successor_features, iterative_successor_features, policy_q_exact, PolicyTable, PsiTable, TabularMdp,
};
use rand::Rng;

fn main() -> basis::Result<()> {
    let mut rng = basis::rng::stream(3, 0);
    let (ns, na, d, gamma) = (6, 2, 4, 0.9);

    let mut t = vec![vec![vec![0.0; ns]; na]; ns];
    for row in t.iter_mut().flatten() {
        let raw: Vec<f64> = (0..ns).map(|_| rng.gen::<f64>()).collect();
        let z: f64 = raw.iter().sum();
        for (p, r) in row.iter_mut().zip(raw) {
            *p = r / z;
        }
    }
    let mut phi = PsiTable::zeros(ns, na, d);
    for s in 0..ns {
        for a in 0..na {
            for x in phi.get_mut(s, a) {
                *x = rng.gen_range(-1.0..1.0);
            }
        }
    }
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // reward table r(s,a) = phi(s,a) . w
    let reward: Vec<Vec<f64>> = (0..ns)
        .map(|s| (0..na).map(|a| phi.get(s, a).iter().zip(&w).map(|(p, w)| p * w).sum()).collect())
        .collect();
    let mdp = TabularMdp::from_dense(&t, &[reward], gamma, vec![1.0 / ns as f64; ns], &[])?;
    let policy = PolicyTable::uniform(ns, na);

    let psi = exact_successor_features(&mdp, &policy, &phi, gamma)?;
    let psi_iter = iterative_successor_features(&mdp, &policy, &phi, gamma, 1e-12, 100_000)?;
    let q = policy_q_exact(&mdp, &policy, 0)?;

    let mut sf_gap: f64 = 0.0;
    let mut q_gap: f64 = 0.0;
    for s in 0..ns {
        for a in 0..na {
            for (x, y) in psi.get(s, a).iter().zip(psi_iter.get(s, a)) {
                sf_gap = sf_gap.max((x - y).abs());
            }
            let via_sf: f64 = psi.get(s, a).iter().zip(&w).map(|(p, w)| p * w).sum();
            q_gap = q_gap.max((via_sf - q.get(s, a)).abs());
        }
    }
    println!("psi(0, 0) = {:?}", psi.get(0, 0));
    println!("closed form vs iterative, sup norm: {sf_gap:.2e}");
    println!("psi . w vs policy evaluation of r, sup norm: {q_gap:.2e}");
    Ok(())
}
