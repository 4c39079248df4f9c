use excursion_core::dual::{dual_optimize_problem, DualOptions};
use excursion_core::geometry::PointSet;
use excursion_core::kernel::IsotropicKernel;
use excursion_core::primal::{solve_primal, HoleProblem, SolveStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut fails = 0;
    let mut nsec = 0;
    for inst in 0..12u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(1000 + inst);
        let n1 = 10 + (rng.random::<f64>() * 31.0) as usize;
        let n2 = 10 + (rng.random::<f64>() * 31.0) as usize;
        let r = 0.2 + 0.7 * rng.random::<f64>();
        // K1 cloud in a unit disc at origin; K2 cloud offset so the clouds
        // are separated and the instance is feasible
        let offset = 1.4 + 1.2 * rng.random::<f64>();
        let mut c1 = Vec::new();
        let mut c2 = Vec::new();
        for _ in 0..n1 {
            let a = 2.0*std::f64::consts::PI*rng.random::<f64>();
            let rad = rng.random::<f64>().sqrt() * 0.8;
            c1.push(rad*a.cos()); c1.push(rad*a.sin());
        }
        for _ in 0..n2 {
            let a = 2.0*std::f64::consts::PI*rng.random::<f64>();
            let rad = rng.random::<f64>().sqrt() * 0.6;
            c2.push(offset + rad*a.cos()); c2.push(rad*a.sin());
        }
        let k1 = PointSet::new(2, c1).unwrap();
        let k2 = PointSet::new(2, c2).unwrap();
        let kernel = IsotropicKernel::squared_exponential(1.0, 1.0).unwrap();
        let problem = HoleProblem::from_kernel(kernel, k1, k2, r).unwrap();
        let p = solve_primal(&problem).unwrap();
        let t2 = Instant::now();
        let d = dual_optimize_problem(&problem, &DualOptions::default()).unwrap();
        let td = t2.elapsed().as_secs_f64();
        let gap = d.gap_vs_primal.unwrap_or(f64::NAN);
        let second_governs = d.second_min < d.first_min;
        if second_governs { nsec += 1; }
        if !(gap < 1e-4) { fails += 1; }
        if gap.is_finite() && gap > worst { worst = gap; }
        println!("inst {inst}: n=({n1},{n2}) r={r:.3} off={offset:.2} {:?} primal={:.8} dual={:.8} gap={gap:.2e} sec_governs={second_governs} [{td:.2}s]",
                 p.status, p.value, d.d);
    }
    println!("worst gap {worst:.3e}, fails {fails}/12, second-branch {nsec}/12, total {:.1}s", t0.elapsed().as_secs_f64());
}
