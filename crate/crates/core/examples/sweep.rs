use excursion_core::isotropic::IsotropicHoleSpec;
use excursion_core::kernel::IsotropicKernel;
fn main() {
    for i in 1..=9 {
        let r = i as f64 / 10.0;
        let k = IsotropicKernel::squared_exponential(1.0, 1.0).unwrap();
        let spec = IsotropicHoleSpec::new(k, 2, r, 4.0).unwrap();
        let (rho, h) = spec.most_likely_radius().unwrap();
        println!("r={r:.1}: rho*={rho:.5} H={h:.6}");
    }
}
