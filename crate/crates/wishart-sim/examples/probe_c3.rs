use num_complex::Complex64;
use wishart_sim::matkernel::SymMatrix;
use wishart_sim::oracle::*;
use wishart_sim::schemes::*;
use wishart_sim::wishart_exact::WishartParams;

fn main() {
    let p = WishartParams::canonical(SymMatrix::scaled_identity(3, 0.4), 4.5).unwrap();
    let v = SymMatrix::scaled_identity(3, 0.05);
    let t_final = 10.0;
    let truth = wishart_charfn_table(&p, t_final, &v).unwrap();
    println!("truth {truth}");
    for kind in [SchemeKind::Order2, SchemeKind::Order3, SchemeKind::Euler] {
        for n in [2usize, 4, 8, 16, 32] {
            let dt = t_final / n as f64;
            let stepper = build_wishart_stepper(&p, dt, &SchemeSpec::new(kind)).unwrap();
            let r = mc_estimate(
                &RngLayout::new(31 + n as u64),
                100_000,
                n,
                dt,
                &p.x,
                |rng, x, h| stepper.step(rng, x, h),
                |x| Complex64::new(0.0, v.trace_product(x)).exp(),
            );
            match r {
                Ok(est) => println!(
                    "{:?} N={n}: ({:.6},{:.6}) err {:.3e} noise {:.3e}",
                    kind, est.mean.re, est.mean.im, (est.mean - truth).norm(), 2.0*est.std_error()
                ),
                Err(e) => println!("{:?} N={n}: ERROR {e}", kind),
            }
        }
    }
}
