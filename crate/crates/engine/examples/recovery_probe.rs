use pension_engine::estimation::{
    build_surfaces, extract_constants, fit_slices, synthetic_panel, Period, SyntheticConfig,
};

fn main() {
    for (n, t) in [(5000usize, 504usize), (2000, 252)] {
        for window in [1.0, 0.5, 0.25] {
            let mut fails = 0;
            let mut worst: f64 = 0.0;
            for seed in 1..=8u64 {
                let config = SyntheticConfig { n_paths: n, horizon: t, drift: 0.002742, vol: 0.1, seed };
                let panel = synthetic_panel(&config, Period::Month).unwrap();
                let surface = fit_slices(build_surfaces(&panel, 0.25).unwrap());
                let constants = extract_constants(&surface, &surface, window).unwrap();
                let psi_err = (constants.psi - 0.0329) / 0.0329;
                let phi_err = (constants.phi - 0.3464) / 0.3464;
                worst = worst.max(psi_err.abs()).max(phi_err.abs());
                if psi_err.abs() > 0.15 || phi_err.abs() > 0.15 {
                    fails += 1;
                }
                if seed <= 3 {
                    println!("n={n} t={t} w={window} seed={seed}: psi {:+.1}% phi {:+.1}%",
                        100.0 * psi_err, 100.0 * phi_err);
                }
            }
            println!("n={n} t={t} w={window}: {fails}/8 seeds outside 15%, worst {:.1}%", 100.0 * worst);
        }
    }
}
