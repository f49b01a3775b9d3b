use meshfix::ring::*;

fn main() {
    let channel = default_array(1).channel;
    let res = train_ideal(-85.0, channel, 15, 30_000, 42).unwrap();
    println!("trained: {:.3} ps/nm", res.achieved_gdd_ps_nm);
    for sigma in [0.02, 0.04] {
        let t0 = std::time::Instant::now();
        let runs = gdd_monte_carlo(&res.spec, sigma, 5, 100, 7, 128).unwrap();
        let unc: Vec<f64> = runs.iter().filter(|r| !r.1).map(|r| r.2).collect();
        let cor: Vec<f64> = runs.iter().filter(|r| r.1).map(|r| r.2).collect();
        let std = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
        };
        let within = cor.iter().filter(|g| (*g - -85.0_f64).abs() <= 5.0).count();
        println!("sigma={sigma}: unc std {:.2} ps/nm, cor std {:.3} ps/nm, cor within +-5: {}/100, t={:?}",
            std(&unc), std(&cor), within, t0.elapsed());
    }
}
