use lobsim::*;
use lobsim::analysis;
fn main() {
    let trend = TrendParams::from_beta2(1e-3, 1e-3, 20);
    for k in [300usize, 350, 400, 450, 500] {
        let params = ModelParams { lambda: 0.0131, mu: 0.0441, delta: 0.1174, q0: 101, k, edge_refill: true };
        print!("K={k}:");
        for (q, sims) in [(10u32, 256u32), (100, 256), (1000, 128)] {
            let spec = MetaorderSpec { volume: q, trading_interval: 20, sign: Side::Bid, pre_window: 500, post_window: 24_000 };
            match execution::run_ensemble(params, trend, &spec, 10_000, sims, 31_000 + u64::from(q), false) {
                Ok(ens) => {
                    let w = ens.window_mid_ticks();
                    let d0 = ens.window_decay_start();
                    let rd: Vec<f64> = ens.window_rbar_ticks()[d0..].to_vec();
                    let md: Vec<f64> = w[d0..].to_vec();
                    let pre = w[0];
                    let peak = md[0];
                    let tail = stats::mean(&md[md.len() - 4000..]);
                    let frac_tail = 100.0 * (peak - tail) / (peak - pre);
                    match analysis::fit_post_execution(&rd, &md, trend.beta1, pre) {
                        Ok(fit) => print!("  Q={q}: fit {:.1}% tail {frac_tail:.1}%", 100.0 * fit.reversion_fraction),
                        Err(e) => print!("  Q={q}: fitERR({e}) tail {frac_tail:.1}%"),
                    }
                }
                Err(_) => print!("  Q={q}: STARVED"),
            }
        }
        println!();
    }
}
