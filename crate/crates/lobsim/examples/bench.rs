// throughput and stationary-spread probe
use std::time::Instant;
fn main() {
    for k in [400usize, 1000, 2000] {
        let params = lobsim::ModelParams { lambda: 0.0131, mu: 0.0441, delta: 0.1174, q0: 101, k, edge_refill: false };
        let trend = lobsim::TrendParams::zero_intelligence();
        let mut means = vec![];
        let t0 = Instant::now();
        for seed in 0..3u64 {
            let traj = lobsim::models::run(params, trend, 50_000, 2_000_000, seed, 0).unwrap();
            let s = traj.summary();
            means.push((s.mean_spread, s.mean_gap, s.p_q_best_is_one, s.mean_n_orders));
        }
        let dt = t0.elapsed();
        let ms: f64 = means.iter().map(|m| m.0).sum::<f64>() / 3.0;
        let mg: f64 = means.iter().map(|m| m.1).sum::<f64>() / 3.0;
        let p1: f64 = means.iter().map(|m| m.2).sum::<f64>() / 3.0;
        let n: f64 = means.iter().map(|m| m.3).sum::<f64>() / 3.0;
        println!("K={k:5} spread={ms:.3} gap={mg:.3} p_q1={p1:.4} k_th={:.3} n={n:.1} ({:.0} ns/ev)",
            0.5 * p1 * mg, dt.as_nanos() as f64 / (3.0 * 2.05e6));
    }
}
