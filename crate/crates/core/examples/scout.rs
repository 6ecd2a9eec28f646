// Scratch experiment driver (temporary; not part of the deliverable).
use costreg_core::train::{train, MemorySink, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mut config = TrainConfig::default();
    config.hidden_sizes = vec![32, 32];
    config.batch_size = 128;
    config.buffer_capacity = 120_000;
    config.total_steps = 20_000;
    config.checkpoint_every = 1_000_000;
    for pair in &args[1..] {
        let (k, v) = pair.split_once('=').unwrap();
        config.set_key(k, v).unwrap();
    }
    eprintln!("# config: agent={} reg={} lambda={} beta={} alpha={} auto={} steps={} seed={}",
        config.agent.name(), config.regulator_enabled, config.lambda, config.beta,
        config.alpha, config.auto_alpha, config.total_steps, config.seed);
    let start = Instant::now();
    let mut sink = MemorySink::default();
    let outcome = train(&config, &mut sink).unwrap();
    let dt = start.elapsed().as_secs_f64();
    let n = sink.rows.len();
    let tail = &sink.rows[n.saturating_sub(10)..];
    let mean_ret: f64 = tail.iter().map(|r| r.ep_return).sum::<f64>() / tail.len() as f64;
    let mean_rho: f64 = tail.iter().map(|r| r.mean_rho).sum::<f64>() / tail.len() as f64;
    let last = sink.rows.last().unwrap();
    println!(
        "steps={} secs={:.1} ms_per_step={:.2} episodes={} tail_return={:.2} cum_cost={:.0} tail_rho={:.3} last_rc={:.3}",
        outcome.steps, dt, 1000.0 * dt / outcome.steps as f64, outcome.episodes,
        mean_ret, last.cum_cost, mean_rho, last.rc_ratio
    );
    // Per-10%-chunk summary to see learning curves.
    let chunk = (n / 10).max(1);
    for (i, c) in sink.rows.chunks(chunk).enumerate() {
        let r: f64 = c.iter().map(|x| x.ep_return).sum::<f64>() / c.len() as f64;
        let cost: f64 = c.iter().map(|x| x.ep_cost).sum::<f64>() / c.len() as f64;
        let rho: f64 = c.iter().map(|x| x.mean_rho).sum::<f64>() / c.len() as f64;
        eprintln!("  chunk {i}: ep_return={r:.2} ep_cost={cost:.1} rho={rho:.3}");
    }
}
