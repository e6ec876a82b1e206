//! Exact direct-method stochastic simulation in molecule counts.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::ReactionNetwork;

/// Seedable generator used for every random stream in the crate.
///
/// ChaCha8 keyed by `seed_from_u64(seed)` with stream id `stream`; the output
/// is platform independent.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Piecewise-constant sample path of the jump process.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial_state: Vec<i64>,
    pub jump_times: Vec<f64>,
    pub states: Vec<Vec<i64>>,
    /// Right end of the simulated window.
    pub t_end: f64,
}

impl Trajectory {
    pub fn event_count(&self) -> usize {
        self.jump_times.len()
    }

    /// Cadlag value: the state after the last event at or before `t`.
    pub fn state_at(&self, t: f64) -> Result<&[i64]> {
        if t > self.t_end {
            return Err(Error::BeyondHorizon { time: t, horizon: self.t_end });
        }
        let idx = self.jump_times.partition_point(|&s| s <= t);
        Ok(if idx == 0 { &self.initial_state } else { &self.states[idx - 1] })
    }

    /// CSV with columns `time, x1..xJ`; the first row is the initial state at
    /// `t = 0`. Lines of `header` are written first as `# ` comments.
    pub fn write_csv(&self, path: impl AsRef<Path>, header: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for line in header.into_iter().flat_map(str::lines) {
            out.push_str(&format!("# {line}\n"));
        }
        out.push_str("time");
        for j in 1..=self.initial_state.len() {
            out.push_str(&format!(",x{j}"));
        }
        out.push('\n');
        let mut row = |t: f64, x: &[i64]| {
            out.push_str(&format!("{t}"));
            for v in x {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        };
        row(0.0, &self.initial_state);
        for (t, x) in self.jump_times.iter().zip(&self.states) {
            row(*t, x);
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SsaOptions {
    pub max_events: u64,
}

impl Default for SsaOptions {
    fn default() -> Self {
        Self { max_events: 100_000_000 }
    }
}

/// Gillespie direct method from `x0` over `[0, t_end]` with a fresh stream
/// `stream_rng(seed, 0)`.
pub fn ssa_simulate(
    net: &ReactionNetwork,
    theta: &[f64],
    x0: &[i64],
    t_end: f64,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = stream_rng(seed, 0);
    ssa_simulate_with(net, theta, x0, t_end, &mut rng, SsaOptions::default())
}

pub fn ssa_simulate_with<R: Rng + ?Sized>(
    net: &ReactionNetwork,
    theta: &[f64],
    x0: &[i64],
    t_end: f64,
    rng: &mut R,
    opts: SsaOptions,
) -> Result<Trajectory> {
    let j = net.species_count();
    if x0.len() != j {
        return Err(Error::Dimension(format!("initial state has {} entries, expected {j}", x0.len())));
    }
    if x0.iter().any(|&x| x < 0) {
        return Err(Error::Invalid("initial counts must be non-negative".into()));
    }
    if !(t_end > 0.0) {
        return Err(Error::Invalid(format!("t_end must be positive, got {t_end}")));
    }
    if theta.len() != net.param_count() {
        return Err(Error::Dimension("parameter length".into()));
    }

    let omega = net.system_size();
    let changes: Vec<Vec<i64>> = net.reactions().iter().map(|r| r.change()).collect();
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut traj = Trajectory {
        initial_state: x0.to_vec(),
        jump_times: Vec::new(),
        states: Vec::new(),
        t_end,
    };
    let mut props = vec![0.0; net.reaction_count()];
    loop {
        // ω_k = Ω v_k(x/Ω), zero whenever firing would drive a count negative
        let mut total = 0.0;
        for (k, r) in net.compiled.iter().enumerate() {
            let feasible = r.reactants.iter().all(|&(s, p)| x[s] >= p as i64);
            let w = if feasible {
                let mono = r
                    .reactants
                    .iter()
                    .fold(1.0, |acc, &(s, p)| acc * (x[s] as f64 / omega).powi(p as i32));
                (omega * theta[r.param] * mono).max(0.0)
            } else {
                0.0
            };
            props[k] = w;
            total += w;
        }
        if total <= 0.0 {
            break;
        }
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / total;
        if t > t_end {
            break;
        }
        if traj.jump_times.len() as u64 >= opts.max_events {
            return Err(Error::EventCap(opts.max_events));
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = props.len() - 1;
        for (k, &w) in props.iter().enumerate() {
            acc += w;
            if target < acc && w > 0.0 {
                chosen = k;
                break;
            }
        }
        while props[chosen] <= 0.0 {
            chosen -= 1;
        }
        for (xi, c) in x.iter_mut().zip(&changes[chosen]) {
            *xi += c;
        }
        traj.jump_times.push(t);
        traj.states.push(x.clone());
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Reaction;

    #[test]
    fn zero_rates_give_constant_path() {
        let net = ReactionNetwork::michaelis_menten();
        let traj = ssa_simulate(&net, &[0.0; 3], &[45, 39, 55, 6], 80.0, 1).unwrap();
        assert_eq!(traj.event_count(), 0);
        assert_eq!(traj.state_at(80.0).unwrap(), &[45, 39, 55, 6]);
    }

    #[test]
    fn michaelis_menten_conserves_enzyme() {
        let net = ReactionNetwork::michaelis_menten();
        let traj = ssa_simulate(&net, &[0.001, 0.005, 0.01], &[45, 39, 55, 6], 80.0, 7).unwrap();
        assert!(traj.event_count() > 0);
        let mut prev = traj.initial_state.clone();
        let mut last_t = 0.0;
        for (t, x) in traj.jump_times.iter().zip(&traj.states) {
            assert!(*t > last_t);
            assert_eq!(x[0] + x[2], 100);
            assert_eq!(x[1] + x[2] + x[3], 100);
            assert!(x.iter().all(|&v| v >= 0));
            let diff: Vec<i64> = x.iter().zip(&prev).map(|(a, b)| a - b).collect();
            assert!(net.reactions().iter().any(|r| r.change() == diff));
            prev = x.clone();
            last_t = *t;
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let net = ReactionNetwork::michaelis_menten();
        let a = ssa_simulate(&net, &[0.001, 0.005, 0.01], &[45, 39, 55, 6], 80.0, 3).unwrap();
        let b = ssa_simulate(&net, &[0.001, 0.005, 0.01], &[45, 39, 55, 6], 80.0, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn event_cap_is_enforced() {
        let net = ReactionNetwork::new(vec![Reaction::new(vec![0], vec![1], 0)], 1, 1.0).unwrap();
        let mut rng = stream_rng(1, 0);
        let err = ssa_simulate_with(&net, &[100.0], &[0], 100.0, &mut rng, SsaOptions { max_events: 50 });
        assert!(matches!(err, Err(Error::EventCap(50))));
    }

    #[test]
    fn state_lookup_is_cadlag() {
        let traj = Trajectory {
            initial_state: vec![5],
            jump_times: vec![1.0, 2.0],
            states: vec![vec![4], vec![3]],
            t_end: 3.0,
        };
        assert_eq!(traj.state_at(0.5).unwrap(), &[5]);
        assert_eq!(traj.state_at(1.0).unwrap(), &[4]);
        assert_eq!(traj.state_at(2.5).unwrap(), &[3]);
        assert!(traj.state_at(3.5).is_err());
    }

    #[test]
    fn second_order_reaction_never_goes_negative() {
        // 2X → ∅ with a single molecule left must not fire
        let net = ReactionNetwork::new(vec![Reaction::new(vec![2], vec![0], 0)], 1, 1.0).unwrap();
        let traj = ssa_simulate(&net, &[1.0], &[5], 1000.0, 2).unwrap();
        assert_eq!(traj.states.last().unwrap(), &vec![1]);
    }
}
