//! General policy-optimization protocol runs and regret-bound reports.
//!
//! A protocol run iterates `pi_{t+1} <- Optimize(pi_t, A_hat_t)` where the
//! update is exact soft policy iteration (`pi_{t+1} ∝ pi_t exp(eta A_hat)`)
//! and `A_hat_t` is the exact advantage of `pi_t` plus controlled noise.
//! All quantities in the two performance guarantees are then *measured*
//! exactly by enumeration:
//!
//! - the optimization error from the logged expectation of `A_hat` under
//!   the optimal policy's visitation;
//! - the advantage-estimation error as the worst per-step RMS gap between
//!   `A_hat` and the true advantage under the learner's own visitation;
//! - the density-ratio second moment between the optimal and learner
//!   occupancies (histories for action-sequence learning, shadow states for
//!   approximate-Markov learning);
//! - the transition corruption rate, with the shadow chain enumerated as
//!   part of a joint (true, shadow) forward recursion.
//!
//! The report asserts the regret inequality itself; a violation indicates
//! an implementation bug, not an unlucky sample.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::derive_rng;

use super::{
    history_return, history_values, occupancy_history, optimal_return, policy_return,
    policy_values, HistoryPolicy, HistoryTree, MarkovPolicy, TabularMdp,
};

/// Which learning paradigm the protocol instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Paradigm {
    /// Policies condition on `(s_1, a_{1:h-1})`.
    ActionSeq,
    /// Policies condition on a shadow state chain from a corrupted
    /// transition model with per-query error probability `eps_p`.
    ApproxMarkov { eps_p: f64 },
}

impl Paradigm {
    pub fn tag(&self) -> &'static str {
        match self {
            Paradigm::ActionSeq => "action-seq",
            Paradigm::ApproxMarkov { .. } => "approx-markov",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub paradigm: Paradigm,
    /// Number of optimization iterations `T`.
    pub iterations: usize,
    /// Soft policy iteration step size `eta`.
    pub step_size: f64,
    /// Half-width of the uniform noise added to exact advantages.
    pub noise: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            paradigm: Paradigm::ActionSeq,
            iterations: 5,
            step_size: 1.0,
            noise: 0.05,
        }
    }
}

/// Measured bound components and the verdicts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub paradigm: String,
    pub horizon: usize,
    pub eps_opt: f64,
    pub eps_stat: f64,
    pub eps_p: f64,
    /// Max over `(t, h)` of the occupancy-ratio second moment.
    pub ratio_term: f64,
    /// Exactly measured shadow-state bias term (approx-Markov only).
    pub state_bias_term: f64,
    pub regret_max: f64,
    pub regret_avg: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// The corrupted tabular transition: with probability `eps_p` a query lands
/// on a fixed decoy state of the next layer instead of the true successor.
/// Decoys are a deterministic function of `(h, s, a)`, so the joint chain
/// stays exactly enumerable.
pub struct CorruptedKernel {
    pub eps_p: f64,
    /// `decoy[h][s][a]` in layer `h + 1`.
    pub decoy: Vec<Vec<Vec<usize>>>,
}

impl CorruptedKernel {
    pub fn build(mdp: &TabularMdp, eps_p: f64, seed: u64) -> Self {
        let mut rng = derive_rng(seed, "corrupt-kernel", &[]);
        let mut decoy = Vec::with_capacity(mdp.horizon);
        for h in 0..mdp.horizon {
            let mut d_h = Vec::with_capacity(mdp.states[h]);
            for s in 0..mdp.states[h] {
                let mut d_s = Vec::with_capacity(mdp.actions);
                for a in 0..mdp.actions {
                    if h + 1 >= mdp.horizon {
                        d_s.push(0);
                        continue;
                    }
                    let true_next = mdp.transition[h][s][a][0].0;
                    let n_next = mdp.states[h + 1];
                    let pick = if n_next == 1 {
                        // No distinct decoy exists; corruption is a no-op.
                        true_next
                    } else {
                        let mut cand = rng.gen_range(0..n_next);
                        while cand == true_next {
                            cand = rng.gen_range(0..n_next);
                        }
                        cand
                    };
                    d_s.push(pick);
                }
                d_h.push(d_s);
            }
            decoy.push(d_h);
        }
        CorruptedKernel { eps_p, decoy }
    }

    /// Distribution of the next shadow state for `(h, shadow, a)`.
    fn branch(&self, mdp: &TabularMdp, h: usize, shadow: usize, a: usize) -> Vec<(usize, f64)> {
        let true_next = mdp.transition[h][shadow][a][0].0;
        let decoy = self.decoy[h][shadow][a];
        if self.eps_p == 0.0 || decoy == true_next {
            vec![(true_next, 1.0)]
        } else {
            vec![(true_next, 1.0 - self.eps_p), (decoy, self.eps_p)]
        }
    }

    /// Empirical disagreement rate on `n` uniformly sampled legal pairs,
    /// mirroring the transition-model epsilon measurement.
    pub fn measure_eps(&self, mdp: &TabularMdp, n: usize, seed: u64) -> f64 {
        let mut rng = derive_rng(seed, "corrupt-measure", &[]);
        let mut mismatches = 0usize;
        for _ in 0..n {
            let h = rng.gen_range(0..mdp.horizon.saturating_sub(1).max(1));
            let s = rng.gen_range(0..mdp.states[h]);
            let a = rng.gen_range(0..mdp.actions);
            let true_next = mdp.transition[h][s][a][0].0;
            let sampled = if rng.gen::<f64>() < self.eps_p {
                self.decoy[h][s][a]
            } else {
                true_next
            };
            if sampled != true_next {
                mismatches += 1;
            }
        }
        mismatches as f64 / n as f64
    }
}

/// Soft policy iteration step on a history policy.
fn soft_step_history(
    _tree: &HistoryTree,
    policy: &HistoryPolicy,
    a_hat: &[Vec<f64>],
    eta: f64,
) -> HistoryPolicy {
    let probs = policy
        .probs
        .iter()
        .enumerate()
        .map(|(id, p)| {
            let mut w: Vec<f64> =
                p.iter().zip(&a_hat[id]).map(|(&pi, &adv)| pi * (eta * adv).exp()).collect();
            let z: f64 = w.iter().sum();
            for v in &mut w {
                *v /= z;
            }
            w
        })
        .collect();
    HistoryPolicy { probs }
}

fn soft_step_markov(
    mdp: &TabularMdp,
    policy: &MarkovPolicy,
    a_hat: &[Vec<Vec<f64>>],
    eta: f64,
) -> MarkovPolicy {
    let probs = (0..mdp.horizon)
        .map(|h| {
            (0..mdp.states[h])
                .map(|s| {
                    let mut w: Vec<f64> = policy.probs[h][s]
                        .iter()
                        .zip(&a_hat[h][s])
                        .map(|(&pi, &adv)| pi * (eta * adv).exp())
                        .collect();
                    let z: f64 = w.iter().sum();
                    for v in &mut w {
                        *v /= z;
                    }
                    w
                })
                .collect()
        })
        .collect();
    MarkovPolicy { probs }
}

/// Run the protocol and measure every bound component.
pub fn run_protocol(mdp: &TabularMdp, config: &ProtocolConfig, seed: u64) -> BoundReport {
    assert!(mdp.is_deterministic(), "protocol runs assume deterministic dynamics");
    match config.paradigm {
        Paradigm::ActionSeq => run_action_seq(mdp, config, seed),
        Paradigm::ApproxMarkov { eps_p } => run_approx_markov(mdp, config, eps_p, seed),
    }
}

fn run_action_seq(mdp: &TabularMdp, config: &ProtocolConfig, seed: u64) -> BoundReport {
    let tree = HistoryTree::build(mdp);
    let mut rng = derive_rng(seed, "protocol-noise", &[0]);
    let horizon = mdp.horizon;
    let j_star = optimal_return(mdp);
    // Greedy-optimal history policy: argmax of the optimal Q on the tree.
    let pi_star = {
        let uniform = HistoryPolicy::uniform(&tree);
        // Backward induction with max instead of expectation.
        let mut v = vec![0.0; tree.node_count()];
        let mut probs = uniform.probs.clone();
        for depth in (0..horizon).rev() {
            for &id in &tree.by_depth[depth] {
                let mut best = f64::NEG_INFINITY;
                let mut best_a = 0;
                for (a, &child) in tree.nodes[id].children.iter().enumerate() {
                    let q = tree.nodes[child].edge_reward
                        + if depth + 1 < horizon { v[child] } else { 0.0 };
                    if q > best {
                        best = q;
                        best_a = a;
                    }
                }
                v[id] = best;
                let mut p = vec![0.0; tree.actions];
                p[best_a] = 1.0;
                probs[id] = p;
            }
        }
        HistoryPolicy { probs }
    };
    let d_star = occupancy_history(mdp, &tree, &pi_star);
    let star_action = &pi_star.probs;

    let mut pi_t = HistoryPolicy::uniform(&tree);
    let t_total = config.iterations;
    let mut sum_term_one = 0.0;
    let mut eps_stat: f64 = 0.0;
    let mut ratio_term: f64 = 0.0;
    let mut best_j = f64::NEG_INFINITY;
    let mut sum_j = 0.0;
    for _t in 0..t_total {
        let (v_t, q_t) = history_values(mdp, &tree, &pi_t);
        // Exact advantages plus controlled uniform noise.
        let mut a_hat = vec![vec![0.0; tree.actions]; tree.node_count()];
        for depth in 0..horizon {
            for &id in &tree.by_depth[depth] {
                for a in 0..tree.actions {
                    let noise = if config.noise > 0.0 {
                        rng.gen_range(-config.noise..config.noise)
                    } else {
                        0.0
                    };
                    a_hat[id][a] = q_t[id][a] - v_t[id] + noise;
                }
            }
        }
        // Term (I): (1/T) sum_t sum_h E_{pi*}[A_hat(x_h, a_h)].
        for depth in 0..horizon {
            for &id in &tree.by_depth[depth] {
                if d_star[id] == 0.0 {
                    continue;
                }
                for a in 0..tree.actions {
                    sum_term_one += d_star[id] * star_action[id][a] * a_hat[id][a];
                }
            }
        }
        // eps_stat: max over (t, h) RMS of (A_hat - A) under pi_t.
        let d_t = occupancy_history(mdp, &tree, &pi_t);
        for depth in 0..horizon {
            let mut mse = 0.0;
            for &id in &tree.by_depth[depth] {
                if d_t[id] == 0.0 {
                    continue;
                }
                for a in 0..tree.actions {
                    let err = a_hat[id][a] - (q_t[id][a] - v_t[id]);
                    mse += d_t[id] * pi_t.probs[id][a] * err * err;
                }
            }
            eps_stat = eps_stat.max(mse.sqrt());
        }
        // Ratio term over depth-h histories (action included).
        for depth in 1..=horizon {
            let mut second_moment = 0.0;
            for &id in &tree.by_depth[depth] {
                let ds = d_star[id];
                if ds == 0.0 {
                    continue;
                }
                if d_t[id] == 0.0 {
                    second_moment = f64::INFINITY;
                    break;
                }
                second_moment += ds * ds / d_t[id];
            }
            ratio_term = ratio_term.max(second_moment);
        }
        let j_t = history_return(mdp, &tree, &pi_t);
        best_j = best_j.max(j_t);
        sum_j += j_t;
        pi_t = soft_step_history(&tree, &pi_t, &a_hat, config.step_size);
    }
    let eps_opt = (sum_term_one / t_total as f64 / horizon as f64).max(0.0);
    let regret_max = j_star - best_j;
    let regret_avg = j_star - sum_j / t_total as f64;
    let rhs = horizon as f64 * eps_opt + horizon as f64 * ratio_term.sqrt() * eps_stat;
    BoundReport {
        paradigm: "action-seq".to_string(),
        horizon,
        eps_opt,
        eps_stat,
        eps_p: 0.0,
        ratio_term,
        state_bias_term: 0.0,
        regret_max,
        regret_avg,
        rhs,
        holds: regret_max <= rhs + 1e-9 && regret_avg <= rhs + 1e-9,
    }
}

/// Joint (true state, shadow state) forward occupancies under a process
/// whose action law is a function of either side.
struct JointChain<'a> {
    mdp: &'a TabularMdp,
    kernel: &'a CorruptedKernel,
}

impl<'a> JointChain<'a> {
    /// `dist[h][(s, shadow)]`, actions drawn from `act(h, s, shadow)`.
    fn run<F>(&self, act: F) -> Vec<Vec<Vec<f64>>>
    where
        F: Fn(usize, usize, usize) -> &'a [f64],
    {
        let mdp = self.mdp;
        let mut layers = Vec::with_capacity(mdp.horizon);
        let n0 = mdp.states[0];
        let mut current = vec![vec![0.0; n0]; n0];
        for (s, &p) in mdp.rho.iter().enumerate() {
            current[s][s] = p;
        }
        layers.push(current.clone());
        for h in 0..mdp.horizon - 1 {
            let n_next = mdp.states[h + 1];
            let mut next = vec![vec![0.0; n_next]; n_next];
            for s in 0..mdp.states[h] {
                for shadow in 0..mdp.states[h] {
                    let mass = current[s][shadow];
                    if mass == 0.0 {
                        continue;
                    }
                    let probs = act(h, s, shadow);
                    for (a, &pa) in probs.iter().enumerate() {
                        if pa == 0.0 {
                            continue;
                        }
                        let s2 = mdp.transition[h][s][a][0].0;
                        for (sh2, psh) in self.kernel.branch(mdp, h, shadow, a) {
                            next[s2][sh2] += mass * pa * psh;
                        }
                    }
                }
            }
            layers.push(next.clone());
            current = next;
        }
        layers
    }
}

fn run_approx_markov(
    mdp: &TabularMdp,
    config: &ProtocolConfig,
    eps_p: f64,
    seed: u64,
) -> BoundReport {
    let horizon = mdp.horizon;
    let kernel = CorruptedKernel::build(mdp, eps_p, seed);
    let chain = JointChain { mdp, kernel: &kernel };
    let mut rng = derive_rng(seed, "protocol-noise", &[1]);

    let j_star = optimal_return(mdp);
    let pi_star = MarkovPolicy::optimal(mdp);
    // Occupancies of the evaluation process: pi* acts on true states while
    // the shadow chain runs alongside.
    let joint_star = chain.run(|h, s, _shadow| pi_star.probs[h][s].as_slice());

    let mut pi_t = MarkovPolicy::uniform(mdp);
    let t_total = config.iterations;
    let mut sum_term_one = 0.0;
    let mut eps_stat: f64 = 0.0;
    let mut ratio_term: f64 = 0.0;
    let mut state_bias_accum = 0.0;
    let mut best_j = f64::NEG_INFINITY;
    let mut sum_j = 0.0;
    for _t in 0..t_total {
        let (v_t, q_t) = policy_values(mdp, &pi_t);
        let mut a_hat = vec![Vec::new(); horizon];
        for h in 0..horizon {
            let mut a_h = vec![vec![0.0; mdp.actions]; mdp.states[h]];
            for s in 0..mdp.states[h] {
                for a in 0..mdp.actions {
                    let noise = if config.noise > 0.0 {
                        rng.gen_range(-config.noise..config.noise)
                    } else {
                        0.0
                    };
                    a_h[s][a] = q_t[h][s][a] - v_t[h][s] + noise;
                }
            }
            a_hat[h] = a_h;
        }
        // The learner's own process: actions from the shadow state.
        let joint_t = chain.run(|h, _s, shadow| pi_t.probs[h][shadow].as_slice());
        for h in 0..horizon {
            // Term (I): E over the pi* process of A_hat(shadow_h, a_h) with
            // a_h ~ pi*(. | s_h).
            for s in 0..mdp.states[h] {
                for shadow in 0..mdp.states[h] {
                    let mass = joint_star[h][s][shadow];
                    if mass == 0.0 {
                        continue;
                    }
                    for a in 0..mdp.actions {
                        let pa = pi_star.probs[h][s][a];
                        if pa == 0.0 {
                            continue;
                        }
                        sum_term_one += mass * pa * a_hat[h][shadow][a];
                        // Term (III): A(s_h, a_h) - A(shadow_h, a_h).
                        let true_adv = q_t[h][s][a] - v_t[h][s];
                        let shadow_adv = q_t[h][shadow][a] - v_t[h][shadow];
                        state_bias_accum += mass * pa * (true_adv - shadow_adv);
                    }
                }
            }
            // Shadow-state occupancies of both processes.
            let mut d_hat_star = vec![vec![0.0; mdp.actions]; mdp.states[h]];
            let mut d_hat_t = vec![vec![0.0; mdp.actions]; mdp.states[h]];
            for s in 0..mdp.states[h] {
                for shadow in 0..mdp.states[h] {
                    let m_star = joint_star[h][s][shadow];
                    if m_star > 0.0 {
                        for a in 0..mdp.actions {
                            d_hat_star[shadow][a] += m_star * pi_star.probs[h][s][a];
                        }
                    }
                    let m_t = joint_t[h][s][shadow];
                    if m_t > 0.0 {
                        for a in 0..mdp.actions {
                            d_hat_t[shadow][a] += m_t * pi_t.probs[h][shadow][a];
                        }
                    }
                }
            }
            let mut second_moment = 0.0;
            for shadow in 0..mdp.states[h] {
                for a in 0..mdp.actions {
                    let ds = d_hat_star[shadow][a];
                    if ds == 0.0 {
                        continue;
                    }
                    if d_hat_t[shadow][a] == 0.0 {
                        second_moment = f64::INFINITY;
                        break;
                    }
                    second_moment += ds * ds / d_hat_t[shadow][a];
                }
            }
            ratio_term = ratio_term.max(second_moment);
            // eps_stat under the learner's shadow visitation.
            let mut mse = 0.0;
            for shadow in 0..mdp.states[h] {
                for a in 0..mdp.actions {
                    if d_hat_t[shadow][a] == 0.0 {
                        continue;
                    }
                    let err = a_hat[h][shadow][a] - (q_t[h][shadow][a] - v_t[h][shadow]);
                    mse += d_hat_t[shadow][a] * err * err;
                }
            }
            eps_stat = eps_stat.max(mse.sqrt());
        }
        let j_t = policy_return(mdp, &pi_t);
        best_j = best_j.max(j_t);
        sum_j += j_t;
        pi_t = soft_step_markov(mdp, &pi_t, &a_hat, config.step_size);
    }
    let eps_opt = (sum_term_one / t_total as f64 / horizon as f64).max(0.0);
    let state_bias_term = state_bias_accum / t_total as f64;
    let regret_max = j_star - best_j;
    let regret_avg = j_star - sum_j / t_total as f64;
    // Reward range in [0, 1] gives |A| <= H; the union bound over the
    // shadow chain gives Pr[shadow_h != s_h] <= H eps_p, hence the
    // 2 H^3 eps_p slack on the bias term.
    let bias_bound = 2.0 * (horizon as f64).powi(3) * eps_p;
    let rhs = horizon as f64 * eps_opt
        + horizon as f64 * ratio_term.sqrt() * eps_stat
        + bias_bound;
    let holds = regret_max <= rhs + 1e-9
        && regret_avg <= rhs + 1e-9
        && state_bias_term <= bias_bound + 1e-9;
    BoundReport {
        paradigm: "approx-markov".to_string(),
        horizon,
        eps_opt,
        eps_stat,
        eps_p,
        ratio_term,
        state_bias_term,
        regret_max,
        regret_avg,
        rhs,
        holds,
    }
}

/// Aggregate CSV line for one trial.
pub fn report_csv_header() -> &'static str {
    "trial,mode,eps_opt,eps_stat,eps_p,ratio_term,regret,rhs,holds"
}

pub fn report_csv_line(trial: usize, report: &BoundReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        trial,
        report.paradigm,
        report.eps_opt,
        report.eps_stat,
        report.eps_p,
        report.ratio_term,
        report.regret_max,
        report.rhs,
        report.holds
    )
}
