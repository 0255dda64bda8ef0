//! Online planning in the representation space: roll the frozen forward
//! model over every action sequence up to a fixed depth, score each path by
//! the mean critic value along it, and act with the first move of the best
//! path. Planning is a pure function of its inputs — no parameter or RNG
//! state is touched — so workers can plan concurrently.

use crate::dynamics::DynamicsModel;
use crate::env::DiscreteAction;
use crate::error::Error;
use crate::reward::RewardModel;
use crate::tensor::{no_grad, Real, Tensor};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanConfig {
    /// Tree depth; 0 disables planning (actions come from π directly).
    pub depth: usize,
    /// Guard on tree size: expanding past this depth (4^max_depth nodes)
    /// is refused.
    pub max_depth: usize,
}

impl PlanConfig {
    pub fn off() -> Self {
        PlanConfig { depth: 0, max_depth: 5 }
    }

    pub fn depth(depth: usize) -> Self {
        PlanConfig { depth, max_depth: 5 }
    }

    pub fn enabled(&self) -> bool {
        self.depth > 0
    }
}

/// Iterates the forward model over a fixed action sequence, returning the
/// predicted latent after each action (empty sequence → empty output). The
/// dynamics hidden threads through the rollout starting from `(h, c)`.
pub fn latent_rollout<T: Real>(
    dynamics: &DynamicsModel<T>,
    z0: &Tensor<T>,
    h: &Tensor<T>,
    c: &Tensor<T>,
    actions: &[usize],
) -> Result<Vec<Tensor<T>>> {
    no_grad(|| {
        let mut out = Vec::with_capacity(actions.len());
        let mut z = z0.clone();
        let mut h = h.clone();
        let mut c = c.clone();
        let batch = z0.shape().0;
        for &a in actions {
            let feat = one_hot_rows(batch, dynamics.cfg.action_dim, a);
            let (z2, h2, c2) = dynamics.forward_step(&z, &feat, &h, &c)?;
            out.push(z2.clone());
            z = z2;
            h = h2;
            c = c2;
        }
        Ok(out)
    })
}

/// One level of the search frontier, kept as row-stacked batches so every
/// expansion is four batched forward passes instead of 4^depth small ones.
struct Frontier<T: Real> {
    z: Tensor<T>,
    dyn_h: Tensor<T>,
    dyn_c: Tensor<T>,
    rew_h: Tensor<T>,
    rew_c: Tensor<T>,
    /// Σ V(z) over each path's non-root nodes so far.
    value_sum: Vec<f64>,
    /// First action of each path; fixed at the first expansion.
    first: Vec<usize>,
}

/// Expands the full 4^depth action tree from `z0`, scores each leaf path by
/// the mean critic value over its non-root nodes, and returns the first
/// action of the best path together with the number of latent nodes
/// evaluated. Exact ties go to the lexicographically smallest action
/// sequence, i.e. the lowest action index. The critic's recurrent hidden is
/// threaded along each simulated path from the agent's live `(rew_h, rew_c)`.
pub fn plan_action_with_stats<T: Real>(
    dynamics: &DynamicsModel<T>,
    reward: &RewardModel<T>,
    z0: &Tensor<T>,
    dyn_hidden: (&Tensor<T>, &Tensor<T>),
    rew_hidden: (&Tensor<T>, &Tensor<T>),
    cfg: &PlanConfig,
) -> Result<(DiscreteAction, usize)> {
    if cfg.depth == 0 || cfg.depth > cfg.max_depth {
        return Err(Error::PlanDepthExceeded { depth: cfg.depth, max_depth: cfg.max_depth });
    }
    if z0.shape().0 != 1 {
        return Err(Error::Usage("plan_action expects a single latent row".into()));
    }
    let arity = dynamics.cfg.action_dim;
    no_grad(|| {
        let mut frontier = Frontier {
            z: z0.clone(),
            dyn_h: dyn_hidden.0.clone(),
            dyn_c: dyn_hidden.1.clone(),
            rew_h: rew_hidden.0.clone(),
            rew_c: rew_hidden.1.clone(),
            value_sum: vec![0.0],
            first: vec![usize::MAX],
        };
        let mut nodes = 0usize;
        for level in 1..=cfg.depth {
            let n = frontier.z.shape().0;
            // One batched forward per action over all n paths.
            let mut branches = Vec::with_capacity(arity);
            for a in 0..arity {
                let feat = one_hot_rows(n, arity, a);
                let (z2, dh, dc) =
                    dynamics.forward_step(&frontier.z, &feat, &frontier.dyn_h, &frontier.dyn_c)?;
                let pv = reward.policy_value(&z2, &frontier.rew_h, &frontier.rew_c)?;
                branches.push((z2, dh, dc, pv));
            }
            nodes += n * arity;

            // Re-stack node-major / action-minor so frontier row order stays
            // lexicographic in the action sequence — the tie-break order.
            let stack = |pick: &dyn Fn(usize) -> Tensor<T>| -> Tensor<T> {
                let cols = pick(0).shape().1;
                let mut flat = Vec::with_capacity(n * arity * cols);
                let per: Vec<Vec<T>> = (0..arity).map(|a| pick(a).value_vec()).collect();
                for row in 0..n {
                    for branch in per.iter() {
                        flat.extend_from_slice(&branch[row * cols..(row + 1) * cols]);
                    }
                }
                Tensor::new((n * arity, cols), flat, false)
            };
            let mut value_sum = Vec::with_capacity(n * arity);
            let mut first = Vec::with_capacity(n * arity);
            for row in 0..n {
                for (a, branch) in branches.iter().enumerate() {
                    let v = branch.3.value.values()[row].to_f64();
                    value_sum.push(frontier.value_sum[row] + v);
                    first.push(if level == 1 { a } else { frontier.first[row] });
                }
            }
            frontier = Frontier {
                z: stack(&|a| branches[a].0.clone()),
                dyn_h: stack(&|a| branches[a].1.clone()),
                dyn_c: stack(&|a| branches[a].2.clone()),
                rew_h: stack(&|a| branches[a].3.h.clone()),
                rew_c: stack(&|a| branches[a].3.c.clone()),
                value_sum,
                first,
            };
        }

        // Leaf score = mean value along the path; strict > keeps the first
        // (lexicographically smallest) path on ties.
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (leaf, sum) in frontier.value_sum.iter().enumerate() {
            let score = sum / cfg.depth as f64;
            if score > best_score {
                best_score = score;
                best = leaf;
            }
        }
        Ok((DiscreteAction::from_index(frontier.first[best]), nodes))
    })
}

/// `plan_action_with_stats` without the node count.
pub fn plan_action<T: Real>(
    dynamics: &DynamicsModel<T>,
    reward: &RewardModel<T>,
    z0: &Tensor<T>,
    dyn_hidden: (&Tensor<T>, &Tensor<T>),
    rew_hidden: (&Tensor<T>, &Tensor<T>),
    cfg: &PlanConfig,
) -> Result<DiscreteAction> {
    plan_action_with_stats(dynamics, reward, z0, dyn_hidden, rew_hidden, cfg)
        .map(|(action, _)| action)
}

fn one_hot_rows<T: Real>(rows: usize, arity: usize, index: usize) -> Tensor<T> {
    let mut flat = vec![T::ZERO; rows * arity];
    for r in 0..rows {
        flat[r * arity + index] = T::ONE;
    }
    Tensor::new((rows, arity), flat, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DynamicsModel, DynamicsModelConfig};
    use crate::reward::{RewardModel, RewardModelConfig};
    use crate::rng::{stream, Stream};

    fn models(seed: u64) -> (DynamicsModel<f64>, RewardModel<f64>) {
        let mut rng = stream(seed, Stream::Init(0));
        let dynamics = DynamicsModel::new(DynamicsModelConfig::maze_tiny(12, 10), &mut rng);
        let mut rng = stream(seed, Stream::Init(1));
        let reward = RewardModel::new(RewardModelConfig::maze_tiny(10), &mut rng);
        // Give the zero-init heads signal so values discriminate.
        nudge(&reward, seed ^ 0x5eed);
        (dynamics, reward)
    }

    fn nudge(model: &RewardModel<f64>, seed: u64) {
        use rand::Rng as _;
        let mut rng = stream(seed, Stream::Init(9));
        for (_, t) in model.params.iter() {
            let vals: Vec<f64> = t.value_vec().iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
            t.set_values(&vals);
        }
    }

    fn some_latent(dim: usize) -> Tensor<f64> {
        Tensor::row((0..dim).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect())
    }

    #[test]
    fn empty_rollout_is_empty() {
        let (dynamics, _) = models(1);
        let z = some_latent(10);
        let (h, c) = dynamics.zero_hidden(1);
        assert!(latent_rollout(&dynamics, &z, &h, &c, &[]).unwrap().is_empty());
    }

    #[test]
    fn single_step_rollout_equals_forward_step() {
        let (dynamics, _) = models(2);
        let z = some_latent(10);
        let (h, c) = dynamics.zero_hidden(1);
        let rolled = latent_rollout(&dynamics, &z, &h, &c, &[2]).unwrap();
        let feat = one_hot_rows(1, 4, 2);
        let (direct, _, _) = no_grad(|| dynamics.forward_step(&z, &feat, &h, &c)).unwrap();
        assert_eq!(rolled.len(), 1);
        assert_eq!(rolled[0].value_vec(), direct.value_vec());
    }

    #[test]
    fn rollout_threads_hidden_state_between_steps() {
        let (dynamics, _) = models(3);
        let z = some_latent(10);
        let (h, c) = dynamics.zero_hidden(1);
        let rolled = latent_rollout(&dynamics, &z, &h, &c, &[1, 1]).unwrap();
        // Restarting from zero hidden after step one must disagree with the
        // threaded rollout, otherwise the recurrence is being dropped.
        let feat = one_hot_rows(1, 4, 1);
        let naive = no_grad(|| {
            dynamics.forward_step(&rolled[0], &feat, &h, &c).map(|(z2, _, _)| z2)
        })
        .unwrap();
        let diff: f64 = rolled[1]
            .value_vec()
            .iter()
            .zip(naive.value_vec())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-9, "hidden state had no effect, diff {diff}");
    }

    #[test]
    fn depth_one_is_argmax_over_single_step_values() {
        let (dynamics, reward) = models(4);
        let z = some_latent(10);
        let (dh, dc) = dynamics.zero_hidden(1);
        let (rh, rc) = reward.zero_hidden(1);

        let mut best = (0usize, f64::NEG_INFINITY);
        for a in 0..4 {
            let feat = one_hot_rows(1, 4, a);
            let v = no_grad(|| -> crate::Result<f64> {
                let (z2, _, _) = dynamics.forward_step(&z, &feat, &dh, &dc)?;
                let pv = reward.policy_value(&z2, &rh, &rc)?;
                Ok(pv.value.scalar_value())
            })
            .unwrap();
            if v > best.1 {
                best = (a, v);
            }
        }
        let (action, nodes) = plan_action_with_stats(
            &dynamics,
            &reward,
            &z,
            (&dh, &dc),
            (&rh, &rc),
            &PlanConfig::depth(1),
        )
        .unwrap();
        assert_eq!(action.index(), best.0);
        assert_eq!(nodes, 4);
    }

    #[test]
    fn depth_three_evaluates_exactly_84_nodes_and_is_deterministic() {
        let (dynamics, reward) = models(5);
        let z = some_latent(10);
        let (dh, dc) = dynamics.zero_hidden(1);
        let (rh, rc) = reward.zero_hidden(1);
        let cfg = PlanConfig::depth(3);
        let (a1, nodes) =
            plan_action_with_stats(&dynamics, &reward, &z, (&dh, &dc), (&rh, &rc), &cfg).unwrap();
        let (a2, _) =
            plan_action_with_stats(&dynamics, &reward, &z, (&dh, &dc), (&rh, &rc), &cfg).unwrap();
        assert_eq!(nodes, 4 + 16 + 64);
        assert_eq!(a1, a2);
    }

    #[test]
    fn exact_value_ties_pick_the_lowest_action_index() {
        let (dynamics, reward) = models(6);
        // Zero the whole reward model: every path value is exactly 0.
        for (_, t) in reward.params.iter() {
            t.set_values(&vec![0.0; t.len()]);
        }
        let z = some_latent(10);
        let (dh, dc) = dynamics.zero_hidden(1);
        let (rh, rc) = reward.zero_hidden(1);
        for depth in 1..=3 {
            let action = plan_action(
                &dynamics,
                &reward,
                &z,
                (&dh, &dc),
                (&rh, &rc),
                &PlanConfig::depth(depth),
            )
            .unwrap();
            assert_eq!(action.index(), 0, "depth {depth}");
        }
    }

    #[test]
    fn shifting_every_value_by_a_constant_keeps_the_choice() {
        let (dynamics, reward) = models(7);
        let (dh, dc) = dynamics.zero_hidden(1);
        let (rh, rc) = reward.zero_hidden(1);
        let cfg = PlanConfig::depth(2);
        for probe in 0..5u64 {
            let z = Tensor::row(
                (0..10).map(|i| (((i as u64 + probe * 13) % 9) as f64 - 4.0) / 5.0).collect(),
            );
            let before =
                plan_action(&dynamics, &reward, &z, (&dh, &dc), (&rh, &rc), &cfg).unwrap();
            // Adding c to the critic bias adds c to every node's value.
            let bias = reward.params.get("rew.critic.b").unwrap();
            let old = bias.value_vec();
            bias.set_values(&[old[0] + 3.7]);
            let after =
                plan_action(&dynamics, &reward, &z, (&dh, &dc), (&rh, &rc), &cfg).unwrap();
            bias.set_values(&old);
            assert_eq!(before, after, "probe {probe}");
        }
    }

    #[test]
    fn planning_never_mutates_parameters() {
        let (dynamics, reward) = models(8);
        let z = some_latent(10);
        let (dh, dc) = dynamics.zero_hidden(1);
        let (rh, rc) = reward.zero_hidden(1);
        let dyn_before = dynamics.params.snapshot();
        let rew_before = reward.params.snapshot();
        plan_action(&dynamics, &reward, &z, (&dh, &dc), (&rh, &rc), &PlanConfig::depth(3))
            .unwrap();
        assert_eq!(dynamics.params.snapshot(), dyn_before);
        assert_eq!(reward.params.snapshot(), rew_before);
    }

    #[test]
    fn depth_zero_and_overflow_are_refused() {
        let (dynamics, reward) = models(9);
        let z = some_latent(10);
        let (dh, dc) = dynamics.zero_hidden(1);
        let (rh, rc) = reward.zero_hidden(1);
        for cfg in [PlanConfig::off(), PlanConfig { depth: 6, max_depth: 5 }] {
            let err = plan_action(&dynamics, &reward, &z, (&dh, &dc), (&rh, &rc), &cfg)
                .unwrap_err();
            assert!(matches!(err, Error::PlanDepthExceeded { .. }), "{cfg:?}");
        }
    }
}
