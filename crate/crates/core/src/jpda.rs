//! Joint association over permutations and the multi-target JPDA-FPF.
//!
//! With `M` targets and `M` observations per step the hidden association
//! is a permutation `γ`, `γᵐ` being the target behind observation `m`.
//! The joint filter tracks `π^γ` over all `M!` permutations:
//!
//! ```text
//! dπ^γ = q[1 − M! π^γ] dt + π^γ Σₘ (ĥ^{γᵐ} − H̃ᵐ)ᵀ dZᵐ − π^γ Σₘ (ĥ^{γᵐ}ᵀ H̃ᵐ − |H̃ᵐ|²) dt
//! H̃ᵐ  = Σ_γ π^γ ĥ^{γᵐ}
//! ```
//!
//! and each target's particles use the marginals `β^{m,n}` as observation
//! weights.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::fpf::{controlled_update, particle_noise, Channel, Predictions};
use crate::gain::GainMethod;
use crate::model::{DynamicsModel, ObservationModel, Scan};
use crate::noise::NoiseKey;
use crate::pda::{normalize_log, scaled_scan};

/// Largest `M` for which the `M!` joint table is enumerated.
pub const MAX_TARGETS: usize = 8;

/// All permutations of `0..m` in lexicographic order (identity first).
pub fn permutations(m: usize) -> Result<Vec<Vec<usize>>> {
    if m == 0 {
        return Err(Error::InvalidModel("need at least one target".into()));
    }
    if m > MAX_TARGETS {
        return Err(Error::TooManyTargets(m));
    }
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(m);
    let mut used = vec![false; m];
    fn extend(m: usize, current: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if current.len() == m {
            out.push(current.clone());
            return;
        }
        for k in 0..m {
            if !used[k] {
                used[k] = true;
                current.push(k);
                extend(m, current, used, out);
                current.pop();
                used[k] = false;
            }
        }
    }
    extend(m, &mut current, &mut used, &mut out);
    Ok(out)
}

/// Probabilities `π^γ` over the permutations of `M` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct JointBelief {
    perms: Arc<Vec<Vec<usize>>>,
    pi: DVector<f64>,
}

impl JointBelief {
    pub fn uniform(m: usize) -> Result<Self> {
        let perms = permutations(m)?;
        let k = perms.len();
        Ok(Self {
            perms: Arc::new(perms),
            pi: DVector::from_element(k, 1.0 / k as f64),
        })
    }

    /// Validates `pi`, indexed like [`permutations`].
    pub fn new(m: usize, pi: DVector<f64>) -> Result<Self> {
        let perms = permutations(m)?;
        if pi.len() != perms.len() {
            return Err(Error::Dimension {
                expected: perms.len(),
                got: pi.len(),
                context: "joint association table",
            });
        }
        if pi.iter().any(|p| !(0.0..=1.0).contains(p)) || (pi.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel(
                "joint probabilities must lie on the simplex".into(),
            ));
        }
        Ok(Self {
            perms: Arc::new(perms),
            pi,
        })
    }

    /// All mass on permutation `index`.
    pub fn concentrated(m: usize, index: usize) -> Result<Self> {
        let mut b = Self::uniform(m)?;
        if index >= b.pi.len() {
            return Err(Error::InvalidModel("permutation index out of range".into()));
        }
        b.pi.fill(0.0);
        b.pi[index] = 1.0;
        Ok(b)
    }

    fn with_values(&self, raw: DVector<f64>) -> Self {
        let mut pi = raw.map(|p| if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) });
        let sum = pi.sum();
        if sum > 0.0 {
            pi /= sum;
        } else {
            pi.fill(1.0 / pi.len() as f64);
        }
        Self {
            perms: self.perms.clone(),
            pi,
        }
    }

    pub fn m(&self) -> usize {
        self.perms[0].len()
    }

    pub fn permutations(&self) -> &[Vec<usize>] {
        &self.perms
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.pi
    }

    /// Index of `perm` in the table.
    pub fn index_of(&self, perm: &[usize]) -> Option<usize> {
        self.perms.iter().position(|p| p == perm)
    }
}

/// `β^{m,n}`: row `m` is an observation, column `n` a target.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalBeta {
    pub matrix: DMatrix<f64>,
}

impl MarginalBeta {
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.matrix[(m, n)]
    }
}

pub fn marginalize_beta(joint: &JointBelief) -> MarginalBeta {
    let m = joint.m();
    let mut matrix = DMatrix::zeros(m, m);
    for (perm, &p) in joint.perms.iter().zip(joint.pi.iter()) {
        for (slot, &target) in perm.iter().enumerate() {
            matrix[(slot, target)] += p;
        }
    }
    MarginalBeta { matrix }
}

fn check_lists(m: usize, h_hat: &[DVector<f64>], dz: &[DVector<f64>]) -> Result<()> {
    if h_hat.len() != m || dz.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: h_hat.len().min(dz.len()),
            context: "targets / observations",
        });
    }
    let s = h_hat[0].len();
    if h_hat.iter().chain(dz).any(|v| v.len() != s) {
        return Err(Error::Dimension {
            expected: s,
            got: 0,
            context: "observation dimension",
        });
    }
    Ok(())
}

/// Raw Euler increments of the general joint filter. `h_hat[n]` is the
/// prediction of target `n`; everything in standard-noise units.
pub fn joint_pi_increment_general(
    joint: &JointBelief,
    h_hat: &[DVector<f64>],
    dz: &[DVector<f64>],
    q: f64,
    dt: f64,
) -> Result<DVector<f64>> {
    let m = joint.m();
    check_lists(m, h_hat, dz)?;
    let beta = marginalize_beta(joint);
    // H̃ᵐ = Σ_γ π^γ ĥ^{γᵐ} = Σ_n β^{m,n} ĥⁿ.
    let h_tilde: Vec<DVector<f64>> = (0..m)
        .map(|slot| {
            (0..m).fold(DVector::zeros(h_hat[0].len()), |acc, n| {
                acc + &h_hat[n] * beta.get(slot, n)
            })
        })
        .collect();
    let size = joint.pi.len() as f64;
    let out = DVector::from_fn(joint.pi.len(), |g, _| {
        let p = joint.pi[g];
        let perm = &joint.perms[g];
        let mut noise = 0.0;
        let mut quad = 0.0;
        for slot in 0..m {
            let h = &h_hat[perm[slot]];
            noise += (h - &h_tilde[slot]).dot(&dz[slot]);
            quad += h.dot(&h_tilde[slot]) - h_tilde[slot].norm_squared();
        }
        q * (1.0 - size * p) * dt + p * noise - p * quad * dt
    });
    Ok(out)
}

/// General joint filter step, clamped and renormalized.
pub fn joint_pi_step_general(
    joint: &JointBelief,
    h_hat: &[DVector<f64>],
    dz: &[DVector<f64>],
    q: f64,
    dt: f64,
) -> Result<JointBelief> {
    let inc = joint_pi_increment_general(joint, h_hat, dz, q, dt)?;
    Ok(joint.with_values(&joint.pi + inc))
}

/// Two-target filter in the reduced form
/// `dπ¹ = −q(π¹ − π²)dt + π¹π² h̃ᵀ(dZ¹ − dZ²) − (π¹ − π²)π¹π²|h̃|² dt`,
/// `h̃ = ĥ¹ − ĥ²`, `π² = 1 − π¹`.
pub fn joint_pi_step_two_target(
    joint: &JointBelief,
    h1: &DVector<f64>,
    h2: &DVector<f64>,
    dz1: &DVector<f64>,
    dz2: &DVector<f64>,
    q: f64,
    dt: f64,
) -> Result<JointBelief> {
    if joint.m() != 2 {
        return Err(Error::InvalidModel("two-target filter needs M = 2".into()));
    }
    let (p1, p2) = (joint.pi[0], joint.pi[1]);
    let ht = h1 - h2;
    let d = -q * (p1 - p2) * dt + p1 * p2 * ht.dot(&(dz1 - dz2)) - (p1 - p2) * p1 * p2 * ht.norm_squared() * dt;
    let next = (p1 + d).clamp(0.0, 1.0);
    Ok(JointBelief {
        perms: joint.perms.clone(),
        pi: DVector::from_vec(vec![next, 1.0 - next]),
    })
}

/// Stateless discrete heuristic from per-target scaled predictions:
/// `π^γ ∝ Πₘ (1/N) Σᵢ exp(−|ΔZᵐ − h(X^{i;γᵐ}) dt|² / 2dt)`.
pub fn joint_pi_discrete_heuristic_from(
    preds: &[Predictions],
    range: std::ops::Range<usize>,
    dz: &[DVector<f64>],
    dt: f64,
) -> Result<JointBelief> {
    let m = preds.len();
    let template = JointBelief::uniform(m)?;
    if dz.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: dz.len(),
            context: "observations per step",
        });
    }
    // table[slot][target] = log particle-averaged likelihood.
    let table: Vec<Vec<f64>> = dz
        .iter()
        .map(|z| {
            preds
                .iter()
                .map(|p| crate::pda::log_target_likelihood(p, range.clone(), z, dt))
                .collect()
        })
        .collect();
    let logs: Vec<f64> = template
        .perms
        .iter()
        .map(|perm| perm.iter().enumerate().map(|(slot, &n)| table[slot][n]).sum())
        .collect();
    Ok(match normalize_log(&logs) {
        Some(pi) => template.with_values(pi),
        None => template,
    })
}

/// Discrete heuristic for a single-group observation model; `dz` raw.
pub fn joint_pi_discrete_heuristic(
    targets: &[Ensemble],
    obs: &ObservationModel,
    dz: &[DVector<f64>],
    dt: f64,
) -> Result<JointBelief> {
    let preds: Vec<Predictions> = targets
        .iter()
        .map(|e| Predictions::compute(e, obs))
        .collect::<Result<_>>()?;
    let scaled: Vec<DVector<f64>> = dz.iter().map(|z| z / obs.noise_scale()).collect();
    joint_pi_discrete_heuristic_from(&preds, 0..obs.dim_obs(), &scaled, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointFilter {
    Continuous,
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JpdaConfig {
    pub gain: GainMethod,
    pub joint_filter: JointFilter,
    pub q: f64,
}

/// Per-target ensembles plus one joint belief per sensor group.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTargetState {
    pub targets: Vec<Ensemble>,
    pub joints: Vec<JointBelief>,
    pub time: f64,
    pub step: u64,
}

impl MultiTargetState {
    pub fn new(targets: Vec<Ensemble>, obs: &ObservationModel, time: f64) -> Result<Self> {
        let m = targets.len();
        if targets
            .iter()
            .any(|e| e.len() != targets[0].len() || e.dim() != targets[0].dim())
        {
            return Err(Error::InvalidModel("target ensembles must share N and d".into()));
        }
        let joints = obs
            .sensor_groups()
            .iter()
            .map(|_| JointBelief::uniform(m))
            .collect::<Result<_>>()?;
        Ok(Self {
            targets,
            joints,
            time,
            step: 0,
        })
    }

    pub fn marginals(&self) -> Vec<MarginalBeta> {
        self.joints.iter().map(marginalize_beta).collect()
    }
}

/// One JPDA-FPF step: update the joint beliefs, marginalize, then move
/// each target's particles with its column of `β` as observation weights.
pub fn jpda_fpf_step(
    state: &MultiTargetState,
    dynamics: &[DynamicsModel],
    obs: &ObservationModel,
    scan: &Scan,
    dt: f64,
    config: &JpdaConfig,
    key: NoiseKey,
) -> Result<MultiTargetState> {
    let m = state.targets.len();
    if dynamics.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: dynamics.len(),
            context: "dynamics per target",
        });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidModel("dt must be > 0".into()));
    }
    let groups = obs.sensor_groups();
    if state.joints.len() != groups.len() {
        return Err(Error::Dimension {
            expected: groups.len(),
            got: state.joints.len(),
            context: "joint beliefs per sensor group",
        });
    }
    let dz = scaled_scan(scan, obs, &groups, m)?;
    let preds: Vec<Predictions> = state
        .targets
        .iter()
        .map(|e| Predictions::compute(e, obs))
        .collect::<Result<_>>()?;

    let mut joints = Vec::with_capacity(groups.len());
    for ((range, joint), slots) in groups.iter().zip(&state.joints).zip(&dz) {
        let next = match config.joint_filter {
            JointFilter::Heuristic => joint_pi_discrete_heuristic_from(&preds, range.clone(), slots, dt)?,
            JointFilter::Continuous => {
                let h_hat: Vec<DVector<f64>> = preds
                    .iter()
                    .map(|p| p.mean.rows(range.start, range.len()).into_owned())
                    .collect();
                let reference = &preds[0];
                let unwrapped: Vec<DVector<f64>> = slots
                    .iter()
                    .map(|z| reference.unwrapped(range.clone(), z.as_view(), dt))
                    .collect();
                if m == 2 {
                    joint_pi_step_two_target(joint, &h_hat[0], &h_hat[1], &unwrapped[0], &unwrapped[1], config.q, dt)?
                } else {
                    joint_pi_step_general(joint, &h_hat, &unwrapped, config.q, dt)?
                }
            }
        };
        joints.push(next);
    }
    let marginals: Vec<MarginalBeta> = joints.iter().map(marginalize_beta).collect();

    let mut targets = Vec::with_capacity(m);
    for (n, (ensemble, p)) in state.targets.iter().zip(&preds).enumerate() {
        let gain = config.gain.compute(ensemble, &p.deviations)?;
        let mut channels = Vec::with_capacity(groups.len() * m);
        for ((range, beta), slots) in groups.iter().zip(&marginals).zip(&dz) {
            for (slot, z) in slots.iter().enumerate() {
                channels.push(Channel {
                    range: range.clone(),
                    weight: beta.get(slot, n),
                    centered: p.centered(range.clone(), z.as_view(), dt),
                });
            }
        }
        let xi = particle_noise(key.derive(n as u64), state.step, ensemble.dim(), ensemble.len());
        targets.push(controlled_update(
            ensemble,
            &dynamics[n],
            state.time,
            dt,
            &gain,
            p,
            &channels,
            &xi,
        )?);
    }
    Ok(MultiTargetState {
        targets,
        joints,
        time: state.time + dt,
        step: state.step + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn permutation_table() {
        let p = permutations(3).unwrap();
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], vec![0, 1, 2]);
        assert_eq!(p[5], vec![2, 1, 0]);
        assert_eq!(permutations(8).unwrap().len(), 40320);
        assert!(matches!(permutations(9), Err(Error::TooManyTargets(9))));
    }

    #[test]
    fn two_target_marginals() {
        let j = JointBelief::new(2, v(&[0.7, 0.3])).unwrap();
        let b = marginalize_beta(&j);
        assert_eq!(b.matrix, DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.3, 0.7]));
    }

    #[test]
    fn uniform_and_concentrated_marginals() {
        for m in 1..=5 {
            let b = marginalize_beta(&JointBelief::uniform(m).unwrap());
            assert!(b.matrix.iter().all(|x| (x - 1.0 / m as f64).abs() < 1e-12));
        }
        let b = marginalize_beta(&JointBelief::concentrated(3, 0).unwrap());
        assert_eq!(b.matrix, DMatrix::identity(3, 3));
    }

    #[test]
    fn indistinguishable_targets_relax() {
        let j = JointBelief::new(2, v(&[0.8, 0.2])).unwrap();
        let h = v(&[1.3]);
        let next = joint_pi_step_two_target(&j, &h, &h, &v(&[0.4]), &v(&[-0.1]), 5.0, 0.01).unwrap();
        assert_relative_eq!(next.values()[0], 0.8 - 5.0 * 0.6 * 0.01, epsilon = 1e-15);
        let j3 = JointBelief::new(3, v(&[0.5, 0.1, 0.1, 0.1, 0.1, 0.1])).unwrap();
        let hs = vec![h.clone(), h.clone(), h.clone()];
        let dz = vec![v(&[0.2]), v(&[-0.4]), v(&[0.9])];
        let inc = joint_pi_increment_general(&j3, &hs, &dz, 2.0, 0.01).unwrap();
        for g in 0..6 {
            assert_relative_eq!(inc[g], 2.0 * (1.0 - 6.0 * j3.values()[g]) * 0.01, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_target_hand_cases() {
        let half = JointBelief::uniform(2).unwrap();
        let (h1, h2) = (v(&[2.0]), v(&[0.5]));
        let next = joint_pi_step_two_target(&half, &h1, &h2, &v(&[0.3]), &v(&[0.1]), 0.0, 0.01).unwrap();
        assert_relative_eq!(next.values()[0] - 0.5, 0.25 * 1.5 * 0.2, epsilon = 1e-15);

        let j = JointBelief::new(2, v(&[0.6, 0.4])).unwrap();
        let dt = 0.01;
        let next = joint_pi_step_two_target(&j, &v(&[1.0]), &v(&[0.0]), &v(&[0.1]), &v(&[0.0]), 0.0, dt).unwrap();
        assert_relative_eq!(next.values()[0] - 0.6, 0.24 * 0.1 - 0.2 * 0.24 * dt, epsilon = 1e-15);
    }

    #[test]
    fn uniform_three_target_average_prediction() {
        // With uniform π the noise term of every permutation is
        // Σₘ (ĥ^{γᵐ} − h̄)·dZᵐ, h̄ the plain average.
        let j = JointBelief::uniform(3).unwrap();
        let hs = vec![v(&[1.0]), v(&[2.0]), v(&[6.0])];
        let dz = vec![v(&[0.3]), v(&[-0.2]), v(&[0.5])];
        let inc = joint_pi_increment_general(&j, &hs, &dz, 0.0, 0.0).unwrap();
        for (g, perm) in j.permutations().iter().enumerate() {
            let expected: f64 = (0..3).map(|m| (hs[perm[m]][0] - 3.0) * dz[m][0]).sum::<f64>() / 6.0;
            assert_relative_eq!(inc[g], expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn heuristic_cases() {
        let obs = ObservationModel::linear(DMatrix::identity(1, 1), 1.0).unwrap();
        let a = Ensemble::from_scalars(&[0.0; 3]).unwrap();
        let b = Ensemble::from_scalars(&[10.0; 3]).unwrap();
        let j = joint_pi_discrete_heuristic(&[a.clone(), b], &obs, &[v(&[0.0]), v(&[10.0])], 1.0).unwrap();
        assert_relative_eq!(j.values()[0], 1.0 / (1.0 + (-100.0f64).exp()));
        assert!(j.values()[1] > 0.0 && j.values()[1] < 1e-40);
        let same = joint_pi_discrete_heuristic(
            &[a.clone(), a.clone(), a],
            &obs,
            &[v(&[0.3]), v(&[1.0]), v(&[-2.0])],
            0.1,
        )
        .unwrap();
        assert!(same.values().iter().all(|p| (p - 1.0 / 6.0).abs() < 1e-12));
    }

    fn random_joint(m: usize, raw: &[f64]) -> JointBelief {
        let k = permutations(m).unwrap().len();
        let pi = DVector::from_iterator(k, raw.iter().cycle().take(k).copied());
        let s = pi.sum();
        JointBelief::new(m, pi / s).unwrap()
    }

    proptest! {
        #[test]
        fn general_matches_two_target(
            p in 0.0..1.0f64,
            h in prop::collection::vec(-3.0..3.0f64, 4),
            z in prop::collection::vec(-0.3..0.3f64, 4),
            q in 0.0..20.0f64,
        ) {
            let j = JointBelief::new(2, v(&[p, 1.0 - p])).unwrap();
            let hs = vec![v(&h[0..2]), v(&h[2..4])];
            let dz = vec![v(&z[0..2]), v(&z[2..4])];
            let dt = 0.01;
            let raw_general = &j.pi + joint_pi_increment_general(&j, &hs, &dz, q, dt).unwrap();
            let two = joint_pi_step_two_target(&j, &hs[0], &hs[1], &dz[0], &dz[1], q, dt).unwrap();
            if (0.0..=1.0).contains(&raw_general[0]) {
                prop_assert!((raw_general[0] - two.values()[0]).abs() < 1e-10);
            }
            prop_assert!((raw_general.sum() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn marginal_rows_sum_to_one(m in 1usize..6, raw in prop::collection::vec(0.001..1.0f64, 1..50)) {
            let b = marginalize_beta(&random_joint(m, &raw));
            for r in 0..m {
                prop_assert!((b.matrix.row(r).sum() - 1.0).abs() < 1e-9);
                prop_assert!((b.matrix.column(r).sum() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn relabeling_is_equivariant(
            raw in prop::collection::vec(0.001..1.0f64, 6),
            h in prop::collection::vec(-2.0..2.0f64, 3),
            z in prop::collection::vec(-0.5..0.5f64, 3),
            sigma_index in 0usize..6,
        ) {
            let m = 3;
            let j = random_joint(m, &raw);
            let sigma = j.permutations()[sigma_index].clone();
            let hs: Vec<_> = h.iter().map(|x| v(&[*x])).collect();
            let dz: Vec<_> = z.iter().map(|x| v(&[*x])).collect();
            // Rename target n as σ(n) and slot m as σ(m): γ ↦ σ∘γ∘σ⁻¹.
            let mut inv = vec![0; m];
            for (a, &b) in sigma.iter().enumerate() {
                inv[b] = a;
            }
            let mut pi2 = DVector::zeros(6);
            for (g, perm) in j.permutations().iter().enumerate() {
                let mapped: Vec<usize> = (0..m).map(|slot| sigma[perm[inv[slot]]]).collect();
                pi2[j.index_of(&mapped).unwrap()] = j.values()[g];
            }
            let j2 = JointBelief::new(m, pi2).unwrap();
            let hs2: Vec<_> = (0..m).map(|n| hs[inv[n]].clone()).collect();
            let dz2: Vec<_> = (0..m).map(|slot| dz[inv[slot]].clone()).collect();
            let a = joint_pi_step_general(&j, &hs, &dz, 3.0, 0.01).unwrap();
            let b = joint_pi_step_general(&j2, &hs2, &dz2, 3.0, 0.01).unwrap();
            for (g, perm) in j.permutations().iter().enumerate() {
                let mapped: Vec<usize> = (0..m).map(|slot| sigma[perm[inv[slot]]]).collect();
                prop_assert!((a.values()[g] - b.values()[j.index_of(&mapped).unwrap()]).abs() < 1e-12);
            }
            let ba = marginalize_beta(&j);
            let bb = marginalize_beta(&j2);
            for slot in 0..m {
                for n in 0..m {
                    prop_assert!((ba.get(slot, n) - bb.get(sigma[slot], sigma[n])).abs() < 1e-12);
                }
            }
        }
    }
}
