//! Training rewards for a generative step scorer.
//!
//! For one annotated pair (winner gain `g⁺`, loser gain `g⁻`, rollout count
//! `M`) and a group of `N` scorer generations per side:
//!
//! * score reward   `r_s = 1 − |g − ĝ| / M`
//! * comparison     `r_c = (1/N) Σ_j y · sign(ĝ − ĝ'_j)` over the other side's
//!   predictions, with `y = +1` for the winner, `−1` for the loser, and
//!   `sign(0) = +1`
//! * margin weight  `w = (g⁺ − g⁻) / M`
//! * combined       `r = r_s + w · r_c`
//!
//! Rewards are exported raw; group normalization is left to the trainer.

use serde::{Deserialize, Serialize};

use crate::annotate::PreferencePair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Winner,
    Loser,
}

impl Side {
    /// Comparison direction `y`.
    pub fn direction(self) -> f64 {
        match self {
            Side::Winner => 1.0,
            Side::Loser => -1.0,
        }
    }
}

/// `+1` for `x >= 0`, `−1` otherwise.
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn score_reward(g: f64, g_hat: f64, m: usize) -> f64 {
    1.0 - ((g - g_hat) / m as f64).abs()
}

pub fn comparison_reward(g_hat: f64, side: Side, counterparts: &[f64]) -> Result<f64> {
    if counterparts.is_empty() {
        return Err(Error::InvalidConfig("comparison needs at least one counterpart prediction".into()));
    }
    let y = side.direction();
    let total: f64 = counterparts.iter().map(|&c| y * sign(g_hat - c)).sum();
    Ok(total / counterparts.len() as f64)
}

pub fn adaptive_weight(g_plus: f64, g_minus: f64, m: usize) -> f64 {
    (g_plus - g_minus) / m as f64
}

pub fn combined_reward(r_s: f64, r_c: f64, w: f64) -> f64 {
    r_s + w * r_c
}

/// Extracts the number on the last `Score: <number>` line and clamps it to
/// `[−M/2, M/2]`. The flag reports whether clamping changed the value.
pub fn parse_predicted_score(generation: &str, m: usize) -> Result<(f64, bool)> {
    let value = generation
        .lines()
        .rev()
        .find_map(|line| {
            let l = line.trim().trim_start_matches(['*', '#', ' ']);
            let rest = l.get(..6).filter(|p| p.eq_ignore_ascii_case("score:")).map(|_| &l[6..])?;
            let rest = rest.trim_start_matches(['*', ' ']);
            let num: String =
                rest.chars().take_while(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')).collect();
            num.parse::<f64>().ok().filter(|v| v.is_finite())
        })
        .ok_or(Error::NoScoreFound)?;
    let half = m as f64 / 2.0;
    let clamped = value.clamp(-half, half);
    Ok((clamped, clamped != value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerRollout {
    pub side: Side,
    pub analysis: String,
    pub g_hat: f64,
    pub clamped: bool,
}

impl ScorerRollout {
    pub fn from_generation(side: Side, generation: &str, m: usize) -> Result<Self> {
        let (g_hat, clamped) = parse_predicted_score(generation, m)?;
        Ok(ScorerRollout { side, analysis: generation.to_string(), g_hat, clamped })
    }

    /// A prediction given directly as a number, clamped to the score range.
    pub fn from_value(side: Side, g_hat: f64, m: usize) -> Result<Self> {
        if !g_hat.is_finite() {
            return Err(Error::ParseFailure(format!("non-finite prediction {g_hat}")));
        }
        let half = m as f64 / 2.0;
        let c = g_hat.clamp(-half, half);
        Ok(ScorerRollout { side, analysis: String::new(), g_hat: c, clamped: c != g_hat })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_s: f64,
    pub r_c: f64,
    pub w: f64,
    pub r: f64,
}

/// One breakdown per rollout, winners first, for a group of `N` winner and
/// `N` loser predictions.
pub fn group_rewards_for(
    g_plus: f64,
    g_minus: f64,
    m: usize,
    winners: &[ScorerRollout],
    losers: &[ScorerRollout],
) -> Result<Vec<RewardBreakdown>> {
    if winners.len() != losers.len() || winners.is_empty() {
        return Err(Error::LengthMismatch { winners: winners.len(), losers: losers.len() });
    }
    let w = adaptive_weight(g_plus, g_minus, m);
    let winner_hats: Vec<f64> = winners.iter().map(|r| r.g_hat).collect();
    let loser_hats: Vec<f64> = losers.iter().map(|r| r.g_hat).collect();
    let side = |rollouts: &[ScorerRollout], g: f64, side: Side, other: &[f64]| -> Result<Vec<RewardBreakdown>> {
        rollouts
            .iter()
            .map(|ro| {
                let r_s = score_reward(g, ro.g_hat, m);
                let r_c = comparison_reward(ro.g_hat, side, other)?;
                Ok(RewardBreakdown { r_s, r_c, w, r: combined_reward(r_s, r_c, w) })
            })
            .collect()
    };
    let mut out = side(winners, g_plus, Side::Winner, &loser_hats)?;
    out.extend(side(losers, g_minus, Side::Loser, &winner_hats)?);
    Ok(out)
}

pub fn group_rewards(
    pair: &PreferencePair,
    winners: &[ScorerRollout],
    losers: &[ScorerRollout],
) -> Result<Vec<RewardBreakdown>> {
    group_rewards_for(pair.winner.gain.g, pair.loser.gain.g, pair.winner.gain.m_rollouts, winners, losers)
}

/// Group-normalized advantages `(r − mean) / std`; all zeros when the group
/// has no spread.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// One exported reward line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub pair_id: String,
    pub side: Side,
    pub rollout_idx: usize,
    pub g_true: f64,
    pub g_hat: f64,
    pub r_s: f64,
    pub r_c: f64,
    pub w: f64,
    pub r: f64,
    pub clamped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage: Option<f64>,
}

/// Reward records for one pair's group, optionally with group advantages.
pub fn reward_records(
    pair_id: &str,
    g_plus: f64,
    g_minus: f64,
    m: usize,
    winners: &[ScorerRollout],
    losers: &[ScorerRollout],
    with_advantages: bool,
) -> Result<Vec<RewardRecord>> {
    let breakdowns = group_rewards_for(g_plus, g_minus, m, winners, losers)?;
    let adv = with_advantages.then(|| group_advantages(&breakdowns.iter().map(|b| b.r).collect::<Vec<_>>()));
    let rollouts = winners.iter().enumerate().chain(losers.iter().enumerate());
    Ok(rollouts
        .zip(breakdowns)
        .enumerate()
        .map(|(k, ((idx, ro), b))| RewardRecord {
            pair_id: pair_id.to_string(),
            side: ro.side,
            rollout_idx: idx,
            g_true: if ro.side == Side::Winner { g_plus } else { g_minus },
            g_hat: ro.g_hat,
            r_s: b.r_s,
            r_c: b.r_c,
            w: b.w,
            r: b.r,
            clamped: ro.clamped,
            advantage: adv.as_ref().map(|a| a[k]),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ro(side: Side, g_hat: f64) -> ScorerRollout {
        ScorerRollout::from_value(side, g_hat, 8).unwrap()
    }

    #[test]
    fn score_reward_examples() {
        assert_eq!(score_reward(1.5, 1.5, 8), 1.0);
        assert_eq!(score_reward(4.0, -4.0, 8), 0.0);
        assert_eq!(score_reward(2.0, 0.5, 8), 0.8125);
    }

    #[test]
    fn comparison_examples() {
        assert_eq!(comparison_reward(3.0, Side::Winner, &[1.0, 2.0, -1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(comparison_reward(2.0, Side::Loser, &[3.0, 3.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(comparison_reward(1.0, Side::Winner, &[1.0, 1.0]).unwrap(), 1.0);
        assert!(comparison_reward(1.0, Side::Winner, &[]).is_err());
    }

    #[test]
    fn weight_and_combination() {
        assert_eq!(adaptive_weight(1.0, 1.0, 8), 0.0);
        assert_eq!(adaptive_weight(4.0, -4.0, 8), 1.0);
        assert_eq!(adaptive_weight(1.5, 0.5, 8), 0.125);
        assert_eq!(combined_reward(1.0, 1.0, 1.0), 2.0);
        assert_eq!(combined_reward(0.0, -1.0, 1.0), -1.0);
        assert_eq!(combined_reward(0.8125, 0.0, 0.125), 0.8125);
    }

    #[test]
    fn perfect_predictions_single_rollout() {
        let rs = group_rewards_for(1.5, 0.5, 8, &[ro(Side::Winner, 1.5)], &[ro(Side::Loser, 0.5)]).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(rs[0].r, 1.125);
        assert_eq!(rs[1].r, 1.125);
    }

    #[test]
    fn identical_predictions_favor_winners() {
        let w: Vec<_> = (0..4).map(|_| ro(Side::Winner, 0.5)).collect();
        let l: Vec<_> = (0..4).map(|_| ro(Side::Loser, 0.5)).collect();
        let rs = group_rewards_for(2.0, -1.0, 8, &w, &l).unwrap();
        assert!(rs[..4].iter().all(|b| b.r_c == 1.0));
        assert!(rs[4..].iter().all(|b| b.r_c == -1.0));
    }

    #[test]
    fn mismatched_group() {
        let err = group_rewards_for(1.0, 0.0, 8, &[ro(Side::Winner, 0.0)], &[]).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { winners: 1, losers: 0 }));
    }

    #[test]
    fn score_parsing() {
        assert_eq!(parse_predicted_score("...analysis...\nScore: 2.5", 8).unwrap(), (2.5, false));
        assert_eq!(parse_predicted_score("Score: 1\n...\nScore: -3", 8).unwrap(), (-3.0, false));
        assert_eq!(parse_predicted_score("Score: 99", 8).unwrap(), (4.0, true));
        assert_eq!(parse_predicted_score("**Score:** -0.5\n", 8).unwrap(), (-0.5, false));
        assert!(matches!(parse_predicted_score("no marker", 8), Err(Error::NoScoreFound)));
        assert!(matches!(parse_predicted_score("Score: n/a", 8), Err(Error::NoScoreFound)));
    }

    #[test]
    fn advantages() {
        assert_eq!(group_advantages(&[1.0, 1.0]), vec![0.0, 0.0]);
        let a = group_advantages(&[0.0, 2.0]);
        assert_eq!(a, vec![-1.0, 1.0]);
    }

    #[test]
    fn records_carry_sides_and_indices() {
        let w = vec![ro(Side::Winner, 2.0), ro(Side::Winner, 9.0)];
        let l = vec![ro(Side::Loser, -1.0), ro(Side::Loser, 0.0)];
        let recs = reward_records("t:1", 2.0, -1.0, 8, &w, &l, true).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[1].rollout_idx, 1);
        assert!(recs[1].clamped);
        assert_eq!(recs[1].g_hat, 4.0);
        assert_eq!(recs[2].side, Side::Loser);
        assert_eq!(recs[2].rollout_idx, 0);
        assert_eq!(recs[2].g_true, -1.0);
        assert!(recs.iter().all(|r| r.advantage.is_some()));
        let v = serde_json::to_value(&recs[0]).unwrap();
        for k in ["pair_id", "side", "rollout_idx", "g_true", "g_hat", "r_s", "r_c", "w", "r", "clamped"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn half_steps(m: usize) -> impl Strategy<Value = f64> {
            let h = m as i64;
            (-h..=h).prop_map(|k| k as f64 / 2.0)
        }

        proptest! {
            #[test]
            fn ranges(m in prop::sample::select(vec![2usize, 4, 8, 16]),
                      n in 1usize..6,
                      seed in any::<u64>()) {
                let mut rng = crate::seed::rng(seed);
                use rand::Rng;
                let half = m as f64 / 2.0;
                let a: f64 = (rng.gen_range(-(m as i64)..=(m as i64)) as f64) / 2.0;
                let b: f64 = (rng.gen_range(-(m as i64)..=(m as i64)) as f64) / 2.0;
                let (gp, gm) = if a >= b { (a, b) } else { (b, a) };
                let w: Vec<_> = (0..n).map(|_| ScorerRollout::from_value(Side::Winner, rng.gen_range(-2.0 * half..2.0 * half), m).unwrap()).collect();
                let l: Vec<_> = (0..n).map(|_| ScorerRollout::from_value(Side::Loser, rng.gen_range(-2.0 * half..2.0 * half), m).unwrap()).collect();
                for b in group_rewards_for(gp, gm, m, &w, &l).unwrap() {
                    prop_assert!((0.0..=1.0).contains(&b.r_s));
                    prop_assert!((-1.0..=1.0).contains(&b.r_c));
                    prop_assert!((0.0..=1.0).contains(&b.w));
                    prop_assert!((-1.0..=2.0).contains(&b.r));
                    prop_assert_eq!(b.r, b.r_s + b.w * b.r_c);
                }
            }

            #[test]
            fn score_reward_decreases_with_error(g in half_steps(8), e1 in 0.0f64..4.0, e2 in 0.0f64..4.0) {
                prop_assume!(e1 < e2);
                prop_assert!(score_reward(g, g + e1, 8) > score_reward(g, g + e2, 8));
            }

            #[test]
            fn single_rollout_sides_agree(a in -4.0f64..4.0, b in -4.0f64..4.0) {
                prop_assume!(a != b);
                let cw = comparison_reward(a, Side::Winner, &[b]).unwrap();
                let cl = comparison_reward(b, Side::Loser, &[a]).unwrap();
                prop_assert_eq!(cw, cl);
                prop_assert_eq!(cw, if a > b { 1.0 } else { -1.0 });
            }

            #[test]
            fn comparison_monotone_in_winner(x in -4.0f64..4.0, dx in 0.0f64..2.0, others in prop::collection::vec(-4.0f64..4.0, 1..6)) {
                let lo = comparison_reward(x, Side::Winner, &others).unwrap();
                let hi = comparison_reward(x + dx, Side::Winner, &others).unwrap();
                prop_assert!(hi >= lo);
            }

            #[test]
            fn zero_margin_gates_comparison(g in half_steps(8), hats in prop::collection::vec(-4.0f64..4.0, 2..8)) {
                let n = hats.len() / 2;
                let w: Vec<_> = hats[..n].iter().map(|&h| ro(Side::Winner, h)).collect();
                let l: Vec<_> = hats[n..2 * n].iter().map(|&h| ro(Side::Loser, h)).collect();
                for b in group_rewards_for(g, g, 8, &w, &l).unwrap() {
                    prop_assert_eq!(b.w, 0.0);
                    prop_assert_eq!(b.r, b.r_s);
                }
            }
        }
    }
}
