//! Tiebreaking among labels that share the maximal field.

use serde::{Deserialize, Serialize};

/// How a weight `beta > 1` on the correct label enters the tiebreak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaMode {
    /// The correct label carries weight `beta` against weight 1 for each of
    /// the `n` tied wrong labels: success probability `beta / (beta + n)`.
    #[default]
    Normalized,
    /// `min(1, beta / (n + 1))`, the unnormalised rule clipped to a
    /// probability.
    Literal,
}

impl std::str::FromStr for BetaMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normalized" => Ok(Self::Normalized),
            "literal" => Ok(Self::Literal),
            other => Err(format!("unknown beta mode `{other}` (expected normalized|literal)")),
        }
    }
}

/// Probability that the correct label wins a tie against `n` wrong labels.
#[inline]
pub fn correct_win_probability(n: usize, beta: f64, mode: BetaMode) -> f64 {
    let n = n as f64;
    match mode {
        BetaMode::Normalized => beta / (beta + n),
        BetaMode::Literal => (beta / (n + 1.0)).min(1.0),
    }
}

/// Pick one of the tied labels given a uniform draw `u` in `[0, 1)`.
///
/// `favoured` is the label carrying weight `beta`, if it is among `tied`.
pub fn choose_tied(tied: &[usize], favoured: Option<usize>, beta: f64, mode: BetaMode, u: f64) -> usize {
    debug_assert!(!tied.is_empty());
    let Some(fav) = favoured.filter(|f| tied.contains(f)) else {
        return tied[((u * tied.len() as f64) as usize).min(tied.len() - 1)];
    };
    let others = tied.len() - 1;
    let p_fav = correct_win_probability(others, beta, mode);
    if u < p_fav || others == 0 {
        return fav;
    }
    // Rescale the remaining draw onto the other tied labels.
    let v = ((u - p_fav) / (1.0 - p_fav)).clamp(0.0, 1.0 - f64::EPSILON);
    let idx = (v * others as f64) as usize;
    tied.iter().copied().filter(|&l| l != fav).nth(idx.min(others - 1)).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_weight_reduces_to_one_over_n_plus_one() {
        for n in 0..10 {
            let expect = 1.0 / (n as f64 + 1.0);
            assert_eq!(correct_win_probability(n, 1.0, BetaMode::Normalized), expect);
            assert_eq!(correct_win_probability(n, 1.0, BetaMode::Literal), expect);
        }
    }

    #[test]
    fn literal_mode_is_clipped() {
        assert_eq!(correct_win_probability(0, 3.0, BetaMode::Literal), 1.0);
        assert_eq!(correct_win_probability(5, 3.0, BetaMode::Literal), 0.5);
        assert_eq!(correct_win_probability(1, 3.0, BetaMode::Normalized), 0.75);
    }

    #[test]
    fn choose_tied_frequencies() {
        let tied = [0, 3, 5];
        let mut hits = [0usize; 6];
        let steps = 30_000;
        for i in 0..steps {
            let u = (i as f64 + 0.5) / steps as f64;
            hits[choose_tied(&tied, Some(3), 2.0, BetaMode::Normalized, u)] += 1;
        }
        assert_eq!(hits[3], steps / 2);
        assert_eq!(hits[0], steps / 4);
        assert_eq!(hits[5], steps / 4);

        let mut hits = [0usize; 6];
        for i in 0..steps {
            let u = (i as f64 + 0.5) / steps as f64;
            hits[choose_tied(&tied, Some(1), 2.0, BetaMode::Normalized, u)] += 1;
        }
        assert_eq!(hits[0] + hits[3] + hits[5], steps);
        assert_eq!(hits[3], steps / 3);
    }
}
