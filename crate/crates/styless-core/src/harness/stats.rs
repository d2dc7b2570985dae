//! Paired sign tests for small-sample attack comparisons.

/// Exact one-sided sign test. Given `wins` pairs favoring the treatment out
/// of `discordant` non-tied pairs, returns P[Binomial(n, 1/2) >= wins].
pub fn sign_test_p(wins: usize, discordant: usize) -> f64 {
    if discordant == 0 {
        return 1.0;
    }
    let n = discordant;
    // P[X = k] built multiplicatively from k = 0: C(n, k) / 2^n.
    let mut pmf = 0.5f64.powi(n as i32);
    let mut tail = 0.0;
    for k in 0..=n {
        if k >= wins {
            tail += pmf;
        }
        if k < n {
            pmf *= (n - k) as f64 / (k + 1) as f64;
        }
    }
    tail.min(1.0)
}

/// Result of a paired comparison of per-image success indicators.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PairedComparison {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided p-value that the treatment beats the control.
    pub p_greater: f64,
}

/// Compare per-image successes: `treatment[i]` vs `control[i]`.
pub fn paired_sign_test(treatment: &[bool], control: &[bool]) -> PairedComparison {
    assert_eq!(
        treatment.len(),
        control.len(),
        "paired test needs aligned samples"
    );
    let mut wins = 0;
    let mut losses = 0;
    let mut ties = 0;
    for (&t, &c) in treatment.iter().zip(control) {
        match (t, c) {
            (true, false) => wins += 1,
            (false, true) => losses += 1,
            _ => ties += 1,
        }
    }
    PairedComparison {
        wins,
        losses,
        ties,
        p_greater: sign_test_p(wins, wins + losses),
    }
}

/// Same test over paired real-valued observations (e.g. final loss gaps):
/// a win is `treatment[i] < control[i]` when `lower_is_better`, else `>`.
pub fn paired_sign_test_values(
    treatment: &[f64],
    control: &[f64],
    lower_is_better: bool,
) -> PairedComparison {
    assert_eq!(treatment.len(), control.len());
    let mut wins = 0;
    let mut losses = 0;
    let mut ties = 0;
    for (&t, &c) in treatment.iter().zip(control) {
        let delta = if lower_is_better { c - t } else { t - c };
        if delta > 0.0 {
            wins += 1;
        } else if delta < 0.0 {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    PairedComparison {
        wins,
        losses,
        ties,
        p_greater: sign_test_p(wins, wins + losses),
    }
}
