//! Error-rate scoring with biased/unbiased character classes.
//!
//! Reference positions covered by a biasing phrase occurrence form the
//! biased class; substitutions and deletions follow the class of their
//! reference position. An inserted run counts to the biased class only
//! when the whole run equals a biasing phrase.

use crate::TokenId;

/// One edit operation anchoring reference and hypothesis positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match { r: usize, h: usize },
    Substitute { r: usize, h: usize },
    Delete { r: usize },
    Insert { h: usize },
}

/// Minimal unit-cost edit script between reference and hypothesis.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub ops: Vec<EditOp>,
    pub distance: usize,
}

/// Levenshtein alignment; ties prefer match, then substitute, then
/// delete, then insert, backtracking from the end.
pub fn align(reference: &[TokenId], hypothesis: &[TokenId]) -> Alignment {
    let n = reference.len();
    let m = hypothesis.len();
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for i in 0..=n {
        dp[i][0] = i;
    }
    for j in 0..=m {
        dp[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && reference[i - 1] == hypothesis[j - 1] && dp[i][j] == dp[i - 1][j - 1]
        {
            ops.push(EditOp::Match { r: i - 1, h: j - 1 });
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && dp[i][j] == dp[i - 1][j - 1] + 1 {
            ops.push(EditOp::Substitute { r: i - 1, h: j - 1 });
            i -= 1;
            j -= 1;
        } else if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            ops.push(EditOp::Delete { r: i - 1 });
            i -= 1;
        } else {
            ops.push(EditOp::Insert { h: j - 1 });
            j -= 1;
        }
    }
    ops.reverse();
    Alignment {
        ops,
        distance: dp[n][m],
    }
}

/// Marks every reference position covered by an exact occurrence of any
/// biasing phrase (all occurrences, overlaps unioned).
pub fn tag_bias_regions(reference: &[TokenId], phrases: &[Vec<TokenId>]) -> Vec<bool> {
    let mut mask = vec![false; reference.len()];
    for phrase in phrases {
        if phrase.is_empty() || phrase.len() > reference.len() {
            continue;
        }
        for start in 0..=reference.len() - phrase.len() {
            if &reference[start..start + phrase.len()] == phrase.as_slice() {
                mask[start..start + phrase.len()]
                    .iter_mut()
                    .for_each(|b| *b = true);
            }
        }
    }
    mask
}

/// Error tallies for one character class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl ClassCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// (S+D+I)/N for the class; infinite when the class has errors but no
    /// reference mass.
    pub fn rate(&self) -> f64 {
        if self.ref_len == 0 {
            if self.errors() == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.errors() as f64 / self.ref_len as f64
        }
    }

    fn add(&mut self, other: &ClassCounts) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_len += other.ref_len;
    }
}

/// Edit errors split into biased and unbiased character populations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalReport {
    pub biased: ClassCounts,
    pub unbiased: ClassCounts,
}

impl EvalReport {
    pub fn cer(&self) -> f64 {
        let total = ClassCounts {
            substitutions: self.biased.substitutions + self.unbiased.substitutions,
            deletions: self.biased.deletions + self.unbiased.deletions,
            insertions: self.biased.insertions + self.unbiased.insertions,
            ref_len: self.biased.ref_len + self.unbiased.ref_len,
        };
        total.rate()
    }

    pub fn b_cer(&self) -> f64 {
        self.biased.rate()
    }

    pub fn u_cer(&self) -> f64 {
        self.unbiased.rate()
    }

    /// True when some class has errors but no reference mass, making its
    /// rate infinite.
    pub fn degenerate(&self) -> bool {
        !self.b_cer().is_finite() || !self.u_cer().is_finite()
    }

    /// Pools another report into this one (micro-average).
    pub fn absorb(&mut self, other: &EvalReport) {
        self.biased.add(&other.biased);
        self.unbiased.add(&other.unbiased);
    }

    /// Machine-readable key-value lines.
    pub fn to_kv_lines(&self) -> String {
        format!(
            "cer={:.6}\nb_cer={:.6}\nu_cer={:.6}\n\
             biased_sub={}\nbiased_del={}\nbiased_ins={}\nbiased_ref={}\n\
             unbiased_sub={}\nunbiased_del={}\nunbiased_ins={}\nunbiased_ref={}\n",
            self.cer(),
            self.b_cer(),
            self.u_cer(),
            self.biased.substitutions,
            self.biased.deletions,
            self.biased.insertions,
            self.biased.ref_len,
            self.unbiased.substitutions,
            self.unbiased.deletions,
            self.unbiased.insertions,
            self.unbiased.ref_len,
        )
    }

    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str("class      sub    del    ins    ref     rate\n");
        for (name, c) in [("biased", &self.biased), ("unbiased", &self.unbiased)] {
            out.push_str(&format!(
                "{name:<9} {:>5} {:>6} {:>6} {:>6} {:>8.4}\n",
                c.substitutions,
                c.deletions,
                c.insertions,
                c.ref_len,
                c.rate()
            ));
        }
        out.push_str(&format!(
            "overall   {:>5} {:>6} {:>6} {:>6} {:>8.4}\n",
            self.biased.substitutions + self.unbiased.substitutions,
            self.biased.deletions + self.unbiased.deletions,
            self.biased.insertions + self.unbiased.insertions,
            self.biased.ref_len + self.unbiased.ref_len,
            self.cer()
        ));
        out
    }
}

/// Scores one utterance: aligns, tags bias regions, and attributes each
/// edit to its class.
pub fn score(reference: &[TokenId], hypothesis: &[TokenId], phrases: &[Vec<TokenId>]) -> EvalReport {
    let alignment = align(reference, hypothesis);
    let mask = tag_bias_regions(reference, phrases);
    let mut report = EvalReport::default();
    for &biased in &mask {
        if biased {
            report.biased.ref_len += 1;
        } else {
            report.unbiased.ref_len += 1;
        }
    }
    let mut idx = 0;
    while idx < alignment.ops.len() {
        match alignment.ops[idx] {
            EditOp::Match { .. } => idx += 1,
            EditOp::Substitute { r, .. } => {
                if mask[r] {
                    report.biased.substitutions += 1;
                } else {
                    report.unbiased.substitutions += 1;
                }
                idx += 1;
            }
            EditOp::Delete { r } => {
                if mask[r] {
                    report.biased.deletions += 1;
                } else {
                    report.unbiased.deletions += 1;
                }
                idx += 1;
            }
            EditOp::Insert { .. } => {
                // Maximal inserted run: biased only when the run equals a
                // biasing phrase exactly.
                let mut run = Vec::new();
                let mut end = idx;
                while end < alignment.ops.len() {
                    if let EditOp::Insert { h } = alignment.ops[end] {
                        run.push(hypothesis[h]);
                        end += 1;
                    } else {
                        break;
                    }
                }
                let is_phrase = phrases.iter().any(|p| p == &run);
                let class = if is_phrase {
                    &mut report.biased
                } else {
                    &mut report.unbiased
                };
                class.insertions += run.len();
                idx = end;
            }
        }
    }
    report
}
