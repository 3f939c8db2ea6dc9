//! Bias decoding graph: a deterministic failure-arc automaton over the
//! biasing list with per-token scores.
//!
//! The automaton is a phrase trie with breadth-first failure links
//! (longest proper suffix that is a phrase prefix) and suffix-closure
//! outputs, as in classical multi-pattern matching. Missing tokens walk
//! the failure chain without consuming; the final goto arc (or the root
//! miss) consumes.
//!
//! Two scoring modes:
//!
//! - **commit** — a step earns `s * len(p)` for every phrase `p` that
//!   completes at the new state. Exact against a naive substring scan.
//! - **prospective** — every consumed token earns `s` immediately and the
//!   credit is taken back if the phrase prefix dies before completing.
//!   Completing a phrase locks its credit in. Incremental credit like
//!   this is what a beam search wants, at the price of undercounting
//!   overlapping occurrences.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::TokenId;

pub type StateId = u32;
pub type PhraseId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    Commit,
    Prospective,
}

/// Automaton cursor: the trie state plus the number of prefix tokens
/// whose prospective credit is still refundable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphCursor {
    pub state: StateId,
    pub credit: u32,
}

impl GraphCursor {
    pub fn root() -> GraphCursor {
        GraphCursor { state: 0, credit: 0 }
    }
}

/// Result of stepping the automaton by one token.
#[derive(Debug, Clone)]
pub struct GraphStep {
    pub cursor: GraphCursor,
    pub score_delta: f64,
    /// Phrases completing at the new state, as (phrase id, length).
    pub matches: Vec<(PhraseId, usize)>,
}

/// A phrase occurrence found while scoring a whole sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchEvent {
    pub phrase: PhraseId,
    /// Index one past the last consumed token of the occurrence.
    pub end: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct BiasGraph {
    phrases: Vec<Vec<TokenId>>,
    goto_arcs: Vec<BTreeMap<TokenId, StateId>>,
    fail: Vec<StateId>,
    depth: Vec<u32>,
    /// Suffix-closure outputs per state, sorted by phrase id.
    outputs: Vec<Vec<PhraseId>>,
    /// Phrase whose token path ends exactly at this state, if any.
    terminal: Vec<Option<PhraseId>>,
    per_token_score: f64,
    blank: TokenId,
}

impl BiasGraph {
    /// Builds the automaton from blank-free, non-empty phrases.
    /// An empty list yields a root-only graph where every step scores 0.
    pub fn build(phrases: &[Vec<TokenId>], per_token_score: f64, blank: TokenId) -> Result<BiasGraph> {
        for (i, p) in phrases.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::Contract(format!("phrase {i} is empty")));
            }
            if p.contains(&blank) {
                return Err(Error::Contract(format!(
                    "phrase {i} contains the blank token"
                )));
            }
        }
        let mut g = BiasGraph {
            phrases: phrases.to_vec(),
            goto_arcs: vec![BTreeMap::new()],
            fail: vec![0],
            depth: vec![0],
            outputs: vec![Vec::new()],
            terminal: vec![None],
            per_token_score,
            blank,
        };
        // Trie.
        for (pid, phrase) in phrases.iter().enumerate() {
            let mut state = 0u32;
            for &tok in phrase {
                state = match g.goto_arcs[state as usize].get(&tok) {
                    Some(&next) => next,
                    None => {
                        let next = g.goto_arcs.len() as StateId;
                        g.goto_arcs[state as usize].insert(tok, next);
                        g.goto_arcs.push(BTreeMap::new());
                        g.fail.push(0);
                        g.depth.push(g.depth[state as usize] + 1);
                        g.outputs.push(Vec::new());
                        g.terminal.push(None);
                        next
                    }
                };
            }
            g.terminal[state as usize] = Some(pid);
            if !g.outputs[state as usize].contains(&pid) {
                g.outputs[state as usize].push(pid);
            }
        }
        // Breadth-first failure links with output closure.
        let mut queue: Vec<StateId> = g.goto_arcs[0].values().copied().collect();
        let mut head = 0;
        while head < queue.len() {
            let state = queue[head];
            head += 1;
            let arcs: Vec<(TokenId, StateId)> = g.goto_arcs[state as usize]
                .iter()
                .map(|(&t, &n)| (t, n))
                .collect();
            for (tok, next) in arcs {
                let mut f = g.fail[state as usize];
                let fail_to = loop {
                    if let Some(&n) = g.goto_arcs[f as usize].get(&tok) {
                        break n;
                    }
                    if f == 0 {
                        break 0;
                    }
                    f = g.fail[f as usize];
                };
                g.fail[next as usize] = fail_to;
                let inherited = g.outputs[fail_to as usize].clone();
                for pid in inherited {
                    if !g.outputs[next as usize].contains(&pid) {
                        g.outputs[next as usize].push(pid);
                    }
                }
                g.outputs[next as usize].sort_unstable();
                queue.push(next);
            }
        }
        Ok(g)
    }

    pub fn num_states(&self) -> usize {
        self.goto_arcs.len()
    }

    pub fn phrases(&self) -> &[Vec<TokenId>] {
        &self.phrases
    }

    pub fn per_token_score(&self) -> f64 {
        self.per_token_score
    }

    pub fn blank(&self) -> TokenId {
        self.blank
    }

    pub fn depth(&self, state: StateId) -> u32 {
        self.depth[state as usize]
    }

    pub fn fail_of(&self, state: StateId) -> StateId {
        self.fail[state as usize]
    }

    pub fn outputs(&self, state: StateId) -> &[PhraseId] {
        &self.outputs[state as usize]
    }

    /// Destination of consuming `token` at `state`, walking failure links
    /// as needed. `None` means a miss that lands back at the root.
    pub fn resolve_goto(&self, state: StateId, token: TokenId) -> Option<StateId> {
        let mut s = state;
        loop {
            if let Some(&n) = self.goto_arcs[s as usize].get(&token) {
                return Some(n);
            }
            if s == 0 {
                return None;
            }
            s = self.fail[s as usize];
        }
    }

    /// Tokens consumable from `state` through a real goto arc (its own
    /// arcs plus everything reachable along the failure chain).
    pub fn consumable_tokens(&self, state: StateId) -> Vec<TokenId> {
        let mut out: Vec<TokenId> = Vec::new();
        let mut s = state;
        loop {
            for &tok in self.goto_arcs[s as usize].keys() {
                if !out.contains(&tok) {
                    out.push(tok);
                }
            }
            if s == 0 {
                break;
            }
            s = self.fail[s as usize];
        }
        out.sort_unstable();
        out
    }

    /// Consumes one token. Blank never moves the automaton.
    pub fn step(&self, cursor: GraphCursor, token: TokenId, mode: ScoreMode) -> Result<GraphStep> {
        if (cursor.state as usize) >= self.num_states() {
            return Err(Error::Contract(format!(
                "unknown graph state {}",
                cursor.state
            )));
        }
        if token == self.blank {
            return Ok(GraphStep {
                cursor,
                score_delta: 0.0,
                matches: Vec::new(),
            });
        }
        let s = self.per_token_score;
        let (new_state, consumed) = match self.resolve_goto(cursor.state, token) {
            Some(n) => (n, true),
            None => (0, false),
        };
        let matches: Vec<(PhraseId, usize)> = self.outputs[new_state as usize]
            .iter()
            .map(|&pid| (pid, self.phrases[pid].len()))
            .collect();

        match mode {
            ScoreMode::Commit => {
                let delta: f64 = matches.iter().map(|&(_, len)| s * len as f64).sum();
                Ok(GraphStep {
                    cursor: GraphCursor {
                        state: new_state,
                        credit: 0,
                    },
                    score_delta: delta,
                    matches,
                })
            }
            ScoreMode::Prospective => {
                // Failure transitions drop the oldest path tokens; refund
                // whatever refundable credit they still carried.
                let kept_depth = if consumed {
                    self.depth[new_state as usize] - 1
                } else {
                    0
                };
                let refunded = cursor.credit.saturating_sub(kept_depth);
                let mut credit = cursor.credit - refunded + consumed as u32;
                let mut delta = s * (consumed as u32 as f64 - refunded as f64);
                for &(pid, len) in &matches {
                    if self.terminal[new_state as usize] == Some(pid) {
                        // The path itself completed: its per-token credit
                        // is already on the books, so lock it in.
                        credit = 0;
                    } else {
                        delta += s * len as f64;
                    }
                }
                Ok(GraphStep {
                    cursor: GraphCursor {
                        state: new_state,
                        credit,
                    },
                    score_delta: delta,
                    matches,
                })
            }
        }
    }

    /// Final forced failure to the root: refunds credit still pending for
    /// an incomplete phrase prefix. Zero in commit mode.
    pub fn finalize(&self, cursor: GraphCursor, mode: ScoreMode) -> f64 {
        match mode {
            ScoreMode::Commit => 0.0,
            ScoreMode::Prospective => -self.per_token_score * cursor.credit as f64,
        }
    }

    /// Folds `step` over `tokens` from the root; prospective mode applies
    /// the final forced failure so incomplete prefixes earn nothing.
    pub fn score_sequence(&self, tokens: &[TokenId], mode: ScoreMode) -> (f64, Vec<MatchEvent>) {
        let mut cursor = GraphCursor::root();
        let mut total = 0.0;
        let mut events = Vec::new();
        for (i, &tok) in tokens.iter().enumerate() {
            let step = self
                .step(cursor, tok, mode)
                .expect("cursor produced by this graph");
            total += step.score_delta;
            for (pid, len) in step.matches {
                events.push(MatchEvent {
                    phrase: pid,
                    end: i + 1,
                    len,
                });
            }
            cursor = step.cursor;
        }
        total += self.finalize(cursor, mode);
        (total, events)
    }

    /// Deterministic text listing of states, arcs, failure links, and
    /// outputs, for golden files and offline inspection.
    pub fn dump_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "biasgraph states={} score={} blank={}", self.num_states(), self.per_token_score, self.blank).unwrap();
        for (pid, phrase) in self.phrases.iter().enumerate() {
            let toks: Vec<String> = phrase.iter().map(|t| t.to_string()).collect();
            writeln!(out, "phrase {pid} {}", toks.join(",")).unwrap();
        }
        for state in 0..self.num_states() {
            let outs: Vec<String> = self.outputs[state].iter().map(|p| p.to_string()).collect();
            writeln!(
                out,
                "state {state} depth={} fail={} outputs={}",
                self.depth[state],
                self.fail[state],
                if outs.is_empty() { "-".to_string() } else { outs.join(",") }
            )
            .unwrap();
        }
        for state in 0..self.num_states() {
            for (&tok, &next) in &self.goto_arcs[state] {
                writeln!(out, "arc {state} {tok} {next}").unwrap();
            }
        }
        out
    }
}
