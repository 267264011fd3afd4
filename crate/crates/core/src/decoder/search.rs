//! Greedy, beam and exhaustive decoding over an abstract step scorer.

use crate::decoder::AttentionRecord;
use crate::error::Result;

/// One decoding step: log-probabilities over the vocabulary and the next state.
pub struct Step<T> {
    pub log_probs: Vec<f64>,
    pub state: T,
    pub attention: Option<AttentionRecord>,
}

pub trait StepScorer {
    type State: Clone;

    fn initial(&mut self) -> Result<Self::State>;

    /// Feeds `token` (the previous output, BOS first) to `state`.
    fn step(&mut self, state: &Self::State, token: usize) -> Result<Step<Self::State>>;
}

#[derive(Clone, Debug)]
pub struct SearchConfig {
    /// Maximum number of emitted tokens, EOS excluded.
    pub max_len: usize,
    pub bos: usize,
    pub eos: usize,
    /// Tokens that are never emitted.
    pub banned: Vec<usize>,
}

impl SearchConfig {
    pub fn for_questions() -> Self {
        SearchConfig {
            max_len: crate::corpus::MAX_QUESTION_LEN,
            bos: crate::corpus::BOS,
            eos: crate::corpus::EOS,
            banned: vec![crate::corpus::PAD, crate::corpus::BOS],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens, EOS excluded.
    pub tokens: Vec<usize>,
    /// Summed log-probability, including the EOS step when one was emitted.
    pub log_prob: f64,
    pub attention: Vec<AttentionRecord>,
    pub ended_with_eos: bool,
}

fn allowed(cfg: &SearchConfig, vocab: usize) -> impl Iterator<Item = usize> + '_ {
    (0..vocab).filter(move |t| !cfg.banned.contains(t))
}

pub fn greedy_search<P: StepScorer>(scorer: &mut P, cfg: &SearchConfig) -> Result<Hypothesis> {
    let mut state = scorer.initial()?;
    let mut prev = cfg.bos;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        attention: Vec::new(),
        ended_with_eos: false,
    };
    while hyp.tokens.len() < cfg.max_len {
        let step = scorer.step(&state, prev)?;
        let mut best: Option<(usize, f64)> = None;
        for t in allowed(cfg, step.log_probs.len()) {
            if best.is_none_or(|(_, b)| step.log_probs[t] > b) {
                best = Some((t, step.log_probs[t]));
            }
        }
        let Some((tok, lp)) = best else { break };
        hyp.log_prob += lp;
        hyp.attention.extend(step.attention);
        if tok == cfg.eos {
            hyp.ended_with_eos = true;
            break;
        }
        hyp.tokens.push(tok);
        state = step.state;
        prev = tok;
    }
    Ok(hyp)
}

struct Live<T> {
    hyp: Hypothesis,
    state: T,
}

/// Beam search with summed log-probabilities and no length normalization.
///
/// Each round expands every live prefix by every allowed token and keeps the
/// `width` best candidates; candidates ending in EOS or reaching `max_len`
/// move to the finished pool. Search stops once no live prefix can beat the
/// best finished one (log-probabilities only decrease).
pub fn beam_search<P: StepScorer>(scorer: &mut P, width: usize, cfg: &SearchConfig) -> Result<Hypothesis> {
    let width = width.max(1);
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            attention: Vec::new(),
            ended_with_eos: false,
        },
        state: scorer.initial()?,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    if cfg.max_len == 0 {
        return Ok(live.remove(0).hyp);
    }
    while !live.is_empty() {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        let mut steps = Vec::with_capacity(live.len());
        for (h, l) in live.iter().enumerate() {
            let prev = l.hyp.tokens.last().copied().unwrap_or(cfg.bos);
            let step = scorer.step(&l.state, prev)?;
            for t in allowed(cfg, step.log_probs.len()) {
                cands.push((l.hyp.log_prob + step.log_probs[t], h, t));
            }
            steps.push(step);
        }
        // Stable order: score, then earlier prefix, then smaller token id.
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::new();
        for &(score, h, t) in cands.iter().take(width) {
            let mut hyp = live[h].hyp.clone();
            hyp.log_prob = score;
            hyp.attention.extend(steps[h].attention.clone());
            if t == cfg.eos {
                hyp.ended_with_eos = true;
                finished.push(hyp);
                continue;
            }
            hyp.tokens.push(t);
            if hyp.tokens.len() >= cfg.max_len {
                finished.push(hyp);
            } else {
                next.push(Live {
                    hyp,
                    state: steps[h].state.clone(),
                });
            }
        }
        live = next;
        let best_done = finished.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        let best_live = live.iter().map(|l| l.hyp.log_prob).fold(f64::NEG_INFINITY, f64::max);
        if best_done >= best_live {
            break;
        }
    }
    let mut best: Option<Hypothesis> = None;
    for h in finished {
        if best.as_ref().is_none_or(|b| h.log_prob > b.log_prob) {
            best = Some(h);
        }
    }
    Ok(best.expect("at least one hypothesis finishes"))
}

/// Best sequence over every path of at most `max_len` tokens (test oracle; exponential).
pub fn exhaustive_search<P: StepScorer>(scorer: &mut P, cfg: &SearchConfig) -> Result<Hypothesis> {
    fn walk<P: StepScorer>(
        scorer: &mut P,
        cfg: &SearchConfig,
        state: &P::State,
        prefix: &mut Vec<usize>,
        lp: f64,
        best: &mut Option<Hypothesis>,
    ) -> Result<()> {
        let consider = |best: &mut Option<Hypothesis>, tokens: &[usize], lp: f64, eos: bool| {
            if best.as_ref().is_none_or(|b| lp > b.log_prob) {
                *best = Some(Hypothesis {
                    tokens: tokens.to_vec(),
                    log_prob: lp,
                    attention: Vec::new(),
                    ended_with_eos: eos,
                });
            }
        };
        if prefix.len() == cfg.max_len {
            consider(best, prefix, lp, false);
            return Ok(());
        }
        let prev = prefix.last().copied().unwrap_or(cfg.bos);
        let step = scorer.step(state, prev)?;
        for t in allowed(cfg, step.log_probs.len()) {
            let next_lp = lp + step.log_probs[t];
            if t == cfg.eos {
                consider(best, prefix, next_lp, true);
            } else {
                prefix.push(t);
                walk(scorer, cfg, &step.state, prefix, next_lp, best)?;
                prefix.pop();
            }
        }
        Ok(())
    }
    let init = scorer.initial()?;
    let mut best = None;
    walk(scorer, cfg, &init, &mut Vec::new(), 0.0, &mut best)?;
    Ok(best.expect("search space is non-empty"))
}
