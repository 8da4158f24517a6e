//! Line-oriented adversary scripts.
//!
//! One decision per line; blank lines and `#` comments are ignored.
//!
//! ```text
//! seed <u64>                   RNG seed for `rand` items (default 0)
//! quant <width>                responses are bucketed as floor(z / width) (default 1)
//! label <name>                 jump target
//! ins <item|rand|last> [q]     insert; `q` flags a query
//! del <item|rand|last> [q]     delete
//! goto <name> [times]          jump; with `times`, jump that many times then fall through
//! if <cond> <name>             jump when the condition holds on the latest response
//! ```
//!
//! Conditions: `up`, `down`, `same` compare the two latest bucketed
//! responses; `gt v` / `lt v` compare the latest bucket with `v`; `over` /
//! `under` compare the latest raw response with the script's own exact F2;
//! `qge n` holds once `n` queries have been issued. With no response yet,
//! every response condition is false. `last` before any update means item 1.
//!
//! Running off the end of the script ends the stream. In the interruption
//! game every step is answered, so the script observes a response after
//! every update. The committed stream is the script's run assuming each
//! future response repeats the latest one; whenever an actual response sends
//! the script down a different path, the adversary interrupts (budget
//! permitting) with the re-predicted suffix.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{AsaAdversary, AsbiAdversary};
use crate::seed::SketchSeed;
use crate::sketch::StreamUpdate;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Target {
    Item(u32),
    Rand,
    Last,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Cond {
    Up,
    Down,
    Same,
    Over,
    Under,
    Gt(i64),
    Lt(i64),
    QueriesAtLeast(usize),
}

#[derive(Clone, Debug, PartialEq)]
enum Op {
    Emit { delete: bool, target: Target, query: bool },
    Goto { to: usize, times: Option<u32> },
    If { cond: Cond, to: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Script {
    ops: Vec<Op>,
    seed: u64,
    quant: f64,
}

fn err(line: usize, message: impl Into<String>) -> ScriptError {
    ScriptError {
        line,
        message: message.into(),
    }
}

fn number<T: std::str::FromStr>(line: usize, word: Option<&str>, what: &str) -> Result<T, ScriptError> {
    let word = word.ok_or_else(|| err(line, format!("missing {what}")))?;
    word.parse()
        .map_err(|_| err(line, format!("bad {what} `{word}`")))
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut ops = Vec::new();
        let mut labels = HashMap::new();
        let mut jumps: Vec<(usize, usize, String)> = Vec::new();
        let mut seed = 0;
        let mut quant = 1.0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("");
            let mut words = content.split_whitespace();
            let Some(head) = words.next() else {
                continue;
            };
            match head {
                "seed" => seed = number(line, words.next(), "seed")?,
                "quant" => {
                    quant = number(line, words.next(), "width")?;
                    if !(quant > 0.0 && f64::is_finite(quant)) {
                        return Err(err(line, "quant width must be positive"));
                    }
                }
                "label" => {
                    let name = words.next().ok_or_else(|| err(line, "missing label name"))?;
                    if labels.insert(name.to_string(), ops.len()).is_some() {
                        return Err(err(line, format!("duplicate label `{name}`")));
                    }
                }
                "ins" | "del" => {
                    let target = match words.next() {
                        Some("rand") => Target::Rand,
                        Some("last") => Target::Last,
                        w => {
                            let item: u32 = number(line, w, "item")?;
                            if item == 0 {
                                return Err(err(line, "items start at 1"));
                            }
                            Target::Item(item)
                        }
                    };
                    let query = match words.next() {
                        None => false,
                        Some("q") => true,
                        Some(w) => return Err(err(line, format!("unexpected `{w}`"))),
                    };
                    ops.push(Op::Emit {
                        delete: head == "del",
                        target,
                        query,
                    });
                }
                "goto" => {
                    let name = words.next().ok_or_else(|| err(line, "missing label"))?;
                    let times = match words.next() {
                        None => None,
                        w => Some(number(line, w, "repeat count")?),
                    };
                    jumps.push((ops.len(), line, name.to_string()));
                    ops.push(Op::Goto { to: 0, times });
                }
                "if" => {
                    let cond = match words.next() {
                        Some("up") => Cond::Up,
                        Some("down") => Cond::Down,
                        Some("same") => Cond::Same,
                        Some("over") => Cond::Over,
                        Some("under") => Cond::Under,
                        Some("gt") => Cond::Gt(number(line, words.next(), "bucket")?),
                        Some("lt") => Cond::Lt(number(line, words.next(), "bucket")?),
                        Some("qge") => Cond::QueriesAtLeast(number(line, words.next(), "count")?),
                        Some(w) => return Err(err(line, format!("unknown condition `{w}`"))),
                        None => return Err(err(line, "missing condition")),
                    };
                    let name = words.next().ok_or_else(|| err(line, "missing label"))?;
                    jumps.push((ops.len(), line, name.to_string()));
                    ops.push(Op::If { cond, to: 0 });
                }
                other => return Err(err(line, format!("unknown directive `{other}`"))),
            }
            if let Some(extra) = words.next() {
                return Err(err(line, format!("unexpected `{extra}`")));
            }
        }
        for (at, line, name) in jumps {
            let dest = *labels
                .get(&name)
                .ok_or_else(|| err(line, format!("unknown label `{name}`")))?;
            match &mut ops[at] {
                Op::Goto { to, .. } | Op::If { to, .. } => *to = dest,
                Op::Emit { .. } => unreachable!(),
            }
        }
        Ok(Self { ops, seed, quant })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn quant(&self) -> f64 {
        self.quant
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Largest literal item, for checking against a domain.
    pub fn max_item(&self) -> u32 {
        self.ops
            .iter()
            .filter_map(|op| match op {
                Op::Emit {
                    target: Target::Item(x),
                    ..
                } => Some(*x),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }
}

/// Control steps allowed between two updates before the script is treated
/// as exhausted (guards against update-free loops).
const FUEL: usize = 1 << 20;

#[derive(Clone, Debug)]
struct Machine {
    pc: usize,
    counters: Vec<Option<u32>>,
    rng: ChaCha8Rng,
    last_item: u32,
    latest: Option<f64>,
    bucket: Option<i64>,
    prev_bucket: Option<i64>,
    freq: Vec<i64>,
    f2: i64,
    queries: usize,
    done: bool,
}

impl Machine {
    fn new(script: &Script, domain: u32, rng: ChaCha8Rng) -> Self {
        Self {
            pc: 0,
            counters: vec![None; script.ops.len()],
            rng,
            last_item: 1,
            latest: None,
            bucket: None,
            prev_bucket: None,
            freq: vec![0; domain as usize + 1],
            f2: 0,
            queries: 0,
            done: false,
        }
    }

    fn holds(&self, cond: Cond) -> bool {
        let (Some(z), Some(b)) = (self.latest, self.bucket) else {
            return matches!(cond, Cond::QueriesAtLeast(n) if self.queries >= n);
        };
        match cond {
            Cond::Up => self.prev_bucket.is_some_and(|p| b > p),
            Cond::Down => self.prev_bucket.is_some_and(|p| b < p),
            Cond::Same => self.prev_bucket == Some(b),
            Cond::Over => z > self.f2 as f64,
            Cond::Under => z < self.f2 as f64,
            Cond::Gt(v) => b > v,
            Cond::Lt(v) => b < v,
            Cond::QueriesAtLeast(n) => self.queries >= n,
        }
    }

    fn next(&mut self, script: &Script, domain: u32, query_budget: Option<usize>) -> Option<StreamUpdate> {
        if self.done {
            return None;
        }
        for _ in 0..FUEL {
            let Some(op) = script.ops.get(self.pc) else {
                self.done = true;
                return None;
            };
            match *op {
                Op::Emit { delete, target, query } => {
                    self.pc += 1;
                    let item = match target {
                        Target::Item(x) => x,
                        Target::Rand => self.rng.random_range(1..=domain),
                        Target::Last => self.last_item,
                    };
                    self.last_item = item;
                    let query = query && query_budget.is_none_or(|t| self.queries < t);
                    self.queries += query as usize;
                    let u = if delete {
                        StreamUpdate::delete(item)
                    } else {
                        StreamUpdate::insert(item)
                    };
                    let f = &mut self.freq[item as usize];
                    let old = *f;
                    *f += u.delta as i64;
                    self.f2 += *f * *f - old * old;
                    return Some(u.with_query(query));
                }
                Op::Goto { to, times: None } => self.pc = to,
                Op::Goto { to, times: Some(n) } => {
                    let left = self.counters[self.pc].get_or_insert(n);
                    if *left == 0 {
                        self.counters[self.pc] = None;
                        self.pc += 1;
                    } else {
                        *left -= 1;
                        self.pc = to;
                    }
                }
                Op::If { cond, to } => {
                    self.pc = if self.holds(cond) { to } else { self.pc + 1 };
                }
            }
        }
        self.done = true;
        None
    }

    fn observe(&mut self, z: f64, quant: f64) {
        self.prev_bucket = self.bucket;
        self.bucket = Some((z / quant).floor() as i64);
        self.latest = Some(z);
    }
}

/// Deterministic adversary driven by a [`Script`]; works in both games.
#[derive(Clone, Debug)]
pub struct ScriptedAdversary {
    script: Arc<Script>,
    domain: u32,
    query_budget: Option<usize>,
    interruption_budget: usize,
    machine: Machine,
    committed: Vec<StreamUpdate>,
    interruptions: usize,
}

impl ScriptedAdversary {
    pub fn new(script: Arc<Script>, domain: u32) -> Result<Self, ScriptError> {
        let rng = ChaCha8Rng::seed_from_u64(script.seed);
        Self::build(script, domain, rng)
    }

    /// Same script, `rand` items drawn from `seed` instead of the script's seed.
    pub fn reseeded(script: Arc<Script>, domain: u32, seed: &SketchSeed) -> Result<Self, ScriptError> {
        Self::build(script, domain, seed.child("script").rng())
    }

    fn build(script: Arc<Script>, domain: u32, rng: ChaCha8Rng) -> Result<Self, ScriptError> {
        if domain == 0 || script.max_item() > domain {
            return Err(err(0, format!("script items exceed domain {domain}")));
        }
        Ok(Self {
            machine: Machine::new(&script, domain, rng),
            script,
            domain,
            query_budget: None,
            interruption_budget: 0,
            committed: Vec::new(),
            interruptions: 0,
        })
    }

    /// Query flags beyond `t` are dropped.
    pub fn with_query_budget(mut self, t: usize) -> Self {
        self.query_budget = Some(t);
        self
    }

    pub fn with_interruption_budget(mut self, r: usize) -> Self {
        self.interruption_budget = r;
        self
    }

    pub fn queries(&self) -> usize {
        self.machine.queries
    }

    pub fn interruptions(&self) -> usize {
        self.interruptions
    }

    /// Whether the script ran out of instructions.
    pub fn exhausted(&self) -> bool {
        self.machine.done
    }

    fn predict(&self, from: &Machine, len: usize, assumed: f64) -> Vec<StreamUpdate> {
        let mut sim = from.clone();
        let mut out = Vec::with_capacity(len);
        while out.len() < len {
            let Some(u) = sim.next(&self.script, self.domain, None) else {
                break;
            };
            out.push(u.with_query(false));
            sim.observe(assumed, self.script.quant);
        }
        out
    }
}

impl AsaAdversary for ScriptedAdversary {
    fn next_update(&mut self) -> Option<StreamUpdate> {
        self.machine.next(&self.script, self.domain, self.query_budget)
    }

    fn observe(&mut self, response: f64) {
        self.machine.observe(response, self.script.quant);
    }
}

impl AsbiAdversary for ScriptedAdversary {
    fn commit(&mut self, len: usize) -> Vec<StreamUpdate> {
        self.committed = self.predict(&self.machine, len, 0.0);
        self.committed.clone()
    }

    fn react(&mut self, step: usize, response: f64) -> Option<Vec<StreamUpdate>> {
        if self.interruptions >= self.interruption_budget {
            return None;
        }
        let emitted = self.machine.next(&self.script, self.domain, None);
        debug_assert_eq!(emitted.map(|u| u.with_query(false)), self.committed.get(step - 1).copied());
        self.machine.observe(response, self.script.quant);
        let len = self.committed.len();
        if step >= len {
            return None;
        }
        let suffix = self.predict(&self.machine, len - step, response);
        if suffix.len() < len - step || suffix[..] == self.committed[step..] {
            return None;
        }
        self.committed.truncate(step);
        self.committed.extend_from_slice(&suffix);
        self.interruptions += 1;
        Some(suffix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adv(text: &str, domain: u32) -> ScriptedAdversary {
        ScriptedAdversary::new(Arc::new(Script::parse(text).unwrap()), domain).unwrap()
    }

    fn drain(a: &mut ScriptedAdversary, limit: usize) -> Vec<StreamUpdate> {
        std::iter::from_fn(|| a.next_update()).take(limit).collect()
    }

    #[test]
    fn empty_script_emits_nothing() {
        let mut a = adv("# nothing\n\n", 8);
        assert_eq!(a.next_update(), None);
        assert!(a.exhausted());
    }

    #[test]
    fn counted_loops() {
        let mut a = adv("label a\nins 2\ngoto a 2\ndel 3 q", 8);
        let got = drain(&mut a, 10);
        assert_eq!(
            got,
            vec![
                StreamUpdate::insert(2),
                StreamUpdate::insert(2),
                StreamUpdate::insert(2),
                StreamUpdate::delete(3).queried()
            ]
        );
    }

    #[test]
    fn nested_counted_loops_reset() {
        let text = "label outer\nlabel inner\nins 1\ngoto inner 1\nins 2\ngoto outer 1";
        let items: Vec<u32> = drain(&mut adv(text, 4), 20).iter().map(|u| u.item).collect();
        assert_eq!(items, vec![1, 1, 2, 1, 1, 2]);
    }

    #[test]
    fn update_free_loop_ends() {
        let mut a = adv("label a\ngoto a", 4);
        assert_eq!(a.next_update(), None);
    }

    #[test]
    fn branches_on_responses() {
        let text = "label top\nins 1 q\nif up grow\ndel 1\ngoto top\nlabel grow\nins 2\ngoto top";
        let mut a = adv(text, 4);
        assert_eq!(a.next_update(), Some(StreamUpdate::insert(1).queried()));
        a.observe(10.0);
        assert_eq!(a.next_update(), Some(StreamUpdate::delete(1)));
        assert_eq!(a.next_update(), Some(StreamUpdate::insert(1).queried()));
        a.observe(12.0);
        assert_eq!(a.next_update(), Some(StreamUpdate::insert(2)));
    }

    #[test]
    fn quantized_and_truth_conditions() {
        let text = "quant 10\nlabel top\nins 1 q\nif gt 2 big\nif over over\nins 3\ngoto top\nlabel big\nins 2\ngoto top\nlabel over\nins 4\ngoto top";
        let mut a = adv(text, 4);
        a.next_update();
        a.observe(29.9);
        assert_eq!(a.next_update().unwrap().item, 4);
        a.next_update();
        a.observe(30.0);
        assert_eq!(a.next_update().unwrap().item, 2);
    }

    #[test]
    fn query_budget_drops_flags() {
        let mut a = adv("label a\nins rand q\ngoto a", 16).with_query_budget(3);
        let got = drain(&mut a, 10);
        assert_eq!(got.iter().filter(|u| u.query).count(), 3);
        assert_eq!(a.queries(), 3);
    }

    #[test]
    fn parse_errors_name_the_line() {
        for (text, line) in [
            ("ins 0", 1),
            ("ins 1\nfoo", 2),
            ("goto nowhere", 1),
            ("label a\nlabel a", 2),
            ("ins 1 x", 1),
            ("if sideways a\nlabel a", 1),
            ("quant -1", 1),
        ] {
            assert_eq!(Script::parse(text).unwrap_err().line, line, "{text}");
        }
        let s = Arc::new(Script::parse("ins 9").unwrap());
        assert!(ScriptedAdversary::new(s, 8).is_err());
    }

    #[test]
    fn interrupts_when_branch_changes() {
        let text = "label top\nins 1\nif gt 5 big\ngoto top\nlabel big\nins 2\ngoto top";
        let mut a = adv(text, 4).with_interruption_budget(1);
        let committed = a.commit(6);
        assert!(committed.iter().all(|u| u.item == 1));
        assert_eq!(a.react(1, 1.0), None);
        let suffix = a.react(2, 9.0).unwrap();
        assert_eq!(suffix.len(), 4);
        assert_eq!(suffix[0].item, 2);
        assert_eq!(a.interruptions(), 1);
        assert_eq!(a.react(3, 0.0), None);
    }
}
