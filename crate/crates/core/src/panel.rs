//! Multi-subject trajectory storage and window/subject index arithmetic.
//!
//! A [`Panel`] holds `N` trajectories of length `T + 1`: states, actions and
//! rewards on an `(i, t)` grid. It is immutable after construction; every
//! downstream operation is a pure read, so a panel can be shared freely
//! across threads.
//!
//! Time indexing is 0-based with `t ∈ {0, ..., T}`. A [`Window`] `[a, b]`
//! covers the `b − a` transitions `(a → a+1), ..., (b−1 → b)`; a "most
//! recent change point at `T − τ`" therefore means the window `[T − τ, T]`
//! of `τ` transitions is stationary.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite set of permitted actions: integer codes plus display labels.
///
/// Binary problems use the coding `{-1, +1}` so that interaction dynamics
/// of the form `c·s·a` produce two genuinely distinct regimes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub codes: Vec<i64>,
    pub labels: Vec<String>,
}

impl ActionSpace {
    pub fn new(codes: Vec<i64>) -> Result<Self> {
        if codes.is_empty() {
            return Err(Error::validation("action space must be non-empty"));
        }
        let mut seen = codes.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != codes.len() {
            return Err(Error::validation("duplicate action codes"));
        }
        let labels = codes.iter().map(|c| c.to_string()).collect();
        Ok(ActionSpace { codes, labels })
    }

    /// The default binary coding `{-1, +1}`.
    pub fn binary() -> Self {
        ActionSpace::new(vec![-1, 1]).expect("binary coding is valid")
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn contains(&self, code: i64) -> bool {
        self.codes.contains(&code)
    }

    /// Position of `code` within the action space.
    pub fn index_of(&self, code: i64) -> Option<usize> {
        self.codes.iter().position(|&c| c == code)
    }

    /// Parse a comma-separated code list such as `"-1,1"`.
    pub fn parse(text: &str) -> Result<Self> {
        let codes = text
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<i64>()
                    .map_err(|_| Error::validation(format!("bad action code {tok:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ActionSpace::new(codes)
    }
}

/// Inclusive time window `[start, end]` covering `end − start` transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::EmptySelection(format!(
                "window [{start}, {end}] contains no transitions"
            )));
        }
        Ok(Window { start, end })
    }

    /// Number of transitions in the window.
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Transition indices `start..end`: transition `t` maps `S_t` to `S_{t+1}`.
    pub fn transition_times(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }

    fn check_for(&self, panel: &Panel) -> Result<()> {
        if self.end > panel.horizon {
            return Err(Error::shape(format!(
                "window [{}, {}] exceeds horizon T = {}",
                self.start, self.end, panel.horizon
            )));
        }
        Ok(())
    }
}

/// Ordered set of subject indices; a non-empty one identifies a cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSet {
    members: Vec<usize>,
}

impl SubjectSet {
    pub fn new(mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        let before = members.len();
        members.dedup();
        if members.len() != before {
            return Err(Error::validation("duplicate subject index"));
        }
        Ok(SubjectSet { members })
    }

    /// All subjects `0..n` of a panel.
    pub fn all(n: usize) -> Self {
        SubjectSet {
            members: (0..n).collect(),
        }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }

    fn check_for(&self, panel: &Panel) -> Result<()> {
        if let Some(&i) = self.members.iter().find(|&&i| i >= panel.n_subjects) {
            return Err(Error::validation(format!(
                "subject index {i} out of range (N = {})",
                panel.n_subjects
            )));
        }
        Ok(())
    }
}

/// One observed transition: `(state, action, reward, next state)` at `(subject, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<'a> {
    pub subject: usize,
    pub t: usize,
    pub state: &'a [f64],
    pub action: i64,
    pub reward: f64,
    pub next_state: &'a [f64],
}

/// Immutable N×(T+1) grid of states, actions and rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    n_subjects: usize,
    horizon: usize,
    state_dim: usize,
    /// Row-major `(i, t, dim)` state grid, length `N·(T+1)·d`.
    states: Vec<f64>,
    /// Action codes on the `(i, t)` grid, length `N·(T+1)`.
    actions: Vec<i64>,
    /// Rewards on the `(i, t)` grid, length `N·(T+1)`.
    rewards: Vec<f64>,
    action_space: ActionSpace,
}

impl Panel {
    /// Build a panel from per-subject trajectories, validating all invariants.
    ///
    /// `states[i]` must have length `T + 1` with constant state dimension,
    /// `actions[i]` and `rewards[i]` length `T + 1`, all values finite, and
    /// every action a member of `action_space`.
    pub fn from_trajectories(
        states: Vec<Vec<Vec<f64>>>,
        actions: Vec<Vec<i64>>,
        rewards: Vec<Vec<f64>>,
        action_space: ActionSpace,
    ) -> Result<Self> {
        let n = states.len();
        if n == 0 {
            return Err(Error::shape("panel must contain at least one subject"));
        }
        if actions.len() != n || rewards.len() != n {
            return Err(Error::shape(format!(
                "got {n} state trajectories but {} action and {} reward trajectories",
                actions.len(),
                rewards.len()
            )));
        }
        let steps = states[0].len();
        if steps < 2 {
            return Err(Error::shape("trajectories need at least two time points"));
        }
        let horizon = steps - 1;
        let state_dim = states[0].first().map(|s| s.len()).unwrap_or(0);
        if state_dim == 0 {
            return Err(Error::shape("state dimension must be positive"));
        }

        let mut flat_states = Vec::with_capacity(n * steps * state_dim);
        let mut flat_actions = Vec::with_capacity(n * steps);
        let mut flat_rewards = Vec::with_capacity(n * steps);
        for i in 0..n {
            if states[i].len() != steps || actions[i].len() != steps || rewards[i].len() != steps {
                return Err(Error::shape(format!(
                    "subject {i} is ragged: expected {steps} time points"
                )));
            }
            for t in 0..steps {
                let s = &states[i][t];
                if s.len() != state_dim {
                    return Err(Error::shape(format!(
                        "subject {i} state at t = {t} has dimension {} (expected {state_dim})",
                        s.len()
                    )));
                }
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(Error::validation(format!(
                        "non-finite state for subject {i} at t = {t}"
                    )));
                }
                if !rewards[i][t].is_finite() {
                    return Err(Error::validation(format!(
                        "non-finite reward for subject {i} at t = {t}"
                    )));
                }
                if !action_space.contains(actions[i][t]) {
                    return Err(Error::validation(format!(
                        "action {} for subject {i} at t = {t} is not in the action space",
                        actions[i][t]
                    )));
                }
                flat_states.extend_from_slice(s);
                flat_actions.push(actions[i][t]);
                flat_rewards.push(rewards[i][t]);
            }
        }

        Ok(Panel {
            n_subjects: n,
            horizon,
            state_dim,
            states: flat_states,
            actions: flat_actions,
            rewards: flat_rewards,
            action_space,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    /// Termination time `T`; trajectories have `T + 1` time points.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.action_space
    }

    /// State vector of subject `i` at time `t`.
    pub fn state(&self, i: usize, t: usize) -> &[f64] {
        let base = (i * (self.horizon + 1) + t) * self.state_dim;
        &self.states[base..base + self.state_dim]
    }

    pub fn action(&self, i: usize, t: usize) -> i64 {
        self.actions[i * (self.horizon + 1) + t]
    }

    pub fn reward(&self, i: usize, t: usize) -> f64 {
        self.rewards[i * (self.horizon + 1) + t]
    }

    /// All transitions for `subjects` within `window`, ordered by
    /// `(subject, time)`. Exactly `|subjects| · window.len()` tuples.
    pub fn transitions(&self, subjects: &SubjectSet, window: Window) -> Result<Vec<Transition<'_>>> {
        subjects.check_for(self)?;
        window.check_for(self)?;
        if subjects.is_empty() {
            return Err(Error::EmptySelection("no subjects selected".into()));
        }
        let mut out = Vec::with_capacity(subjects.len() * window.len());
        for i in subjects.iter() {
            for t in window.transition_times() {
                out.push(Transition {
                    subject: i,
                    t,
                    state: self.state(i, t),
                    action: self.action(i, t),
                    reward: self.reward(i, t),
                    next_state: self.state(i, t + 1),
                });
            }
        }
        Ok(out)
    }

    /// Window covering a subject's most recent `tau` transitions, `[T − τ, T]`.
    pub fn recent_window(&self, tau: usize) -> Result<Window> {
        if tau == 0 || tau > self.horizon {
            return Err(Error::config(format!(
                "tau = {tau} outside [1, T = {}]",
                self.horizon
            )));
        }
        Window::new(self.horizon - tau, self.horizon)
    }

    /// Copy out the sub-panel on time range `[from, to]` (inclusive), shifting
    /// time so the result has horizon `to − from`.
    pub fn slice_time(&self, from: usize, to: usize) -> Result<Panel> {
        if from >= to || to > self.horizon {
            return Err(Error::shape(format!(
                "bad time slice [{from}, {to}] for horizon {}",
                self.horizon
            )));
        }
        let steps = to - from + 1;
        let mut states = Vec::with_capacity(self.n_subjects * steps * self.state_dim);
        let mut actions = Vec::with_capacity(self.n_subjects * steps);
        let mut rewards = Vec::with_capacity(self.n_subjects * steps);
        for i in 0..self.n_subjects {
            for t in from..=to {
                states.extend_from_slice(self.state(i, t));
                actions.push(self.action(i, t));
                rewards.push(self.reward(i, t));
            }
        }
        Ok(Panel {
            n_subjects: self.n_subjects,
            horizon: to - from,
            state_dim: self.state_dim,
            states,
            actions,
            rewards,
            action_space: self.action_space.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// I/O
// ---------------------------------------------------------------------------

/// Supported on-disk panel formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelFormat {
    /// Header `subject,t,a,r,s_0,...,s_{d-1}`, one row per `(i, t)`; the
    /// action space is declared out of band (CLI flag or caller argument).
    Csv,
    /// First line a metadata object declaring the action space, then one
    /// object per subject with `states`, `actions` and `rewards` arrays.
    Jsonl,
}

#[derive(Serialize, Deserialize)]
struct JsonlMeta {
    action_space: ActionSpace,
}

#[derive(Serialize, Deserialize)]
struct JsonlSubject {
    states: Vec<Vec<f64>>,
    actions: Vec<i64>,
    rewards: Vec<f64>,
}

/// Read a panel from `source`.
///
/// For [`PanelFormat::Csv`] the action space must be supplied; for
/// [`PanelFormat::Jsonl`] it comes from the leading metadata line and
/// `action_space` (if given) must agree with it.
pub fn load_panel(
    source: impl Read,
    format: PanelFormat,
    action_space: Option<ActionSpace>,
) -> Result<Panel> {
    match format {
        PanelFormat::Csv => {
            let space = action_space
                .ok_or_else(|| Error::config("CSV panels need an action space declaration"))?;
            load_csv(source, space)
        }
        PanelFormat::Jsonl => load_jsonl(source, action_space),
    }
}

/// Write a panel to `sink` in the given format.
pub fn save_panel(panel: &Panel, sink: &mut impl Write, format: PanelFormat) -> Result<()> {
    match format {
        PanelFormat::Csv => save_csv(panel, sink),
        PanelFormat::Jsonl => save_jsonl(panel, sink),
    }
}

fn load_csv(source: impl Read, action_space: ActionSpace) -> Result<Panel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if headers.len() < 5 || &headers[0] != "subject" || &headers[1] != "t" || &headers[2] != "a" {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header subject,t,a,r,s_0,... got {headers:?}"),
        });
    }
    let state_dim = headers.len() - 4;

    let mut states: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut actions: Vec<Vec<i64>> = Vec::new();
    let mut rewards: Vec<Vec<f64>> = Vec::new();

    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        let field = |idx: usize| -> &str { record.get(idx).unwrap_or("") };
        let subject: usize = field(0).parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad subject index {:?}", field(0)),
        })?;
        let t: usize = field(1).parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad time index {:?}", field(1)),
        })?;
        let a: i64 = field(2).parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad action {:?}", field(2)),
        })?;
        let r: f64 = field(3).parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad reward {:?}", field(3)),
        })?;
        let mut s = Vec::with_capacity(state_dim);
        for d in 0..state_dim {
            let v: f64 = field(4 + d).parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad state value {:?}", field(4 + d)),
            })?;
            s.push(v);
        }

        // Rows must arrive subject-major in time order with no gaps.
        if subject == states.len() && t == 0 {
            states.push(Vec::new());
            actions.push(Vec::new());
            rewards.push(Vec::new());
        }
        if subject + 1 != states.len() || t != states[subject].len() {
            return Err(Error::Parse {
                line,
                msg: format!("out-of-order row (subject {subject}, t {t})"),
            });
        }
        states[subject].push(s);
        actions[subject].push(a);
        rewards[subject].push(r);
    }

    if states.is_empty() {
        return Err(Error::shape("CSV contains no data rows"));
    }
    let steps = states[0].len();
    for (i, traj) in states.iter().enumerate() {
        if traj.len() != steps {
            return Err(Error::shape(format!(
                "subject {i} has {} time points, expected {steps}",
                traj.len()
            )));
        }
    }
    Panel::from_trajectories(states, actions, rewards, action_space)
}

fn save_csv(panel: &Panel, sink: &mut impl Write) -> Result<()> {
    let mut header = vec!["subject".to_string(), "t".into(), "a".into(), "r".into()];
    for d in 0..panel.state_dim {
        header.push(format!("s_{d}"));
    }
    writeln!(sink, "{}", header.join(","))?;
    for i in 0..panel.n_subjects {
        for t in 0..=panel.horizon {
            let mut row = format!("{i},{t},{},{}", panel.action(i, t), panel.reward(i, t));
            for v in panel.state(i, t) {
                row.push(',');
                row.push_str(&v.to_string());
            }
            writeln!(sink, "{row}")?;
        }
    }
    Ok(())
}

fn load_jsonl(source: impl Read, expected_space: Option<ActionSpace>) -> Result<Panel> {
    let reader = BufReader::new(source);
    let mut lines = reader.lines().enumerate();

    let (_, first) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        msg: "empty JSONL stream".into(),
    })?;
    let first = first?;
    let meta: JsonlMeta = serde_json::from_str(&first).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("bad metadata line: {e}"),
    })?;
    if let Some(expected) = expected_space {
        if expected != meta.action_space {
            return Err(Error::validation(
                "declared action space disagrees with JSONL metadata",
            ));
        }
    }

    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let subj: JsonlSubject = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        states.push(subj.states);
        actions.push(subj.actions);
        rewards.push(subj.rewards);
    }
    Panel::from_trajectories(states, actions, rewards, meta.action_space)
}

fn save_jsonl(panel: &Panel, sink: &mut impl Write) -> Result<()> {
    let meta = JsonlMeta {
        action_space: panel.action_space.clone(),
    };
    writeln!(sink, "{}", serde_json::to_string(&meta)?)?;
    for i in 0..panel.n_subjects {
        let subj = JsonlSubject {
            states: (0..=panel.horizon).map(|t| panel.state(i, t).to_vec()).collect(),
            actions: (0..=panel.horizon).map(|t| panel.action(i, t)).collect(),
            rewards: (0..=panel.horizon).map(|t| panel.reward(i, t)).collect(),
        };
        writeln!(sink, "{}", serde_json::to_string(&subj)?)?;
    }
    Ok(())
}
