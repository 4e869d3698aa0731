use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ElectionError;
use crate::ids::{AgentId, TaskId};
use crate::Tick;

/// What a coordinator knows about one service candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateInfo {
    pub agent: AgentId,
    /// Queued work units.
    pub pending_work: f64,
    /// Work units processed per tick.
    pub capacity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RoundId {
    pub task: TaskId,
    /// Zero for the first election of a task, then one per re-election.
    pub attempt: u32,
}

impl RoundId {
    pub fn new(task: TaskId, attempt: u32) -> Self {
        Self { task, attempt }
    }
}

impl fmt::Display for RoundId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.task.0, self.attempt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRank {
    pub candidate: AgentId,
    pub value: f64,
    pub round: RoundId,
}

/// `pending_work / capacity`.
pub fn compute_load(c: &CandidateInfo, round: RoundId) -> Result<LoadRank, ElectionError> {
    if !(c.capacity > 0.0 && c.capacity.is_finite()) {
        return Err(ElectionError::InvalidCapacity(c.capacity));
    }
    if !(c.pending_work >= 0.0 && c.pending_work.is_finite()) {
        return Err(ElectionError::InvalidWork(c.pending_work));
    }
    Ok(LoadRank {
        candidate: c.agent.clone(),
        value: c.pending_work / c.capacity,
        round,
    })
}

fn rank_order(a: &LoadRank, b: &LoadRank) -> Ordering {
    a.value
        .total_cmp(&b.value)
        .then_with(|| a.candidate.cmp(&b.candidate))
}

/// Minimum value, least candidate id among equals.
pub fn argmin<'a>(ranks: impl IntoIterator<Item = &'a LoadRank>) -> Option<&'a LoadRank> {
    ranks.into_iter().min_by(|a, b| rank_order(a, b))
}

/// Ranks every candidate and returns the least loaded.
pub fn select_candidate(
    candidates: &[CandidateInfo],
    round: RoundId,
) -> Result<LoadRank, ElectionError> {
    let ranks = candidates
        .iter()
        .map(|c| compute_load(c, round))
        .collect::<Result<Vec<_>, _>>()?;
    argmin(&ranks)
        .cloned()
        .ok_or(ElectionError::NoServiceAvailable)
}

/// Result of offering a rank to a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Collect {
    Recorded,
    Duplicate,
    Late,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectionRound {
    pub id: RoundId,
    pub opened_at: Tick,
    pub window_deadline: Tick,
    pub ranks: BTreeMap<AgentId, LoadRank>,
    /// Agents that have reported for this round, with or without a rank.
    pub voters: BTreeSet<AgentId>,
    pub outcome: Option<AgentId>,
    pub decided_at: Option<Tick>,
    pub failed: bool,
}

impl ElectionRound {
    pub fn open(id: RoundId, now: Tick, window_ticks: Tick) -> Self {
        Self {
            id,
            opened_at: now,
            window_deadline: now + window_ticks,
            ranks: BTreeMap::new(),
            voters: BTreeSet::new(),
            outcome: None,
            decided_at: None,
            failed: false,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.outcome.is_some() || self.failed
    }

    /// Records `voter`'s report. The first rank per candidate wins; a voter
    /// may report at most once.
    pub fn collect(&mut self, voter: &AgentId, rank: Option<LoadRank>) -> Collect {
        if self.is_closed() {
            return Collect::Late;
        }
        if !self.voters.insert(voter.clone()) {
            return Collect::Duplicate;
        }
        match rank {
            Some(r) if !self.ranks.contains_key(&r.candidate) => {
                self.ranks.insert(r.candidate.clone(), r);
                Collect::Recorded
            }
            Some(_) => Collect::Duplicate,
            None => Collect::Recorded,
        }
    }

    /// Offers a candidate's own rank (voter and candidate coincide).
    pub fn collect_rank(&mut self, rank: LoadRank) -> Collect {
        let voter = rank.candidate.clone();
        self.collect(&voter, Some(rank))
    }

    pub fn heard_from_all<'a>(&self, expected: impl IntoIterator<Item = &'a AgentId>) -> bool {
        expected.into_iter().all(|a| self.voters.contains(a))
    }

    /// Elects the argmin. Allowed once the window has closed or every
    /// expected voter has reported. A decided round keeps its outcome.
    pub fn decide(&mut self, now: Tick, complete: bool) -> Result<AgentId, ElectionError> {
        if let Some(w) = &self.outcome {
            return Ok(w.clone());
        }
        if self.failed {
            return Err(ElectionError::ElectionFailed(self.id.task));
        }
        if now < self.window_deadline && !complete {
            return Err(ElectionError::NotReady {
                task: self.id.task,
                deadline: self.window_deadline,
            });
        }
        match argmin(self.ranks.values()) {
            Some(r) => {
                let w = r.candidate.clone();
                self.outcome = Some(w.clone());
                self.decided_at = Some(now);
                Ok(w)
            }
            None => {
                if now < self.window_deadline {
                    // Everyone abstained early; wait for the deadline anyway
                    // in case a straggler arrives.
                    return Err(ElectionError::NotReady {
                        task: self.id.task,
                        deadline: self.window_deadline,
                    });
                }
                self.failed = true;
                self.decided_at = Some(now);
                Err(ElectionError::ElectionFailed(self.id.task))
            }
        }
    }

    /// Precondition check for handing the task to `winner`.
    pub fn check_assignment(&self, winner: &AgentId) -> Result<(), ElectionError> {
        match &self.outcome {
            None => Err(ElectionError::Undecided),
            Some(w) if w == winner => Ok(()),
            Some(_) => Err(ElectionError::NotWinner(winner.clone())),
        }
    }
}

/// All rounds one observer knows about.
#[derive(Debug, Clone, Default)]
pub struct ElectionBook {
    rounds: BTreeMap<RoundId, ElectionRound>,
    pub late_ranks: u64,
}

impl ElectionBook {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens a round, or returns the existing one (decided or not).
    /// The flag is true when the round was created by this call.
    pub fn open(
        &mut self,
        id: RoundId,
        now: Tick,
        window_ticks: Tick,
    ) -> (&mut ElectionRound, bool) {
        let mut created = false;
        let round = self.rounds.entry(id).or_insert_with(|| {
            created = true;
            ElectionRound::open(id, now, window_ticks)
        });
        (round, created)
    }

    pub fn get(&self, id: &RoundId) -> Option<&ElectionRound> {
        self.rounds.get(id)
    }

    pub fn get_mut(&mut self, id: &RoundId) -> Option<&mut ElectionRound> {
        self.rounds.get_mut(id)
    }

    pub fn contains(&self, id: &RoundId) -> bool {
        self.rounds.contains_key(id)
    }

    /// Highest attempt opened for `task`.
    pub fn latest_attempt(&self, task: TaskId) -> Option<u32> {
        self.rounds
            .range(RoundId::new(task, 0)..=RoundId::new(task, u32::MAX))
            .next_back()
            .map(|(id, _)| id.attempt)
    }

    pub fn collect(
        &mut self,
        id: &RoundId,
        voter: &AgentId,
        rank: Option<LoadRank>,
    ) -> Option<Collect> {
        let round = self.rounds.get_mut(id)?;
        let c = round.collect(voter, rank);
        if c == Collect::Late {
            self.late_ranks += 1;
        }
        Some(c)
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Forgets closed rounds of `task` below `attempt`.
    pub fn forget_before(&mut self, task: TaskId, attempt: u32) {
        self.rounds
            .retain(|id, r| !(id.task == task && id.attempt < attempt && r.is_closed()));
    }
}
