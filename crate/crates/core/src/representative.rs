//! Representative questions and the frequency-conserving merge algebra used
//! by the mining pipeline.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Reverse;

/// Canonical phrasing of a group of mined questions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Representative {
    pub qid: String,
    pub text: String,
    /// Number of underlying question occurrences.
    pub frequency: u64,
    /// QIDs of the per-cluster representatives folded into this one.
    pub member_qids: Vec<String>,
}

impl Representative {
    pub fn new(qid: impl Into<String>, text: impl Into<String>, frequency: u64) -> Self {
        let qid = qid.into();
        Self {
            member_qids: alloc::vec![qid.clone()],
            qid,
            text: text.into(),
            frequency,
        }
    }
}

/// QIDs a model judged to be the same question.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MergeGroup(pub Vec<String>);

/// What happens to representatives no group mentions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unlisted {
    /// Pass through unchanged (merge semantics).
    Keep,
    /// Leave out of the output (final-list semantics).
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroupRejection {
    Empty,
    UnknownQid(String),
    /// The qid was already consumed by an earlier group.
    AlreadyGrouped(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MergeOutcome {
    pub representatives: Vec<Representative>,
    /// Index of each rejected group with the reason.
    pub rejected: Vec<(usize, GroupRejection)>,
}

pub fn total_frequency(reps: &[Representative]) -> u64 {
    reps.iter().map(|r| r.frequency).sum()
}

/// Collapses each valid group into one representative: frequency is the sum,
/// `member_qids` the sorted union, and qid and text come from the member with
/// the highest frequency (smallest qid on ties). A group naming an unknown or
/// already-grouped qid is rejected on its own; the others still apply.
pub fn apply_merge_groups(reps: &[Representative], groups: &[MergeGroup], unlisted: Unlisted) -> MergeOutcome {
    let position: BTreeMap<&str, usize> = reps.iter().enumerate().map(|(i, r)| (r.qid.as_str(), i)).collect();
    let mut owner: Vec<Option<usize>> = alloc::vec![None; reps.len()];
    let mut accepted: Vec<Vec<usize>> = Vec::new();
    let mut rejected = Vec::new();

    'groups: for (gi, group) in groups.iter().enumerate() {
        let mut members: Vec<usize> = Vec::new();
        for qid in &group.0 {
            let Some(&i) = position.get(qid.as_str()) else {
                rejected.push((gi, GroupRejection::UnknownQid(qid.clone())));
                continue 'groups;
            };
            if owner[i].is_some() {
                rejected.push((gi, GroupRejection::AlreadyGrouped(qid.clone())));
                continue 'groups;
            }
            if !members.contains(&i) {
                members.push(i);
            }
        }
        if members.is_empty() {
            rejected.push((gi, GroupRejection::Empty));
            continue;
        }
        let slot = accepted.len();
        for &i in &members {
            owner[i] = Some(slot);
        }
        accepted.push(members);
    }

    let mut emitted = alloc::vec![false; accepted.len()];
    let mut out = Vec::new();
    for (i, rep) in reps.iter().enumerate() {
        match owner[i] {
            None => {
                if unlisted == Unlisted::Keep {
                    out.push(rep.clone());
                }
            }
            Some(slot) if !emitted[slot] => {
                emitted[slot] = true;
                out.push(collapse(reps, &accepted[slot]));
            }
            Some(_) => {}
        }
    }
    MergeOutcome {
        representatives: out,
        rejected,
    }
}

fn collapse(reps: &[Representative], members: &[usize]) -> Representative {
    let lead = members
        .iter()
        .map(|&i| &reps[i])
        .min_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.qid.cmp(&b.qid)))
        .expect("non-empty group");
    let member_qids: BTreeSet<&String> = members.iter().flat_map(|&i| reps[i].member_qids.iter()).collect();
    Representative {
        qid: lead.qid.clone(),
        text: lead.text.clone(),
        frequency: members.iter().map(|&i| reps[i].frequency).sum(),
        member_qids: member_qids.into_iter().cloned().collect(),
    }
}

/// First `min(n, len)` representatives by frequency descending, qid
/// ascending on ties.
pub fn select_top(mut reps: Vec<Representative>, n: usize) -> Vec<Representative> {
    reps.sort_by(|a, b| Reverse(a.frequency).cmp(&Reverse(b.frequency)).then_with(|| a.qid.cmp(&b.qid)));
    reps.truncate(n);
    reps
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReviewRejection {
    FrequencyChanged { before: u64, after: u64 },
    TooManyDropped { dropped: usize, total: usize },
}

/// Accepts a review result only when it conserves total frequency and still
/// covers at least half of the input qids.
pub fn check_review(before: &[Representative], after: &[Representative]) -> Result<(), ReviewRejection> {
    let covered: BTreeSet<&str> = after.iter().flat_map(|r| r.member_qids.iter().map(String::as_str)).collect();
    let dropped = before
        .iter()
        .filter(|r| !r.member_qids.iter().all(|q| covered.contains(q.as_str())))
        .count();
    if dropped * 2 > before.len() {
        return Err(ReviewRejection::TooManyDropped {
            dropped,
            total: before.len(),
        });
    }
    let (b, a) = (total_frequency(before), total_frequency(after));
    if a != b {
        return Err(ReviewRejection::FrequencyChanged { before: b, after: a });
    }
    Ok(())
}
