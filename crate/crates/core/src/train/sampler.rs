//! Negative samplers: triple corruption and per-user negative items.

use std::ops::Range;

use rand::Rng;

use crate::dataset::Triple;
use crate::error::{Error, Result};

/// Where subjects and objects may be drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EntityLayout {
    pub num_users: usize,
    pub num_items: usize,
    /// Subjects are users and objects are items.
    pub typed: bool,
}

impl EntityLayout {
    pub fn num_entities(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn users(&self) -> Range<usize> {
        0..self.num_users
    }

    pub fn items(&self) -> Range<usize> {
        self.num_users..self.num_entities()
    }

    pub fn subject_candidates(&self) -> Range<usize> {
        if self.typed {
            self.users()
        } else {
            0..self.num_entities()
        }
    }

    pub fn object_candidates(&self) -> Range<usize> {
        if self.typed {
            self.items()
        } else {
            0..self.num_entities()
        }
    }
}

fn draw_excluding<R: Rng + ?Sized>(rng: &mut R, range: &Range<usize>, exclude: usize) -> usize {
    let r = rng.gen_range(0..range.len() - 1) + range.start;
    if r >= exclude {
        r + 1
    } else {
        r
    }
}

/// `count` corruptions of `triple`. Each one replaces either the subject or
/// the object (fair coin) by a uniform draw from that side's candidates,
/// never the original id. A side with fewer than two candidates is never
/// chosen; if both sides are that small this is an error.
pub fn sample_corruptions<R: Rng + ?Sized>(
    triple: Triple,
    layout: &EntityLayout,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Triple>> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "need at least one corruption".into(),
        ));
    }
    let subjects = layout.subject_candidates();
    let objects = layout.object_candidates();
    let can_s = subjects.len() >= 2;
    let can_o = objects.len() >= 2;
    if !can_s && !can_o {
        return Err(Error::InvalidArgument(
            "cannot corrupt: both sides have fewer than 2 entities".into(),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let corrupt_subject = match (can_s, can_o) {
            (true, true) => rng.gen::<bool>(),
            (s, _) => s,
        };
        let mut t = triple;
        if corrupt_subject {
            t.subject = draw_excluding(rng, &subjects, triple.subject);
        } else {
            t.object = draw_excluding(rng, &objects, triple.object);
        }
        out.push(t);
    }
    Ok(out)
}

/// `count` item indices (0-based, not entity ids) drawn uniformly with
/// replacement from the items the user has no train positive for.
pub fn sample_negative_items<R: Rng + ?Sized>(
    positives: &[usize],
    num_items: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if positives.len() >= num_items {
        return Err(Error::InvalidArgument(
            "user interacted with every item; no negatives to sample".into(),
        ));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let j = rng.gen_range(0..num_items);
        if positives.binary_search(&j).is_err() {
            out.push(j);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn single_user_forces_object_corruption() {
        let layout = EntityLayout {
            num_users: 1,
            num_items: 5,
            typed: true,
        };
        let mut rng = stream_rng(1, Stream::Train, 0);
        let t = Triple::new(0, 0, 3);
        let c = sample_corruptions(t, &layout, 50, &mut rng).unwrap();
        assert!(c
            .iter()
            .all(|x| x.subject == 0 && x.object != 3 && x.object >= 1 && x.object < 6));
    }

    #[test]
    fn degenerate_graph_errors() {
        let layout = EntityLayout {
            num_users: 1,
            num_items: 1,
            typed: true,
        };
        let mut rng = stream_rng(1, Stream::Train, 0);
        assert!(sample_corruptions(Triple::new(0, 0, 1), &layout, 1, &mut rng).is_err());
    }

    #[test]
    fn corruptions_repeat_when_side_is_small() {
        // One item: every corruption hits the subject, which has only two alternatives.
        let layout = EntityLayout {
            num_users: 3,
            num_items: 1,
            typed: true,
        };
        let mut rng = stream_rng(2, Stream::Train, 0);
        let c = sample_corruptions(Triple::new(0, 0, 3), &layout, 4, &mut rng).unwrap();
        assert_eq!(c.len(), 4);
        assert!(c
            .iter()
            .all(|x| x.subject != 0 && x.subject < 3 && x.object == 3));
        let distinct: std::collections::BTreeSet<_> = c.iter().map(|x| x.subject).collect();
        assert!(distinct.len() <= 2);
    }

    #[test]
    fn corruption_frequencies_are_uniform() {
        // 6 users, 5 items; triple (2, 0, 8). Subject alternatives: 5, object alternatives: 4.
        let layout = EntityLayout {
            num_users: 6,
            num_items: 5,
            typed: true,
        };
        let mut rng = stream_rng(9, Stream::Train, 0);
        let draws = 100_000;
        let c = sample_corruptions(Triple::new(2, 0, 8), &layout, draws, &mut rng).unwrap();
        let mut subj = [0usize; 6];
        let mut obj = [0usize; 5];
        for t in &c {
            if t.subject != 2 {
                subj[t.subject] += 1;
            } else {
                obj[t.object - 6] += 1;
            }
        }
        let side_s: usize = subj.iter().sum();
        assert!(((side_s as f64 / draws as f64) - 0.5).abs() < 0.01);
        let mut chi2 = 0.0;
        for (idx, &n) in subj.iter().enumerate() {
            if idx == 2 {
                assert_eq!(n, 0);
                continue;
            }
            let expect = draws as f64 / 2.0 / 5.0;
            assert!((n as f64 / expect - 1.0).abs() < 0.02, "subject {idx}: {n}");
            chi2 += (n as f64 - expect).powi(2) / expect;
        }
        for (idx, &n) in obj.iter().enumerate() {
            if idx == 2 {
                assert_eq!(n, 0);
                continue;
            }
            let expect = draws as f64 / 2.0 / 4.0;
            assert!((n as f64 / expect - 1.0).abs() < 0.02, "object {idx}: {n}");
            chi2 += (n as f64 - expect).powi(2) / expect;
        }
        // 9 cells, 8 degrees of freedom; p = 0.001 critical value.
        assert!(chi2 < 26.12, "chi2 = {chi2}");
    }

    #[test]
    fn untyped_draws_from_all_entities() {
        let layout = EntityLayout {
            num_users: 2,
            num_items: 2,
            typed: false,
        };
        let mut rng = stream_rng(4, Stream::Train, 0);
        let c = sample_corruptions(Triple::new(0, 0, 3), &layout, 2_000, &mut rng).unwrap();
        assert!(c.iter().any(|t| t.subject >= 2));
        assert!(c.iter().any(|t| t.object < 2));
    }

    #[test]
    fn negative_items_avoid_positives() {
        let mut rng = stream_rng(4, Stream::Train, 0);
        let negs = sample_negative_items(&[0, 2, 3], 5, 200, &mut rng).unwrap();
        assert!(negs.iter().all(|&j| j == 1 || j == 4));
        assert!(sample_negative_items(&[0, 1], 2, 1, &mut rng).is_err());
    }
}
