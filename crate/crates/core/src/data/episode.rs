use rand::seq::index;
use rand::Rng;

use super::FeatureBundle;
use crate::error::{input, Result};

/// One N-way K-shot task. Videos are referenced by bundle index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    /// Bundle class of each episode slot.
    pub classes: Vec<usize>,
    /// `support[n]` holds the K videos of slot `n`.
    pub support: Vec<Vec<usize>>,
    /// `(video, slot)` pairs; the slot is the label within the episode.
    pub queries: Vec<(usize, usize)>,
}

impl Episode {
    pub fn way(&self) -> usize {
        self.classes.len()
    }

    pub fn shot(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }

    pub fn support_videos(&self) -> impl Iterator<Item = usize> + '_ {
        self.support.iter().flatten().copied()
    }

    /// Support videos followed by query videos.
    pub fn all_videos(&self) -> Vec<usize> {
        self.support_videos().chain(self.queries.iter().map(|q| q.0)).collect()
    }
}

/// Samples an episode over every class of the bundle.
pub fn sample_episode<R: Rng + ?Sized>(
    bundle: &FeatureBundle,
    way: usize,
    shot: usize,
    queries_per_class: usize,
    rng: &mut R,
) -> Result<Episode> {
    let pool: Vec<usize> = (0..bundle.classes()).collect();
    sample_episode_from(bundle, &pool, way, shot, queries_per_class, rng)
}

/// Samples `way` distinct classes from `pool`, then `shot + queries_per_class`
/// distinct videos per class, all uniformly without replacement.
pub fn sample_episode_from<R: Rng + ?Sized>(
    bundle: &FeatureBundle,
    pool: &[usize],
    way: usize,
    shot: usize,
    queries_per_class: usize,
    rng: &mut R,
) -> Result<Episode> {
    if way < 2 || shot == 0 || queries_per_class == 0 {
        return input(format!(
            "episodes need way >= 2, shot >= 1 and at least one query (got {way}-way {shot}-shot, {queries_per_class} queries)"
        ));
    }
    if way > pool.len() {
        return input(format!("{way}-way episode but only {} classes available", pool.len()));
    }
    let need = shot + queries_per_class;
    let picked = index::sample(rng, pool.len(), way);
    let mut episode = Episode {
        classes: Vec::with_capacity(way),
        support: Vec::with_capacity(way),
        queries: Vec::with_capacity(way * queries_per_class),
    };
    for (slot, i) in picked.into_iter().enumerate() {
        let class = pool[i];
        let members = bundle.videos_of(class);
        if members.len() < need {
            return input(format!(
                "class {:?} has {} videos, {need} needed for {shot} shots and {queries_per_class} queries",
                bundle.class_names()[class],
                members.len()
            ));
        }
        let chosen: Vec<usize> = index::sample(rng, members.len(), need)
            .into_iter()
            .map(|j| members[j])
            .collect();
        episode.classes.push(class);
        episode.support.push(chosen[..shot].to_vec());
        episode.queries.extend(chosen[shot..].iter().map(|&v| (v, slot)));
    }
    Ok(episode)
}
