//! Feature bundles: a set of labelled videos sharing one shape, with
//! optional teacher distributions and text embeddings, plus episode sampling
//! and synthetic generators.

use std::collections::HashSet;

use crate::error::{input, shape, Result};
use crate::framemetric::VideoTokenFeatures;
use crate::glac::{TeacherDistribution, TextEmbeddingBank};

pub mod bundle;
pub mod episode;
pub mod matrix;
pub mod synth;

pub use bundle::{load_bundle, save_bundle};
pub use episode::{sample_episode, sample_episode_from, Episode};
pub use matrix::read_observations;
pub use synth::{synth_generate, Scenario, SyntheticConfig};

/// Shape shared by every video in a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundleDims {
    pub frames: usize,
    pub tokens: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    dims: BundleDims,
    class_names: Vec<String>,
    ids: Vec<String>,
    videos: Vec<VideoTokenFeatures>,
    by_class: Vec<Vec<usize>>,
    novel_classes: Vec<usize>,
    teacher: Option<Vec<TeacherDistribution>>,
    text: Option<TextEmbeddingBank>,
}

impl FeatureBundle {
    /// Every video must carry a label below `class_names.len()`.
    pub fn new(
        dims: BundleDims,
        class_names: Vec<String>,
        ids: Vec<String>,
        videos: Vec<VideoTokenFeatures>,
    ) -> Result<Self> {
        if class_names.is_empty() {
            return input("bundle declares no classes");
        }
        if ids.len() != videos.len() {
            return input(format!("{} ids for {} videos", ids.len(), videos.len()));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return input(format!("duplicate video id {id:?}"));
            }
        }
        let mut by_class = vec![Vec::new(); class_names.len()];
        for (i, v) in videos.iter().enumerate() {
            if (v.frames(), v.tokens(), v.channels()) != (dims.frames, dims.tokens, dims.channels) {
                return shape(format!(
                    "video {:?} is {}x{}x{}, bundle declares {}x{}x{}",
                    ids[i],
                    v.frames(),
                    v.tokens(),
                    v.channels(),
                    dims.frames,
                    dims.tokens,
                    dims.channels
                ));
            }
            match v.label() {
                Some(c) if c < class_names.len() => by_class[c].push(i),
                Some(c) => return input(format!("video {:?} has undeclared class {c}", ids[i])),
                None => return input(format!("video {:?} has no label", ids[i])),
            }
        }
        Ok(Self {
            dims,
            class_names,
            ids,
            videos,
            by_class,
            novel_classes: Vec::new(),
            teacher: None,
            text: None,
        })
    }

    /// Marks classes held out from training.
    pub fn with_novel_classes(mut self, mut novel: Vec<usize>) -> Result<Self> {
        novel.sort_unstable();
        novel.dedup();
        if let Some(&c) = novel.iter().find(|&&c| c >= self.classes()) {
            return input(format!("novel class {c} is not declared"));
        }
        if novel.len() == self.classes() {
            return input("at least one class must remain for training");
        }
        self.novel_classes = novel;
        Ok(self)
    }

    /// One teacher distribution per video, in video order.
    pub fn with_teacher(mut self, teacher: Vec<TeacherDistribution>) -> Result<Self> {
        if teacher.len() != self.videos.len() {
            return input(format!("{} teacher rows for {} videos", teacher.len(), self.videos.len()));
        }
        if let Some(q) = teacher.iter().find(|q| q.len() != self.classes()) {
            return shape(format!("teacher row has {} classes, bundle declares {}", q.len(), self.classes()));
        }
        self.teacher = Some(teacher);
        Ok(self)
    }

    pub fn with_text(mut self, text: TextEmbeddingBank) -> Result<Self> {
        if text.classes() != self.classes() {
            return shape(format!(
                "{} text embeddings for {} classes",
                text.classes(),
                self.classes()
            ));
        }
        self.text = Some(text);
        Ok(self)
    }

    pub fn dims(&self) -> BundleDims {
        self.dims
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn videos(&self) -> &[VideoTokenFeatures] {
        &self.videos
    }

    pub fn video(&self, index: usize) -> &VideoTokenFeatures {
        &self.videos[index]
    }

    /// Class of video `index`.
    pub fn label(&self, index: usize) -> usize {
        self.videos[index].label().expect("bundle videos are labelled")
    }

    pub fn videos_of(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    pub fn novel_classes(&self) -> &[usize] {
        &self.novel_classes
    }

    /// Classes not held out as novel.
    pub fn base_classes(&self) -> Vec<usize> {
        (0..self.classes()).filter(|c| !self.novel_classes.contains(c)).collect()
    }

    /// Classes used for evaluation: the novel split if declared, else all.
    pub fn eval_classes(&self) -> Vec<usize> {
        if self.novel_classes.is_empty() {
            (0..self.classes()).collect()
        } else {
            self.novel_classes.clone()
        }
    }

    pub fn teacher(&self) -> Option<&[TeacherDistribution]> {
        self.teacher.as_deref()
    }

    pub fn text(&self) -> Option<&TextEmbeddingBank> {
        self.text.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn video(label: usize) -> VideoTokenFeatures {
        VideoTokenFeatures::new(Array3::from_elem((2, 3, 4), label as f64), Some(label)).unwrap()
    }

    fn dims() -> BundleDims {
        BundleDims {
            frames: 2,
            tokens: 3,
            channels: 4,
        }
    }

    #[test]
    fn validates_labels_ids_and_shapes() {
        let names = vec!["a".to_string(), "b".to_string()];
        let ok = FeatureBundle::new(dims(), names.clone(), vec!["x".into(), "y".into()], vec![video(0), video(1)]);
        let b = ok.unwrap();
        assert_eq!(b.videos_of(1), &[1]);
        assert_eq!(b.eval_classes(), vec![0, 1]);

        assert!(FeatureBundle::new(dims(), names.clone(), vec!["x".into(), "x".into()], vec![video(0), video(1)]).is_err());
        assert!(FeatureBundle::new(dims(), names.clone(), vec!["x".into()], vec![video(2)]).is_err());
        let odd = VideoTokenFeatures::new(Array3::zeros((2, 3, 5)), Some(0)).unwrap();
        assert!(matches!(
            FeatureBundle::new(dims(), names, vec!["x".into()], vec![odd]),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn novel_split() {
        let names: Vec<String> = (0..3).map(|c| c.to_string()).collect();
        let b = FeatureBundle::new(dims(), names, vec!["x".into()], vec![video(0)])
            .unwrap()
            .with_novel_classes(vec![2, 2])
            .unwrap();
        assert_eq!(b.base_classes(), vec![0, 1]);
        assert_eq!(b.eval_classes(), vec![2]);
        assert!(b.clone().with_novel_classes(vec![0, 1, 2]).is_err());
        assert!(b.with_novel_classes(vec![5]).is_err());
    }
}
