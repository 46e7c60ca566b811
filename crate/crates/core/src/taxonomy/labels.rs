use std::fmt::Write as _;

use super::{Taxonomy, TaxonomyError};

/// One grasp id per frame.
pub type PerFrameLabels = Vec<usize>;

/// Sparse labels: the frames at which the grasp type changes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionAnnotation {
    entries: Vec<(usize, usize)>,
}

impl TransitionAnnotation {
    /// `entries` are `(frame_index, grasp_id)`; indices must start at 0 and
    /// strictly increase, and consecutive grasp ids must differ.
    pub fn new(entries: Vec<(usize, usize)>) -> Result<Self, TaxonomyError> {
        let Some(&(first, _)) = entries.first() else {
            return Err(TaxonomyError::EmptyAnnotation);
        };
        if first != 0 {
            return Err(TaxonomyError::InvalidAnnotation(format!(
                "first transition at frame {first}, expected 0"
            )));
        }
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(TaxonomyError::InvalidAnnotation(format!(
                    "frame {} does not follow {}",
                    w[1].0, w[0].0
                )));
            }
            if w[1].1 == w[0].1 {
                return Err(TaxonomyError::InvalidAnnotation(format!(
                    "frame {} repeats grasp {}",
                    w[1].0, w[1].1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), TaxonomyError> {
        match self.entries.iter().find(|&&(_, g)| g >= taxonomy.len()) {
            Some(&(_, id)) => Err(TaxonomyError::UnknownGrasp {
                id,
                count: taxonomy.len(),
            }),
            None => Ok(()),
        }
    }

    /// Parses `frame_index<TAB>grasp_id` lines; `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| TaxonomyError::Parse { line: i + 1, message };
            let mut fields = line.split('\t');
            let (Some(f), Some(g), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(parse_err("expected `frame_index<TAB>grasp_id`".into()));
            };
            let f = f.trim().parse().map_err(|e| parse_err(format!("frame index: {e}")))?;
            let g = g.trim().parse().map_err(|e| parse_err(format!("grasp id: {e}")))?;
            entries.push((f, g));
        }
        Self::new(entries)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for &(f, g) in &self.entries {
            let _ = writeln!(s, "{f}\t{g}");
        }
        s
    }
}

/// Step-function expansion: frame `t` takes the grasp of the latest
/// transition at or before `t`.
pub fn expand_transitions(ann: &TransitionAnnotation, n_frames: usize) -> Result<PerFrameLabels, TaxonomyError> {
    let &(last, _) = ann.entries.last().ok_or(TaxonomyError::EmptyAnnotation)?;
    if last >= n_frames {
        return Err(TaxonomyError::IndexOutOfRange { index: last, n_frames });
    }
    let mut labels = Vec::with_capacity(n_frames);
    for (k, &(start, grasp)) in ann.entries.iter().enumerate() {
        let end = ann.entries.get(k + 1).map_or(n_frames, |e| e.0);
        labels.extend(std::iter::repeat_n(grasp, end - start));
    }
    Ok(labels)
}

/// Inverse of [`expand_transitions`]: keeps only the frames where the label changes.
pub fn minimal_transitions(labels: &[usize]) -> Result<TransitionAnnotation, TaxonomyError> {
    let mut entries: Vec<(usize, usize)> = Vec::new();
    for (t, &g) in labels.iter().enumerate() {
        if entries.last().is_none_or(|&(_, prev)| prev != g) {
            entries.push((t, g));
        }
    }
    TransitionAnnotation::new(entries)
}

/// Label distribution over a set of episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionReport {
    /// Frames per grasp type.
    pub histogram: Vec<usize>,
    /// `matrix[grasp][action]` frame counts.
    pub matrix: Vec<Vec<usize>>,
    /// Frames per grasp type divided by the number of episodes.
    pub per_video: Vec<f64>,
    pub n_episodes: usize,
}

/// Grasp ids or action ids beyond the given sizes widen the report.
pub fn label_statistics(episodes: &[(usize, PerFrameLabels)], n_grasp: usize, n_actions: usize) -> DistributionReport {
    let n_grasp = episodes
        .iter()
        .flat_map(|(_, l)| l.iter().map(|&g| g + 1))
        .fold(n_grasp, usize::max);
    let n_actions = episodes.iter().map(|(a, _)| a + 1).fold(n_actions, usize::max);
    let mut histogram = vec![0; n_grasp];
    let mut matrix = vec![vec![0; n_actions]; n_grasp];
    for (action, labels) in episodes {
        for &g in labels {
            histogram[g] += 1;
            matrix[g][*action] += 1;
        }
    }
    let n = episodes.len().max(1) as f64;
    DistributionReport {
        per_video: histogram.iter().map(|&c| c as f64 / n).collect(),
        histogram,
        matrix,
        n_episodes: episodes.len(),
    }
}

impl DistributionReport {
    pub fn total_frames(&self) -> usize {
        self.histogram.iter().sum()
    }

    /// Distinct grasp types observed under `action`.
    pub fn grasps_for_action(&self, action: usize) -> usize {
        self.matrix
            .iter()
            .filter(|row| row.get(action).is_some_and(|&c| c > 0))
            .count()
    }

    pub fn n_actions(&self) -> usize {
        self.matrix.first().map_or(0, Vec::len)
    }

    /// `grasp_id,frames,avg_frames_per_video`
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("grasp_id,frames,avg_frames_per_video\n");
        for (g, (&c, &a)) in self.histogram.iter().zip(&self.per_video).enumerate() {
            let _ = writeln!(s, "{g},{c},{a}");
        }
        s
    }

    /// `grasp_id,action_0,...,action_{n-1}`
    pub fn matrix_csv(&self) -> String {
        let mut s = String::from("grasp_id");
        for a in 0..self.n_actions() {
            let _ = write!(s, ",action_{a}");
        }
        s.push('\n');
        for (g, row) in self.matrix.iter().enumerate() {
            let _ = write!(s, "{g}");
            for c in row {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }

    /// Rebuilds a report from the two CSV tables.
    pub fn from_csv(histogram: &str, matrix: &str, n_episodes: usize) -> Result<Self, TaxonomyError> {
        fn rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
            text.lines()
                .enumerate()
                .skip(1)
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| (i + 1, l.split(',').collect()))
        }
        let bad = |line: usize, message: &str| TaxonomyError::Parse {
            line,
            message: message.to_string(),
        };
        let mut hist = Vec::new();
        let mut per_video = Vec::new();
        for (line, f) in rows(histogram) {
            if f.len() != 3 {
                return Err(bad(line, "expected 3 columns"));
            }
            hist.push(f[1].parse().map_err(|_| bad(line, "bad frame count"))?);
            per_video.push(f[2].parse().map_err(|_| bad(line, "bad average"))?);
        }
        let mut mat = Vec::new();
        for (line, f) in rows(matrix) {
            let row = f[1..]
                .iter()
                .map(|c| c.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad(line, "bad count"))?;
            mat.push(row);
        }
        Ok(Self {
            histogram: hist,
            matrix: mat,
            per_video,
            n_episodes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: usize = 3;
    const B: usize = 7;

    fn ann(e: &[(usize, usize)]) -> TransitionAnnotation {
        TransitionAnnotation::new(e.to_vec()).unwrap()
    }

    #[test]
    fn expands_as_step_function() {
        assert_eq!(
            expand_transitions(&ann(&[(0, A), (5, B)]), 8).unwrap(),
            vec![A, A, A, A, A, B, B, B]
        );
        assert_eq!(expand_transitions(&ann(&[(0, A)]), 3).unwrap(), vec![A, A, A]);
        assert!(matches!(
            expand_transitions(&ann(&[(0, A), (9, B)]), 8),
            Err(TaxonomyError::IndexOutOfRange { index: 9, n_frames: 8 })
        ));
    }

    #[test]
    fn annotation_invariants() {
        assert!(matches!(
            TransitionAnnotation::new(vec![]),
            Err(TaxonomyError::EmptyAnnotation)
        ));
        assert!(TransitionAnnotation::new(vec![(1, A)]).is_err());
        assert!(TransitionAnnotation::new(vec![(0, A), (0, B)]).is_err());
        assert!(TransitionAnnotation::new(vec![(0, A), (2, A)]).is_err());
        assert!(ann(&[(0, 40)]).validate(&Taxonomy::default()).is_err());
    }

    #[test]
    fn text_round_trip() {
        let a = ann(&[(0, A), (4, B), (6, A)]);
        assert_eq!(TransitionAnnotation::parse(&a.to_text()).unwrap(), a);
    }

    #[test]
    fn statistics_small_cases() {
        let r = label_statistics(&[(0, vec![A, A, B])], 36, 1);
        assert_eq!(r.histogram[A], 2);
        assert_eq!(r.histogram[B], 1);
        assert_eq!(r.total_frames(), 3);
        let r = label_statistics(&[(0, vec![A]), (1, vec![A, B])], 36, 2);
        assert!(r.matrix[A][0] > 0 && r.matrix[A][1] > 0);
        for (g, row) in r.matrix.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), r.histogram[g]);
        }
    }

    #[test]
    fn csv_round_trip() {
        let r = label_statistics(&[(0, vec![A, A, B]), (2, vec![B, 0])], 8, 3);
        let back = DistributionReport::from_csv(&r.histogram_csv(), &r.matrix_csv(), r.n_episodes).unwrap();
        assert_eq!(back, r);
    }
}
