//! Frame-timeline logic: right-hand selection, track re-centering, the
//! half-second temporal filter, and interaction segment extraction.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TimelineError {
    #[error("timeline io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed timeline csv at line {line}: {message}")]
    BadCsv { line: usize, message: String },
    #[error("segments file parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Per-frame interaction status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Hoi,
    Idle,
    NoHand,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Hoi => "hoi",
            Status::Idle => "idle",
            Status::NoHand => "no_hand",
        })
    }
}

impl std::str::FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hoi" => Ok(Status::Hoi),
            "idle" => Ok(Status::Idle),
            "no_hand" => Ok(Status::NoHand),
            other => Err(format!("unknown status '{other}'")),
        }
    }
}

/// A detected hand keypoint in full-frame pixels, with confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
}

/// Hand-ID classification of one frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Hands {
    Left(Keypoint),
    Right(Keypoint),
    TwoHands(Keypoint, Keypoint),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandObservation {
    pub frame: u64,
    pub hands: Hands,
}

/// The system tracks a single right hand: a lone left hand yields nothing,
/// and with two hands the one further right (larger u) wins.
pub fn select_right_hand(obs: &HandObservation) -> Option<Keypoint> {
    match &obs.hands {
        Hands::Left(_) => None,
        Hands::Right(kp) => Some(*kp),
        Hands::TwoHands(a, b) => Some(if a.u >= b.u { *a } else { *b }),
    }
}

/// Re-centre the tracking box on the mean of the detected joints; keep the
/// previous centre when no joints are available.
pub fn update_track(prev_center: (f64, f64), joints: &[(f64, f64)]) -> (f64, f64) {
    if joints.is_empty() {
        return prev_center;
    }
    let n = joints.len() as f64;
    (
        joints.iter().map(|p| p.0).sum::<f64>() / n,
        joints.iter().map(|p| p.1).sum::<f64>() / n,
    )
}

/// One frame of the HOI timeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimelineFrame {
    /// Missing when no hand was found.
    pub p_hoi: Option<f64>,
    pub raw: Status,
    pub smoothed: Option<Status>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoiTimeline {
    pub fps: f64,
    pub frames: Vec<TimelineFrame>,
}

impl HoiTimeline {
    pub fn from_raw(fps: f64, raw: impl IntoIterator<Item = (Option<f64>, Status)>) -> Self {
        HoiTimeline {
            fps,
            frames: raw
                .into_iter()
                .map(|(p_hoi, raw)| TimelineFrame {
                    p_hoi,
                    raw,
                    smoothed: None,
                })
                .collect(),
        }
    }
}

/// Half-second smoothing window in frames: `round(0.5 * fps)`, forced odd,
/// at least 1.
pub fn smoothing_window(fps: f64) -> usize {
    let mut w = (0.5 * fps).round() as usize;
    if w.is_multiple_of(2) {
        w += 1;
    }
    w.max(1)
}

/// Centered sliding-window majority vote over the binary hoi/not-hoi signal.
///
/// Edges use truncated windows. Frames without a hand vote against
/// interaction and can never become `hoi`; where not-hoi wins they keep
/// their `no_hand` label.
pub fn smooth_timeline(timeline: &HoiTimeline) -> HoiTimeline {
    let window = smoothing_window(timeline.fps);
    let half = window / 2;
    let n = timeline.frames.len();
    let mut out = timeline.clone();
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n.saturating_sub(1));
        let len = hi + 1 - lo;
        let hoi_votes = timeline.frames[lo..=hi]
            .iter()
            .filter(|f| f.raw == Status::Hoi)
            .count();
        let majority_hoi = 2 * hoi_votes > len;
        out.frames[i].smoothed = Some(match (timeline.frames[i].raw, majority_hoi) {
            (Status::NoHand, _) => Status::NoHand,
            (_, true) => Status::Hoi,
            (_, false) => Status::Idle,
        });
    }
    out
}

/// A maximal run of interaction frames, inclusive indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: u64,
    pub end: u64,
    pub label: String,
}

impl Segment {
    pub fn hoi(start: u64, end: u64) -> Self {
        Segment {
            start,
            end,
            label: "hoi".into(),
        }
    }

    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Extract maximal runs of smoothed `hoi` frames. Falls back to the raw
/// status for frames that were never smoothed.
pub fn extract_segments(timeline: &HoiTimeline) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut run_start: Option<u64> = None;
    for (i, frame) in timeline.frames.iter().enumerate() {
        let status = frame.smoothed.unwrap_or(frame.raw);
        if status == Status::Hoi {
            run_start.get_or_insert(i as u64);
        } else if let Some(start) = run_start.take() {
            segments.push(Segment::hoi(start, i as u64 - 1));
        }
    }
    if let Some(start) = run_start {
        segments.push(Segment::hoi(start, timeline.frames.len() as u64 - 1));
    }
    segments
}

// timeline.csv: header `frame,p_hoi,raw,smoothed`; p_hoi empty when no
// hand. Frame ids are consecutive from `first_frame`.

pub fn write_timeline_csv<W: Write>(
    mut writer: W,
    timeline: &HoiTimeline,
    first_frame: u64,
) -> Result<(), TimelineError> {
    writeln!(writer, "frame,p_hoi,raw,smoothed")?;
    for (i, frame) in timeline.frames.iter().enumerate() {
        let p = frame.p_hoi.map_or(String::new(), |p| format!("{p}"));
        let smoothed = frame.smoothed.map_or(String::new(), |s| s.to_string());
        writeln!(
            writer,
            "{},{p},{},{smoothed}",
            first_frame + i as u64,
            frame.raw
        )?;
    }
    Ok(())
}

/// Returns the timeline and the first frame id.
pub fn read_timeline_csv<R: std::io::BufRead>(
    reader: R,
    fps: f64,
) -> Result<(HoiTimeline, u64), TimelineError> {
    let mut frames = Vec::new();
    let mut first_frame = 0u64;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if idx == 0 {
            if line.trim() != "frame,p_hoi,raw,smoothed" {
                return Err(TimelineError::BadCsv {
                    line: 1,
                    message: "expected header frame,p_hoi,raw,smoothed".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(TimelineError::BadCsv {
                line: idx + 1,
                message: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let bad = |message: String| TimelineError::BadCsv {
            line: idx + 1,
            message,
        };
        let id: u64 = fields[0].parse().map_err(|_| bad("bad frame id".into()))?;
        if frames.is_empty() {
            first_frame = id;
        } else if id != first_frame + frames.len() as u64 {
            return Err(bad(format!(
                "frame ids must be consecutive, expected {}",
                first_frame + frames.len() as u64
            )));
        }
        let p_hoi = if fields[1].is_empty() {
            None
        } else {
            Some(fields[1].parse::<f64>().map_err(|e| bad(e.to_string()))?)
        };
        let raw: Status = fields[2].parse().map_err(bad)?;
        let smoothed = if fields[3].is_empty() {
            None
        } else {
            Some(fields[3].parse().map_err(bad)?)
        };
        frames.push(TimelineFrame {
            p_hoi,
            raw,
            smoothed,
        });
    }
    Ok((HoiTimeline { fps, frames }, first_frame))
}

pub fn save_segments(path: &Path, segments: &[Segment]) -> Result<(), TimelineError> {
    let mut buf = serde_json::to_vec_pretty(segments)?;
    buf.push(b'\n');
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_segments(path: &Path) -> Result<Vec<Segment>, TimelineError> {
    let data = std::fs::read(path)?;
    Ok(serde_json::from_slice(&data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn kp(u: f64, v: f64) -> Keypoint {
        Keypoint {
            u,
            v,
            confidence: 0.9,
        }
    }

    #[test]
    fn two_hands_selects_the_rightmost() {
        let obs = HandObservation {
            frame: 0,
            hands: Hands::TwoHands(kp(100.0, 50.0), kp(400.0, 60.0)),
        };
        assert_eq!(select_right_hand(&obs), Some(kp(400.0, 60.0)));
    }

    #[test]
    fn right_hand_passes_through() {
        let obs = HandObservation {
            frame: 0,
            hands: Hands::Right(kp(200.0, 100.0)),
        };
        assert_eq!(select_right_hand(&obs), Some(kp(200.0, 100.0)));
    }

    #[test]
    fn lone_left_hand_yields_nothing() {
        let obs = HandObservation {
            frame: 0,
            hands: Hands::Left(kp(10.0, 10.0)),
        };
        assert_eq!(select_right_hand(&obs), None);
    }

    #[test]
    fn track_centers_on_joint_mean() {
        assert_eq!(update_track((0.0, 0.0), &[(50.0, 50.0), (50.0, 50.0)]), (50.0, 50.0));
        assert_eq!(update_track((0.0, 0.0), &[(0.0, 0.0), (100.0, 100.0)]), (50.0, 50.0));
        assert_eq!(update_track((7.0, 9.0), &[]), (7.0, 9.0));
    }

    #[test]
    fn half_second_window_at_30_fps_is_15() {
        assert_eq!(smoothing_window(30.0), 15);
        assert_eq!(smoothing_window(60.0), 31);
        assert_eq!(smoothing_window(1.0), 1);
        assert_eq!(smoothing_window(25.0), 13);
    }

    fn timeline_of(statuses: &[Status], fps: f64) -> HoiTimeline {
        HoiTimeline::from_raw(
            fps,
            statuses.iter().map(|&s| {
                let p = match s {
                    Status::Hoi => Some(0.9),
                    Status::Idle => Some(0.1),
                    Status::NoHand => None,
                };
                (p, s)
            }),
        )
    }

    fn smoothed_of(timeline: &HoiTimeline) -> Vec<Status> {
        smooth_timeline(timeline)
            .frames
            .iter()
            .map(|f| f.smoothed.unwrap())
            .collect()
    }

    #[test]
    fn constant_hoi_timeline_is_unchanged() {
        let t = timeline_of(&[Status::Hoi; 20], 30.0);
        assert_eq!(smoothed_of(&t), vec![Status::Hoi; 20]);
    }

    #[test]
    fn single_frame_flip_is_removed() {
        use Status::*;
        let t = timeline_of(&[Hoi, Hoi, Idle, Hoi, Hoi], 6.0); // window 3
        assert_eq!(smoothed_of(&t), vec![Hoi; 5]);
        let t = timeline_of(&[Idle, Idle, Hoi, Idle, Idle], 6.0);
        assert_eq!(smoothed_of(&t), vec![Idle; 5]);
    }

    #[test]
    fn smoothing_matches_brute_force_majority_on_random_timelines() {
        let mut stream = Stream::new(404, 0, 0);
        for trial in 0..1000 {
            let fps = [6.0, 12.0, 24.0, 30.0][stream.below(4)];
            let len = 1 + stream.below(60);
            let statuses: Vec<Status> = (0..len)
                .map(|_| match stream.below(3) {
                    0 => Status::Hoi,
                    1 => Status::Idle,
                    _ => Status::NoHand,
                })
                .collect();
            let timeline = timeline_of(&statuses, fps);
            let smoothed = smoothed_of(&timeline);

            // Brute-force recount: for every frame, scan the truncated
            // window and count hoi votes.
            let window = smoothing_window(fps);
            let half = window as i64 / 2;
            for i in 0..len as i64 {
                let mut hoi = 0usize;
                let mut total = 0usize;
                for j in (i - half)..=(i + half) {
                    if j >= 0 && (j as usize) < len {
                        total += 1;
                        if statuses[j as usize] == Status::Hoi {
                            hoi += 1;
                        }
                    }
                }
                let expected = if statuses[i as usize] == Status::NoHand {
                    Status::NoHand
                } else if 2 * hoi > total {
                    Status::Hoi
                } else {
                    Status::Idle
                };
                assert_eq!(
                    smoothed[i as usize], expected,
                    "trial {trial}, frame {i}, fps {fps}"
                );
            }
        }
    }

    #[test]
    fn unit_window_smoothing_is_the_identity() {
        let mut stream = Stream::new(505, 0, 0);
        assert_eq!(smoothing_window(1.0), 1);
        for _ in 0..100 {
            let len = 1 + stream.below(40);
            let statuses: Vec<Status> = (0..len)
                .map(|_| match stream.below(3) {
                    0 => Status::Hoi,
                    1 => Status::Idle,
                    _ => Status::NoHand,
                })
                .collect();
            let once = smooth_timeline(&timeline_of(&statuses, 1.0));
            for (frame, &raw) in once.frames.iter().zip(&statuses) {
                assert_eq!(frame.smoothed, Some(raw));
            }
        }
    }

    /// A single majority pass can create an isolated frame (an alternating
    /// input votes hoi at the centre of `idle,hoi,idle,hoi,idle`), so one
    /// pass is not a fixed point; repeated passes must settle.
    #[test]
    fn repeated_small_window_smoothing_converges() {
        let mut stream = Stream::new(506, 0, 0);
        for fps in [5.0, 6.0] {
            assert_eq!(smoothing_window(fps), 3);
            for _ in 0..300 {
                let len = 2 + stream.below(40);
                let statuses: Vec<Status> = (0..len)
                    .map(|_| match stream.below(3) {
                        0 => Status::Hoi,
                        1 => Status::Idle,
                        _ => Status::NoHand,
                    })
                    .collect();
                let mut current = timeline_of(&statuses, fps);
                let mut settled = false;
                for _ in 0..=len {
                    let smoothed = smooth_timeline(&current);
                    let next = HoiTimeline::from_raw(
                        fps,
                        smoothed.frames.iter().map(|f| (f.p_hoi, f.smoothed.unwrap())),
                    );
                    if next
                        .frames
                        .iter()
                        .zip(&current.frames)
                        .all(|(a, b)| a.raw == b.raw)
                    {
                        settled = true;
                        break;
                    }
                    current = next;
                }
                assert!(settled, "smoothing failed to reach a fixed point");
            }
        }
    }

    #[test]
    fn smoothing_never_invents_labels() {
        let mut stream = Stream::new(606, 0, 0);
        for _ in 0..300 {
            let len = 30 + stream.below(30);
            // Draw from all three labels so each is almost surely present.
            let statuses: Vec<Status> = (0..len)
                .map(|_| match stream.below(3) {
                    0 => Status::Hoi,
                    1 => Status::Idle,
                    _ => Status::NoHand,
                })
                .collect();
            let present: Vec<Status> = [Status::Hoi, Status::Idle, Status::NoHand]
                .into_iter()
                .filter(|s| statuses.contains(s))
                .collect();
            if present.len() < 3 {
                continue;
            }
            let smoothed = smoothed_of(&timeline_of(&statuses, 30.0));
            for s in smoothed {
                assert!(present.contains(&s));
            }
        }
    }

    #[test]
    fn single_run_extracts_inclusive_indices() {
        use Status::*;
        let t = {
            let mut t = timeline_of(&[Idle, Idle, Idle, Hoi, Hoi, Hoi], 30.0);
            for f in &mut t.frames {
                f.smoothed = Some(f.raw);
            }
            t
        };
        assert_eq!(extract_segments(&t), vec![Segment::hoi(3, 5)]);
    }

    #[test]
    fn all_idle_yields_no_segments() {
        let mut t = timeline_of(&[Status::Idle; 6], 30.0);
        for f in &mut t.frames {
            f.smoothed = Some(f.raw);
        }
        assert!(extract_segments(&t).is_empty());
    }

    #[test]
    fn alternating_statuses_yield_unit_segments() {
        use Status::*;
        let mut t = timeline_of(&[Idle, Hoi, Idle, Hoi], 30.0);
        for f in &mut t.frames {
            f.smoothed = Some(f.raw);
        }
        assert_eq!(
            extract_segments(&t),
            vec![Segment::hoi(1, 1), Segment::hoi(3, 3)]
        );
    }

    #[test]
    fn segments_paint_back_and_re_extract_identically() {
        let mut stream = Stream::new(707, 0, 0);
        for _ in 0..200 {
            let len = 1 + stream.below(50);
            let statuses: Vec<Status> = (0..len)
                .map(|_| {
                    if stream.next_bool(0.5) {
                        Status::Hoi
                    } else {
                        Status::Idle
                    }
                })
                .collect();
            let mut t = timeline_of(&statuses, 30.0);
            for f in &mut t.frames {
                f.smoothed = Some(f.raw);
            }
            let segments = extract_segments(&t);

            let mut painted = timeline_of(&vec![Status::Idle; len], 30.0);
            for f in &mut painted.frames {
                f.smoothed = Some(Status::Idle);
            }
            for seg in &segments {
                for i in seg.start..=seg.end {
                    painted.frames[i as usize].smoothed = Some(Status::Hoi);
                }
            }
            assert_eq!(extract_segments(&painted), segments);
        }
    }

    #[test]
    fn smoothed_boundaries_shift_at_most_half_a_window() {
        let mut stream = Stream::new(808, 0, 0);
        for _ in 0..200 {
            let fps = 30.0;
            let window = smoothing_window(fps) as i64;
            let len = 40 + stream.below(40);
            let statuses: Vec<Status> = (0..len)
                .map(|_| {
                    if stream.next_bool(0.5) {
                        Status::Hoi
                    } else {
                        Status::Idle
                    }
                })
                .collect();
            let raw_t = {
                let mut t = timeline_of(&statuses, fps);
                for f in &mut t.frames {
                    f.smoothed = Some(f.raw);
                }
                t
            };
            let raw_boundaries: Vec<i64> = extract_segments(&raw_t)
                .iter()
                .flat_map(|s| [s.start as i64, s.end as i64])
                .collect();
            let smoothed = smooth_timeline(&timeline_of(&statuses, fps));
            for seg in extract_segments(&smoothed) {
                for b in [seg.start as i64, seg.end as i64] {
                    let nearest = raw_boundaries
                        .iter()
                        .map(|r| (r - b).abs())
                        .min()
                        .unwrap_or(i64::MAX);
                    assert!(
                        nearest <= window / 2,
                        "smoothed boundary {b} is {nearest} frames from any raw boundary"
                    );
                }
            }
        }
    }

    #[test]
    fn timeline_csv_round_trips() {
        use Status::*;
        let t = {
            let mut t = timeline_of(&[Hoi, NoHand, Idle], 30.0);
            t.frames[0].p_hoi = Some(0.875);
            t.frames[2].p_hoi = Some(0.125);
            smooth_timeline(&t)
        };
        let mut buf = Vec::new();
        write_timeline_csv(&mut buf, &t, 5).unwrap();
        let (back, first) =
            read_timeline_csv(std::io::BufReader::new(buf.as_slice()), 30.0).unwrap();
        assert_eq!(back, t);
        assert_eq!(first, 5);
    }

    #[test]
    fn timeline_csv_rejects_gaps_with_line_context() {
        let raw = "frame,p_hoi,raw,smoothed\n0,0.5,hoi,\n2,0.5,hoi,\n";
        let err = read_timeline_csv(std::io::BufReader::new(raw.as_bytes()), 30.0).unwrap_err();
        match err {
            TimelineError::BadCsv { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn segments_json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("segments.json");
        let segments = vec![Segment::hoi(3, 17), Segment::hoi(40, 41)];
        save_segments(&path, &segments).unwrap();
        assert_eq!(load_segments(&path).unwrap(), segments);
    }
}
