use crate::error::{Result, SimError};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferEvent {
    Start,
    Stall,
    Resume,
    /// 1-based index of the segment that just finished playing.
    SegmentPlayed(u32),
    /// Last segment played; the session is over.
    Finished,
}

/// Play-out buffer measured in seconds of content.
///
/// Content is tracked in whole segments plus the progress into the segment
/// currently playing, so segment boundaries never drift.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayoutBuffer {
    max_s: f64,
    segment_s: f64,
    startup_threshold_s: f64,
    resume_threshold_s: f64,
    total_segments: u32,
    delivered: u32,
    played: u32,
    into_segment_s: f64,
    playing: bool,
    started: bool,
    finished: bool,
}

impl PlayoutBuffer {
    pub fn new(
        max_s: f64,
        segment_s: f64,
        startup_threshold_s: f64,
        resume_threshold_s: f64,
        total_segments: u32,
    ) -> Result<Self> {
        if !(segment_s > 0.0) || max_s < segment_s {
            return Err(SimError::Config(format!(
                "buffer max {max_s} s must hold at least one {segment_s} s segment"
            )));
        }
        for (name, v) in [("startup", startup_threshold_s), ("resume", resume_threshold_s)] {
            if !(0.0..=max_s).contains(&v) {
                return Err(SimError::Config(format!("{name} threshold {v} s outside [0, {max_s}]")));
            }
        }
        Ok(Self {
            max_s,
            segment_s,
            startup_threshold_s,
            resume_threshold_s,
            total_segments,
            delivered: 0,
            played: 0,
            into_segment_s: 0.0,
            playing: false,
            started: false,
            finished: false,
        })
    }

    pub fn level_s(&self) -> f64 {
        f64::from(self.delivered - self.played) * self.segment_s - self.into_segment_s
    }

    pub fn max_s(&self) -> f64 {
        self.max_s
    }

    pub fn is_playing(&self) -> bool {
        self.playing
    }

    pub fn has_started(&self) -> bool {
        self.started
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn delivered(&self) -> u32 {
        self.delivered
    }

    pub fn played(&self) -> u32 {
        self.played
    }

    pub fn has_room(&self) -> bool {
        self.level_s() + self.segment_s <= self.max_s + EPS
    }

    /// Seconds until one more segment fits; `None` if it never will without
    /// playback running.
    pub fn time_until_room(&self) -> Option<f64> {
        let excess = self.level_s() + self.segment_s - self.max_s;
        if excess <= EPS {
            Some(0.0)
        } else if self.playing {
            Some(excess)
        } else {
            None
        }
    }

    /// Appends one segment, then starts or resumes playback if a threshold is
    /// reached.
    pub fn add_segment(&mut self) -> Result<Option<BufferEvent>> {
        if !self.has_room() {
            return Err(SimError::Internal(format!(
                "buffer overflow: level {:.6} s + {} s > max {} s",
                self.level_s(),
                self.segment_s,
                self.max_s
            )));
        }
        if self.delivered >= self.total_segments {
            return Err(SimError::Internal("more segments delivered than the video has".into()));
        }
        self.delivered += 1;
        Ok(self.check_start())
    }

    fn check_start(&mut self) -> Option<BufferEvent> {
        if self.playing || self.finished || self.played >= self.delivered {
            return None;
        }
        let threshold = if self.started { self.resume_threshold_s } else { self.startup_threshold_s };
        let all_in = self.delivered == self.total_segments;
        if self.level_s() + EPS >= threshold || all_in {
            self.playing = true;
            if self.started {
                return Some(BufferEvent::Resume);
            }
            self.started = true;
            return Some(BufferEvent::Start);
        }
        None
    }

    /// Time until the playing segment ends, if playback is running.
    pub fn time_to_next_event(&self) -> Option<f64> {
        self.playing.then(|| (self.segment_s - self.into_segment_s).max(0.0))
    }

    /// Plays `dt` seconds. Returns events with their offset into `dt`. A stall
    /// pauses playback at the crossing; the remainder of `dt` is idle.
    pub fn tick(&mut self, dt: f64) -> Vec<(f64, BufferEvent)> {
        let mut events = Vec::new();
        let mut t = 0.0;
        while self.playing && dt - t > EPS * 0.5 {
            let left_in_segment = self.segment_s - self.into_segment_s;
            let step = (dt - t).min(left_in_segment);
            self.into_segment_s += step;
            t += step;
            if self.segment_s - self.into_segment_s <= EPS {
                self.played += 1;
                self.into_segment_s = 0.0;
                events.push((t, BufferEvent::SegmentPlayed(self.played)));
                if self.played == self.delivered {
                    self.playing = false;
                    if self.delivered == self.total_segments {
                        self.finished = true;
                        events.push((t, BufferEvent::Finished));
                    } else {
                        events.push((t, BufferEvent::Stall));
                    }
                }
            }
        }
        events
    }
}
