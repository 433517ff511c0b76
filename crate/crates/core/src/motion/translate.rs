use super::VelocityField;
use crate::error::{Error, Result};
use crate::raster::{Point, TrackState};

/// Apply the translation operator `m` times (forward for `m > 0`, inverse for
/// `m < 0`) using the same smoothed field at every step.
///
/// Forward: `x_{t+1} = x_t + v(x_t)`. Inverse: `x_t = x_{t+1} − v(x_t)`,
/// which needs the earlier state `x_t` and so fails at `t = 1`.
pub fn translate(track: &TrackState, field: &VelocityField, m: i32) -> Result<TrackState> {
    let steps = m.unsigned_abs() as usize;
    translate_with(track, &vec![field; steps], m.signum())
}

/// Apply one translation step per supplied field, in order.
///
/// `direction` is `+1` (forward) or `-1` (inverse); `0` returns the track
/// unchanged.
pub fn translate_with(track: &TrackState, fields: &[&VelocityField], direction: i32) -> Result<TrackState> {
    let mut out = track.clone();
    if direction == 0 {
        return Ok(out);
    }
    for field in fields {
        if direction > 0 {
            let next: Vec<Point> = out
                .latest()
                .iter()
                .map(|&p| {
                    let v = field.at(p);
                    [p[0] + v[0], p[1] + v[1]]
                })
                .collect();
            out.push(next);
        } else {
            if out.times() < 2 {
                return Err(Error::InsufficientHistory(
                    "inverse translation requested at t = 1 (no earlier state)".into(),
                ));
            }
            let later = out.pop().expect("checked above");
            let earlier: Vec<Point> = later
                .iter()
                .zip(out.latest())
                .map(|(&q, &p)| {
                    let v = field.at(p);
                    [q[0] - v[0], q[1] - v[1]]
                })
                .collect();
            out.set_latest(earlier);
        }
    }
    Ok(out)
}
