//! Line-delimited trajectory records: one JSON object per episode,
//! `{"seed_id": 3, "steps": [[state, action, reward], ...]}`.
//! Reals use shortest round-trip formatting, so a write/read cycle is exact.

use std::io::{BufRead, Write};

use super::Trajectory;
use crate::error::{OpeError, Result};
use crate::scalar::Scalar;

pub fn write_trajectories<T: Scalar, W: Write>(
    mut out: W,
    trajectories: &[Trajectory<T>],
) -> Result<()> {
    for t in trajectories {
        let line = serde_json::to_string(t).map_err(|e| OpeError::Validation(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| OpeError::Io {
            path: "<trajectory writer>".into(),
            message: e.to_string(),
        })?;
    }
    Ok(())
}

/// Reads records written by [`write_trajectories`]; blank lines are skipped.
pub fn read_trajectories<T: Scalar, R: BufRead>(input: R) -> Result<Vec<Trajectory<T>>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| OpeError::Io {
            path: "<trajectory reader>".into(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trajectory<T> = serde_json::from_str(&line).map_err(|e| OpeError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{random_mdp, random_policy, sample_trajectories, TabularMdp};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig { cases: 16, .. ProptestConfig::default() })]
        #[test]
        fn round_trip_exact(seed in 0u64..1000, noise in 0.0f64..3.0) {
            let mdp: TabularMdp<f64> = random_mdp(3, 2, 4, noise, 1.0, seed).unwrap();
            let trajs = sample_trajectories(&mdp, &random_policy(3, 2, 0.0, seed), 25, seed).unwrap();
            let mut buf = Vec::new();
            write_trajectories(&mut buf, &trajs).unwrap();
            let back: Vec<Trajectory<f64>> = read_trajectories(buf.as_slice()).unwrap();
            prop_assert_eq!(back, trajs);
        }
    }

    #[test]
    fn record_shape() {
        let t = Trajectory {
            seed_id: 4,
            steps: vec![(1, 0, 0.5f64).into(), (2, 1, -1.25).into()],
        };
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &[t]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"seed_id\":4,\"steps\":[[1,0,0.5],[2,1,-1.25]]}\n"
        );
    }

    #[test]
    fn parse_error_reports_line() {
        let input = "{\"seed_id\":0,\"steps\":[]}\nnot json\n";
        let err = read_trajectories::<f64, _>(input.as_bytes()).unwrap_err();
        assert!(matches!(err, OpeError::Parse { line: 2, .. }));
    }
}
