// SPDX-License-Identifier: Apache-2.0

//! Event timelines compared against hand-written reference files.

use qdmsim::ProtocolParams;
use qdmsim::sequence::{PulseSequence, conventional_single, lcqdm_batch, leibold_batch, validate_sequence};

fn params() -> ProtocolParams {
    ProtocolParams { t_init_ls: 20.0, t_init_conf: 20.0, t_ro_conf: 5.0, t_mw: 100.0, t_d: 0.1, t1: 5000.0 }
}

fn assert_golden(s: &PulseSequence, golden: &str) {
    assert_eq!(s.to_text(), golden);
    let parsed = PulseSequence::from_text(golden).unwrap();
    assert_eq!(parsed.tag, s.tag);
    assert_eq!(parsed.events.len(), s.events.len());
    for (a, b) in parsed.events.iter().zip(&s.events) {
        assert_eq!(a.kind, b.kind);
        assert_eq!(a.voxel, b.voxel);
        assert!((a.start - b.start).abs() < 1e-9 && (a.duration - b.duration).abs() < 1e-9);
    }
    assert!(validate_sequence(&parsed, &params()).is_valid());
}

#[test]
fn lcqdm_three_voxels() {
    assert_golden(&lcqdm_batch(&params(), 0, 3), include_str!("data/lcqdm_n3.timeline"));
}

#[test]
fn leibold_two_voxels() {
    assert_golden(&leibold_batch(&params(), 0, 2), include_str!("data/leibold_n2.timeline"));
}

#[test]
fn conventional_single_voxel() {
    assert_golden(&conventional_single(&params(), 7), include_str!("data/conventional.timeline"));
}
