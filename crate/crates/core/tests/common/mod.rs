#![allow(dead_code)]

use probo_core::ledger::{GenesisConfig, GenesisNode};
use probo_core::network::Network;
use probo_core::studies::{
    commit_outputs, AnalysisSection, ArtifactRef, DataSection, OutputTable, StudyDescriptor,
    ToleranceSpec, ToolRef,
};
use probo_core::tokenomics::{EconomicParams, NodeId};
use probo_core::verification::QuorumConfig;

pub const HASH: &str = "9f86d081884c7d659a2feaa0c55ad015a3bf4f1b2b0b822cd15d6c15b0f00a08";

pub fn tool(name: &str, version: &str) -> ToolRef {
    ToolRef {
        name: name.into(),
        version: version.into(),
        parameters: Default::default(),
    }
}

pub fn descriptor(request_id: &str, proponent: &str) -> StudyDescriptor {
    StudyDescriptor {
        request_id: request_id.into(),
        proponent: proponent.into(),
        title: "test study".into(),
        topic: "genomics".into(),
        data_metadata: DataSection {
            artifacts: vec![ArtifactRef {
                uri: "https://data.example.org/raw".into(),
                content_hash: HASH.into(),
                label: "case 1".into(),
            }],
            instruments: vec![tool("sequencer", "3.1")],
            notes: vec![],
        },
        preprocessing: Default::default(),
        analysis: AnalysisSection {
            software: vec![tool("dap", "1.0")],
            protocol: "5x2 cross-validation".into(),
            hardware: "laptop".into(),
            artifacts: vec![],
            notes: vec![],
        },
        tolerances: vec![ToleranceSpec::interval("MCC", 0.70, 0.80)],
        etv_hours: 10,
    }
}

pub fn table(mcc: f64) -> OutputTable {
    let mut t = OutputTable::default();
    t.metrics.insert("MCC".into(), mcc);
    t.ranked_features = vec!["g1".into(), "g2".into(), "g3".into()];
    t
}

pub fn config(nodes: &[(&str, Option<&str>, u64)]) -> GenesisConfig {
    GenesisConfig {
        nodes: nodes
            .iter()
            .map(|(id, aff, balance)| GenesisNode {
                id: NodeId::from(*id),
                affiliation: aff.map(Into::into),
                balance: *balance,
            })
            .collect(),
        economics: EconomicParams::default(),
        quorum: QuorumConfig::default(),
        horizon: 48,
        units_per_hour: 1,
    }
}

/// Five nodes `p`, `v1`..`v4` at 100 probos.
pub fn network() -> Network {
    Network::genesis(
        config(&[
            ("p", Some("x"), 100),
            ("v1", Some("x"), 100),
            ("v2", Some("y"), 100),
            ("v3", None, 100),
            ("v4", None, 100),
        ]),
        0,
    )
    .unwrap()
}

pub fn submit(net: &mut Network, id: &str, proponent: &str, now: u64) {
    let t = table(0.75);
    let c = commit_outputs(&t).unwrap();
    net.submit(descriptor(id, proponent), t, c, 10, now).unwrap();
}

/// Drive one request to a decision with three reports of the given MCCs.
pub fn decide(net: &mut Network, id: &str, proponent: &str, mccs: [f64; 3], now: u64) {
    submit(net, id, proponent, now);
    let verifiers: Vec<&str> = ["p", "v1", "v2", "v3", "v4"]
        .into_iter()
        .filter(|v| *v != proponent)
        .collect();
    for (v, mcc) in verifiers.iter().zip(mccs) {
        net.file_report(id, &NodeId::from(*v), table(mcc), now).unwrap();
    }
}
