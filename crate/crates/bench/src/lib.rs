//! Fixtures shared by the benchmarks.

use modflow::chem::{parse_smiles, qm9};
use modflow::data::{gen_community_small, CommunityConfig};
use modflow::{DiscreteFlowModel, FlowConfig, LabeledGraph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Small QM9-like molecules with rings and multiple bonds.
pub const MOLECULES: [&str; 8] = ["CC(C)C1CC1O", "OC1=CC=CN1", "CC#CC(=O)N", "C1CC2CC1C2", "FC(F)C=O", "CN1CCOC1", "CCOC(C)=N", "OCC1CN1C"];

pub fn molecules() -> Vec<LabeledGraph> {
    let a = qm9();
    MOLECULES.iter().map(|s| parse_smiles(s, &a).expect("fixture parses")).collect()
}

/// Full-size QM9 model with freshly initialized weights.
pub fn qm9_model() -> DiscreteFlowModel {
    DiscreteFlowModel::new(qm9(), FlowConfig::default(), 0).expect("default config is valid")
}

pub fn community(count: usize) -> Vec<LabeledGraph> {
    gen_community_small(count, &CommunityConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).expect("default config is valid")
}
