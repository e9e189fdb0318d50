//! Seeded simulation of the CV MDI protocol.
//!
//! Each round sends one mode from each party to an honest relay that mixes them
//! on a balanced beamsplitter and homodynes `q` and `p` on the two outputs.
//! In the entanglement-based (EB) picture the parties hold TMSV partner modes,
//! displace them by `γ_A = a z`, `γ_B = b z*` and heterodyne. In the
//! prepare-and-measure (PM) picture they send Gaussian-modulated coherent states
//! and post-process their preparation amplitudes with the relay output.

mod haar;
mod model;
mod params;
mod records;
mod sim;

pub use haar::{symmetrize, DenseUnitary, HaarUnitary, SideConvention, UnitaryAction};
pub use model::{relay_bell_measurement, RoundModel};
pub use params::{ProtocolParams, Representation};
pub use records::{
    read_records, write_records, RecordHeader, RecordReader, RecordWriter, RoundRecord, FRAME_DOUBLES, MAGIC, VERSION,
};
pub use sim::{header_for, simulate, simulate_eb, simulate_pm, simulate_to_file, ROUNDS_PER_STREAM};
