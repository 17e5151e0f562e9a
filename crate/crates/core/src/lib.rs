//! Private information retrieval from storage-constrained databases.
//!
//! `K` messages of `L` bits are spread over `N` non-colluding databases, each
//! of which may store only a `mu = t/N` fraction of the library. Every
//! message is split into `C(N,t)` sub-messages of `t^K` bits, indexed by the
//! `t`-subsets of databases that hold them. A user retrieves one message in
//! `K` stages of XOR queries, reusing undesired sums downloaded from one
//! database as side information at the other databases sharing that
//! sub-message, and achieves a normalized download cost of
//! `1 + 1/t + ... + 1/t^(K-1)` without revealing which message it wants.
//!
//! Modules, bottom up:
//!
//! * [`combinatorics`]: checked binomials, exact [`Rational`]s, ranked subsets;
//! * [`placement`]: [`Params`], the storage layout and database stores;
//! * [`planner`]: the stage-by-stage query plan and sanitized per-database views;
//! * [`runtime`]: XOR answering, decoding and the end-to-end harness;
//! * [`privacy`]: structural, exhaustive and Monte Carlo privacy audits;
//! * [`analysis`]: closed-form costs, tradeoff curve, memory sharing.
//!
//! ```
//! use scpir_core::{run_retrieval, Params, Rational};
//! use bitvec::prelude::*;
//!
//! let params = Params::new(3, 2, 2).unwrap();
//! let messages = vec![bitvec![u8, Lsb0; 1; params.message_len]; 2];
//! let report = run_retrieval(&params, &messages, 1, 7).unwrap();
//! assert_eq!(report.cost, Rational::new(3, 2).unwrap());
//! ```

pub mod analysis;
pub mod combinatorics;
pub mod error;
pub mod placement;
pub mod planner;
pub mod privacy;
pub mod runtime;

pub use analysis::{
    baseline_extremes, composite_retrieval, curve_csv, curve_rows, improvement_report,
    memory_share, theoretical_cost, tradeoff_curve, CompositeReport, MemShareSpec,
    TradeoffPoint,
};
pub use combinatorics::{binom, enum_subsets, Rational, SubsetId};
pub use error::{Error, Result};
pub use placement::{
    init_databases, verify_storage, Bits, DatabaseStore, Params, Placement, PlacementDocument,
};
pub use planner::{
    build_query_plan, db_view, stage_counts, DatabaseQuery, QueryPlan, SecretPermutations,
    StageCount,
};
pub use privacy::{exhaustive_audit, monte_carlo_audit, structural_audit, AuditReport};
pub use runtime::{answer_query, decode, execute, run_retrieval, AnswerSet, RetrievalReport};
