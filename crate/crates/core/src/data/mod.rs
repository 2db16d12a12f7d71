//! Tabular data, CSV ingestion, graph specifications and the synthetic salary generator.

mod csvio;
mod dataset;
mod salary;
mod spec;

pub use csvio::{load_csv, read_csv, write_csv, write_csv_to, CATEGORICAL_MAX_LEVELS};
pub use dataset::{Column, ColumnKind, Dataset};
pub use salary::{
    calibrate_beta, gen_salary, gen_salary_intervened, gender_age_correlation, pearson, salary_graph_spec,
    SalaryGenConfig, SalaryIntervention, CALIBRATED_BETA, SALARY_COLUMNS, TARGET_GENDER_AGE_CORRELATION,
};
pub use spec::{complete_graph_spec, GraphSpec, NodeSpec, SPEC_VERSION};
