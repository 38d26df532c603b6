//! One module per subcommand, plus the shared perturbation flags.

pub mod effect_flags;
pub mod evaluate;
pub mod gen_synth;
pub mod perturb;
pub mod report;
pub mod train;
