//! `grnn gradcheck`: full-model finite-difference check on a small random graph.

use std::io::Write;

use grnn::cells::read_params;
use grnn::engine::{build_loss, ForwardSpec, GrnnModel, ModelConfig};
use grnn::ndmath::{check_against, Tape};
use grnn::synth::RandomScenario;

use crate::config::{self, GradcheckConfig};
use crate::output::{create_dir, io_err, output_dir, write_file, write_manifest};
use crate::{CliError, CliResult, RunArgs};

pub fn run(args: &RunArgs) -> CliResult {
    let (mut cfg, text): (GradcheckConfig, String) = config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let s = RandomScenario::new(cfg.nodes, cfg.steps, cfg.summaries.len())
        .build(cfg.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let model_cfg = ModelConfig {
        cell: cfg.cell,
        hidden_dim: cfg.hidden_dim,
        summaries: cfg.summaries.clone(),
        inroll: cfg.inroll,
    };
    let mut model = GrnnModel::new(&model_cfg, &s, cfg.seed).map_err(|e| CliError::Config(format!("model: {e}")))?;
    if let Some(path) = &cfg.checkpoint {
        let f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
        model.load_params(&read_params(std::io::BufReader::new(f))?)?;
    }

    let spec = ForwardSpec::all(&s).checked(true);
    let zero = model.zero_states(&s);
    let objective = |m: &GrnnModel, tape: &mut Tape| Ok(build_loss(m, &s, &zero, &spec, tape)?.0);

    let mut tape = Tape::checked();
    let loss = objective(&model, &mut tape)?;
    let mut grads = tape.backward(loss)?.into_params();
    if let Some(fault) = &cfg.inject_fault {
        let g = grads
            .get_mut(&fault.param)
            .ok_or_else(|| CliError::Config(format!("inject_fault.param: no parameter {:?}", fault.param)))?;
        let slot = g.data_mut().get_mut(fault.index).ok_or_else(|| {
            CliError::Config(format!("inject_fault.index {} out of range for {}", fault.index, fault.param))
        })?;
        *slot += fault.delta;
    }
    let report = check_against(&mut model, &grads, cfg.step, cfg.tolerance, objective)?;

    let dir = output_dir(args, cfg.output.as_deref(), "gradcheck");
    create_dir(&dir)?;
    write_manifest(&dir, "gradcheck", args, &text, &cfg, cfg.seed)?;
    write_file(&dir.join("gradcheck.txt"), |w| write!(w, "{report}"))?;
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "{} of {} coordinates above tolerance {:.1e}",
            report.failures.len(),
            report.coordinates,
            cfg.tolerance
        )))
    }
}
