use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use mxdog::filters::{dog, gaussian_blur, mxdog, threshold_xdog, xdog};
use mxdog::gradcheck::{gradcheck, Precision, MIN_SIZE};
use mxdog::losses::hard_constraint_losses;
use mxdog::optim::{stylize_with, LOG_HEADER};
use mxdog::weights::checksum;
use mxdog::{
    load_image, make_test_net, read_weights, save_image, FeatureNet, ImageTensor, Init,
    LossWeights, MxdogParams, StylizeConfig,
};

use crate::args::{
    required, FilterArgs, GradcheckArgs, InitArg, InspectArgs, Merge, Mode, StylizeArgs,
};
use crate::CliError;

pub fn filter(args: FilterArgs) -> Result<(), CliError> {
    let args = args.resolve()?;
    let mode = required(args.mode, "mode")?;
    let input = required(args.input, "input")?;
    let output = required(args.output, "output")?;
    let d = MxdogParams::default();
    let params = MxdogParams {
        sigma: args.sigma.unwrap_or(d.sigma),
        k: args.k.unwrap_or(d.k),
        tau: args.tau.unwrap_or(d.tau),
        phi: args.phi.unwrap_or(d.phi),
        epsilon: args.epsilon.unwrap_or(d.epsilon),
        a_min: args.amin.unwrap_or(d.a_min),
    };
    params.validate().map_err(CliError::usage)?;

    let img: ImageTensor<f32> = load_image(&input)?;
    let out = match mode {
        Mode::Gaussian => gaussian_blur(&img, params.sigma)?,
        Mode::Dog => dog(&img, &params)?,
        Mode::Xdog => xdog(&img, &params)?,
        Mode::Txdog => threshold_xdog(&xdog(&img, &params)?),
        Mode::Mxdog => mxdog(&img, &params)?,
    };
    save_image(&out, &output)?;
    Ok(())
}

fn load_net(weights: Option<&Path>, seed: u64) -> Result<FeatureNet<f32>, CliError> {
    match weights {
        Some(path) => Ok(FeatureNet::from_conv_params(&read_weights(path)?)?),
        None => {
            eprintln!("NOTICE: unverified aesthetics: random test weights");
            eprintln!("        (no --weights given; using a seeded random network, fine for testing only)");
            Ok(make_test_net(seed, 8)?)
        }
    }
}

pub fn stylize(args: StylizeArgs) -> Result<(), CliError> {
    let args = args.resolve()?;
    let content_path = required(args.content, "content")?;
    let style_path = required(args.style, "style")?;
    let output = required(args.output, "output")?;
    let d = StylizeConfig::default();
    let dw = LossWeights::default();
    let cfg = StylizeConfig {
        iterations: args.iters.unwrap_or(d.iterations),
        learning_rate: args.lr.unwrap_or(d.learning_rate),
        weights: LossWeights {
            lambda1: args.lambda1.unwrap_or(dw.lambda1),
            lambda2: args.lambda2.unwrap_or(dw.lambda2),
            lambda3: args.lambda3.unwrap_or(dw.lambda3),
            lambda4: args.lambda4.unwrap_or(dw.lambda4),
            lambda5: args.lambda5.unwrap_or(dw.lambda5),
            ..dw
        },
        rho: args.rho.unwrap_or(d.rho),
        seed: args.seed.unwrap_or(d.seed),
        init: match args.init {
            Some(InitArg::Noise) => Init::Noise,
            Some(InitArg::Content) => Init::Content,
            None => d.init,
        },
        max_edge: args.max_edge.unwrap_or(d.max_edge),
        log_interval: args.log_interval.unwrap_or(d.log_interval),
        ..d
    };
    cfg.validate().map_err(CliError::usage)?;
    for (i, l) in cfg.weights.lambdas().iter().enumerate() {
        if !(l.is_finite() && *l >= 0.0) {
            return Err(CliError::Usage(format!(
                "--lambda{} must be finite and non-negative, got {l}",
                i + 1
            )));
        }
    }

    let net = load_net(args.weights.as_deref(), cfg.seed)?;
    let content: ImageTensor<f32> = load_image(&content_path)?;
    let style: ImageTensor<f32> = load_image(&style_path)?;

    let mut log = match &args.log {
        Some(path) => {
            let file = File::create(path).map_err(|e| io_error(path, e))?;
            let mut w = BufWriter::new(file);
            writeln!(w, "{LOG_HEADER}").map_err(|e| io_error(path, e))?;
            Some((path, w))
        }
        None => None,
    };
    let mut log_err = None;
    let result = stylize_with(&content, &style, &net, &cfg, |record, _| {
        let line = record.to_line();
        eprintln!("{line}");
        if let Some((path, w)) = &mut log {
            if let Err(e) = writeln!(w, "{line}") {
                log_err.get_or_insert_with(|| io_error(path, e));
            }
        }
    });
    if let Some((path, mut w)) = log {
        w.flush().map_err(|e| io_error(path, e))?;
    }
    if let Some(e) = log_err {
        return Err(e);
    }
    let result = result?;

    let (hard_content, hard_style) = hard_constraint_losses(
        &result.image,
        &result.targets,
        &net,
        &cfg.params,
        &cfg.weights,
    )?;
    let last = result
        .history
        .last()
        .expect("stylize always records the final loss");
    eprintln!(
        "final: surrogate constraints content {:.6e} style {:.6e}; hard constraints content {:.6e} style {:.6e}",
        last.loss.mxdog_content_cns, last.loss.mxdog_style_cns, hard_content, hard_style
    );
    save_image(&result.image, &output)?;
    Ok(())
}

pub fn gradcheck_cmd(args: GradcheckArgs) -> Result<(), CliError> {
    let args = args.resolve()?;
    let size = args.size.unwrap_or(MIN_SIZE);
    if size < MIN_SIZE {
        return Err(CliError::Usage(format!(
            "--size must be at least {MIN_SIZE}, got {size}"
        )));
    }
    let precision = match args.precision.unwrap_or(64) {
        32 => Precision::F32,
        64 => Precision::F64,
        p => {
            return Err(CliError::Usage(format!(
                "--precision must be 32 or 64, got {p}"
            )))
        }
    };
    let report = gradcheck(size, args.seed.unwrap_or(0), precision)?;
    print!("{}", report.render());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Failed("gradient check failed".into()))
    }
}

pub fn inspect_weights(args: InspectArgs) -> Result<(), CliError> {
    let layers = read_weights(&args.file)?;
    println!("{:<12} {:>16} {:>10}  checksum", "layer", "shape", "params");
    let mut total = 0;
    for l in &layers {
        let shape = format!(
            "{}x{}x{}x{}",
            l.out_channels, l.in_channels, l.kernel_h, l.kernel_w
        );
        println!(
            "{:<12} {:>16} {:>10}  {:016x}",
            l.name,
            shape,
            l.param_count(),
            checksum(l)
        );
        total += l.param_count();
    }
    println!("{} layers, {total} parameters", layers.len());
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}
