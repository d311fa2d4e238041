use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use placehash::dataset::{
    build_similarity_labels, corrupt_rows, load_traversal_pair, training_features, FmSpec, FramesSpec, Manifest,
    SynthConfig, Warp,
};
use placehash::eval::{assignment_recall, code_matches, dtw_assignment, pr_curve, recall_at_1, resolve_depths};
use placehash::featio::{self, sniff, FeatureMatrix, FileKind};
use placehash::gist::{gist_dir, GaborBank};
use placehash::hashlearn::{encode as encode_features, fit_ccaitq, fit_lsh, orthogonality_error, scaled_reg};
use placehash::seqmatch::{contrast_enhance, cost_matrix, dtw_align};
use placehash::TraversalPair;

use crate::error::{config, data, CliError};
use crate::{EvalArgs, MethodArg, SynthArgs, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(config(format!("{what} {} does not exist", path.display())))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| config(format!("cannot create {}: {e}", path.display())))
}

fn io_err(e: io::Error) -> CliError {
    data(e.to_string())
}

fn load_pair(manifest: &Path) -> Result<(Manifest, TraversalPair)> {
    require_file(manifest, "manifest")?;
    Ok(load_traversal_pair(manifest)?)
}

fn manifest_base(manifest: &Path) -> &Path {
    manifest.parent().unwrap_or(Path::new("."))
}

pub fn gist(dir: &Path, out: &Path, grid: usize) -> Result<()> {
    if !dir.is_dir() {
        return Err(config(format!("{} is not a directory", dir.display())));
    }
    let bank = GaborBank::with_grid(grid)?;
    let features = gist_dir::<f32>(dir, &bank)?;
    featio::save_features(&features, out)?;
    eprintln!("{} frames, {}-D -> {}", features.n(), features.d(), out.display());
    Ok(())
}

fn features_path(flag: &Option<PathBuf>, from_manifest: Option<PathBuf>, which: &str) -> Result<PathBuf> {
    let path = flag
        .clone()
        .or(from_manifest)
        .ok_or_else(|| config(format!("no {which} features: pass --{which} or set {which}_features in the manifest")))?;
    require_file(&path, &format!("{which} features"))?;
    Ok(path)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let (manifest, pair) = load_pair(&args.manifest)?;
    let base = manifest_base(&args.manifest);
    let db_path = features_path(&args.db, manifest.db_features_path(base), "db")?;
    let query_path = features_path(&args.query, manifest.query_features_path(base), "query")?;
    let db = featio::load_features(&db_path)?.cast::<f64>();
    let query = featio::load_features(&query_path)?.cast::<f64>();
    let x = training_features(&pair, &db, &query)?;

    let model = match args.method {
        MethodArg::Lsh => fit_lsh::<f64>(x.d(), args.bits, args.seed)?,
        MethodArg::Ccaitq => {
            let labels = build_similarity_labels(&pair)?;
            if !(args.reg.is_finite() && args.reg >= 0.0) {
                return Err(config(format!("--reg must be finite and non-negative, got {}", args.reg)));
            }
            let reg = scaled_reg(&x, args.reg);
            let fit = fit_ccaitq(&x, &labels, args.bits, reg, args.iters, args.seed)?;
            if let Some(loss) = fit.loss_history.last() {
                eprintln!("final quantization loss {loss:.6}");
            }
            fit.model
        }
    };
    featio::save_model(&model, &args.out)?;
    eprintln!(
        "{} model, {} -> {} bits, trained on {} rows -> {}",
        model.method().name(),
        model.dim(),
        model.bits(),
        x.n(),
        args.out.display()
    );
    Ok(())
}

pub fn encode(model: &Path, features: &Path, out: &Path) -> Result<()> {
    require_file(model, "model")?;
    require_file(features, "features")?;
    let model = featio::load_model(model)?;
    let x: FeatureMatrix<f64> = featio::load_features(features)?.cast();
    let codes = encode_features(&model, &x)?;
    featio::save_codes(&codes, out)?;
    eprintln!("{} codes of {} bits -> {}", codes.n(), codes.bits(), out.display());
    Ok(())
}

fn load_code_pair(db: &Path, query: &Path) -> Result<(placehash::BinaryCodeSet, placehash::BinaryCodeSet)> {
    require_file(db, "database codes")?;
    require_file(query, "query codes")?;
    Ok((featio::load_codes(db)?, featio::load_codes(query)?))
}

fn check_test_ranges(pair: &TraversalPair) -> Result<()> {
    let s = pair.splits();
    if s.test_db.is_empty() || s.test_query.is_empty() {
        return Err(config("test range is empty"));
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let (_, pair) = load_pair(&args.manifest)?;
    check_test_ranges(&pair)?;
    let (db, query) = load_code_pair(&args.db_codes, &args.query_codes)?;

    let depths = resolve_depths(&args.depths, pair.splits().test_db.len());
    let max_depth = depths.last().copied().unwrap_or(1).max(1);
    let matches = code_matches(&pair, &db, &query, max_depth)?;

    let mut stdout = io::stdout().lock();
    writeln!(stdout, "metric,value").map_err(io_err)?;
    writeln!(stdout, "recall_at_1,{}", recall_at_1(&pair, &matches)?).map_err(io_err)?;
    if args.dtw {
        let assignment = dtw_assignment(&pair, &db, &query, Some(args.gamma))?;
        let recall = assignment_recall(&pair, pair.splits().test_query.start, &assignment)?;
        writeln!(stdout, "dtw_recall_at_1,{recall}").map_err(io_err)?;
    }

    let curve = pr_curve(&pair, &matches, &depths)?;
    match &args.pr {
        Some(path) => {
            let mut sink = create(path)?;
            curve.write_csv(&mut sink).and_then(|_| sink.flush()).map_err(io_err)?;
        }
        None => {
            writeln!(stdout).map_err(io_err)?;
            curve.write_csv(&mut stdout).map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn dtw(manifest: &Path, db_codes: &Path, query_codes: &Path, gamma: f64, out: Option<&Path>) -> Result<()> {
    let (_, pair) = load_pair(manifest)?;
    check_test_ranges(&pair)?;
    let (db, query) = load_code_pair(db_codes, query_codes)?;
    for (which, codes, len) in [("database", &db, pair.db_len()), ("query", &query, pair.query_len())] {
        if codes.n() != len {
            return Err(data(format!("{which} codes have {} rows but the traversal has {len} frames", codes.n())));
        }
    }
    let s = pair.splits();
    let cost = cost_matrix::<f64>(&query.slice_rows(s.test_query.clone()), &db.slice_rows(s.test_db.clone()))?;
    let cost = contrast_enhance(&cost, gamma)?;
    let path = dtw_align(&cost)?;

    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    writeln!(sink, "query_idx,db_idx,cell_cost").map_err(io_err)?;
    for &(i, j) in &path.steps {
        writeln!(sink, "{},{},{}", i + s.test_query.start, j + s.test_db.start, cost.get(i, j)).map_err(io_err)?;
    }
    sink.flush().map_err(io_err)?;
    eprintln!("{} steps, total cost {}", path.steps.len(), path.total_cost);
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.corrupt) {
        return Err(config(format!("--corrupt must be in [0, 1], got {}", args.corrupt)));
    }
    let mut cfg = SynthConfig::new(args.places, args.dim, args.shift, args.noise, args.seed);
    cfg.margin = args.margin;
    if args.warp > 0.0 {
        cfg.warp = Warp::Sinusoidal { amplitude: args.warp, cycles: args.warp_cycles };
    }
    let (db, mut query, pair) = cfg.generate().map_err(|e| config(e.to_string()))?;

    let test = pair.splits().test_query.clone();
    let corrupted = (args.corrupt * test.len() as f64).round() as usize;
    if corrupted > 0 {
        let start = test.start + (test.len() - corrupted) / 3;
        query = corrupt_rows(&query, start..start + corrupted, args.seed);
    }

    fs::create_dir_all(&args.out_dir).map_err(|e| config(format!("{}: {e}", args.out_dir.display())))?;
    featio::save_features(&db, args.out_dir.join("db.bpfv"))?;
    featio::save_features(&query, args.out_dir.join("query.bpfv"))?;

    let s = pair.splits();
    let identity = pair.fm().iter().enumerate().all(|(i, &j)| i == j);
    let manifest = Manifest {
        db_frames: FramesSpec::Count(pair.db_len() as u64),
        query_frames: FramesSpec::Count(pair.query_len() as u64),
        fm: if identity { FmSpec::Named("identity".into()) } else { FmSpec::List(pair.fm().to_vec()) },
        margin: pair.margin(),
        train_db: [s.train_db.start, s.train_db.end],
        train_query: [s.train_query.start, s.train_query.end],
        test_db: [s.test_db.start, s.test_db.end],
        test_query: [s.test_query.start, s.test_query.end],
        fps: pair.fps(),
        db_features: Some("db.bpfv".into()),
        query_features: Some("query.bpfv".into()),
    };
    let path = args.out_dir.join("manifest.toml");
    fs::write(&path, manifest.to_toml()).map_err(|e| config(format!("{}: {e}", path.display())))?;
    eprintln!("{} places, {}-D -> {}", args.places, args.dim, args.out_dir.display());
    Ok(())
}

pub fn info(path: &Path) -> Result<()> {
    require_file(path, "file")?;
    let bytes = fs::read(path).map_err(io_err)?;
    let mut stdout = io::stdout().lock();
    match sniff(&bytes) {
        Some(FileKind::Features) => {
            let m = featio::read_features(&mut bytes.as_slice())?;
            writeln!(stdout, "features: {} rows x {} dims, frame offset {}", m.n(), m.d(), m.frame_offset)
        }
        Some(FileKind::Model) => {
            let m = featio::read_model(&mut bytes.as_slice())?;
            writeln!(
                stdout,
                "model: {}, {} dims -> {} bits, rotation orthogonality error {:.3e}",
                m.method().name(),
                m.dim(),
                m.bits(),
                orthogonality_error(&m.rotation())
            )
        }
        Some(FileKind::Codes) => {
            let c = featio::read_codes(&mut bytes.as_slice())?;
            writeln!(stdout, "codes: {} rows x {} bits, {} payload bytes", c.n(), c.bits(), c.storage_bytes())
        }
        None => return Err(data(format!("{}: unrecognized file format", path.display()))),
    }
    .map_err(io_err)
}
