//! C ABI over the `lbpcg` library.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_new`/`*_load`/`*_fit` call and released with the matching `*_free`.
//! Fallible calls return an [`LbpcgStatus`]; on failure the message is kept
//! per thread and can be read back with [`lbpcg_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use lbpcg::artifact::load_artifact;
use lbpcg::content::{ContentSchema, ContentVector, FeatureVector};
use lbpcg::gpe::{crowd_em, EmConfig, GpeModel, SurveyMatrix};
use lbpcg::learners::{KrrConfig, RandomForest};
use lbpcg::pdc::{predict_preference, Decision, PreferenceEnsemble};
use lbpcg::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbpcgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DegenerateData = 3,
    Io = 4,
    BadArtifact = 5,
    BufferTooSmall = 6,
    Panic = 7,
    Internal = 8,
}

/// PDC decision for one play.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbpcgDecision {
    Negative = 0,
    Positive = 1,
    Rejected = 2,
}

/// Content schema (dimension cardinalities).
pub struct LbpcgSchema(ContentSchema);

/// Binary survey answers over a list of beta games.
pub struct LbpcgSurveys(SurveyMatrix);

/// Fitted Crowd-EM model: consensus, reliabilities and popularity regressor.
pub struct LbpcgGpe(GpeModel);

/// Trained preference ensemble.
pub struct LbpcgEnsemble(PreferenceEnsemble<RandomForest>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Fail(LbpcgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io(_) => LbpcgStatus::Io,
            Error::VersionMismatch { .. } | Error::KindMismatch { .. } | Error::CorruptArtifact(_) => {
                LbpcgStatus::BadArtifact
            }
            Error::DegenerateData(_)
            | Error::DegenerateValidation(_)
            | Error::MissingCategory(_)
            | Error::NoTrainableData(_) => LbpcgStatus::DegenerateData,
            Error::InvalidSchema(_)
            | Error::SizeOverflow
            | Error::DimensionMismatch { .. }
            | Error::ValueOutOfRange { .. }
            | Error::InvalidParameter(_)
            | Error::Config(_) => LbpcgStatus::InvalidArgument,
            _ => LbpcgStatus::Internal,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(LbpcgStatus::InvalidArgument, msg.into())
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LbpcgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LbpcgStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside lbpcg");
            LbpcgStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(LbpcgStatus::NullPointer, format!("{what} is null")))
}

unsafe fn array<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(LbpcgStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(LbpcgStatus::NullPointer, format!("{what} is null")))
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(LbpcgStatus::NullPointer, "output buffer is null".into()));
    }
    if len < src.len() {
        return Err(Fail(
            LbpcgStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

fn game(schema: &ContentSchema, values: &[u32]) -> Result<ContentVector, Fail> {
    let g = ContentVector::new(values.to_vec());
    schema.validate(&g)?;
    Ok(g)
}

/// Message of the last failed call on this thread ("" after a success).
/// The pointer stays valid until the next lbpcg call on the same thread.
#[no_mangle]
pub extern "C" fn lbpcg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lbpcg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The nine-dimension default schema (116,640 games).
#[no_mangle]
pub unsafe extern "C" fn lbpcg_schema_default(out: *mut *mut LbpcgSchema) -> LbpcgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(LbpcgSchema(ContentSchema::default_schema())));
        Ok(())
    })
}

/// Schema with the given per-dimension cardinalities.
#[no_mangle]
pub unsafe extern "C" fn lbpcg_schema_new(
    cardinalities: *const u32,
    len: usize,
    out: *mut *mut LbpcgSchema,
) -> LbpcgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cards = array(cardinalities, len, "cardinalities")?;
        *out = Box::into_raw(Box::new(LbpcgSchema(ContentSchema::from_cardinalities(cards)?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lbpcg_schema_free(schema: *mut LbpcgSchema) {
    if !schema.is_null() {
        drop(Box::from_raw(schema));
    }
}

/// Number of dimensions (0 for a null handle).
#[no_mangle]
pub unsafe extern "C" fn lbpcg_schema_dimensions(schema: *const LbpcgSchema) -> usize {
    schema.as_ref().map_or(0, |s| s.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn lbpcg_schema_space_size(schema: *const LbpcgSchema, out: *mut u64) -> LbpcgStatus {
    guard(|| {
        let s = borrow(schema, "schema")?;
        *out_ptr(out, "out")? = s.0.space_size()?;
        Ok(())
    })
}

/// Mixed-radix id of a game given as `len` dimension values.
#[no_mangle]
pub unsafe extern "C" fn lbpcg_schema_game_id(
    schema: *const LbpcgSchema,
    values: *const u32,
    len: usize,
    out: *mut u64,
) -> LbpcgStatus {
    guard(|| {
        let s = borrow(schema, "schema")?;
        let g = game(&s.0, array(values, len, "values")?)?;
        *out_ptr(out, "out")? = s.0.game_id(&g);
        Ok(())
    })
}

/// Inverse of [`lbpcg_schema_game_id`]; `out` must hold one value per dimension.
#[no_mangle]
pub unsafe extern "C" fn lbpcg_schema_vector_at(
    schema: *const LbpcgSchema,
    id: u64,
    out: *mut u32,
    len: usize,
) -> LbpcgStatus {
    guard(|| {
        let s = borrow(schema, "schema")?;
        let g = s.0.vector_at(id)?;
        if out.is_null() {
            return Err(Fail(LbpcgStatus::NullPointer, "out is null".into()));
        }
        if len < g.len() {
            return Err(Fail(LbpcgStatus::BufferTooSmall, format!("buffer holds {len} values, {} needed", g.len())));
        }
        ptr::copy_nonoverlapping(g.values().as_ptr(), out, g.len());
        Ok(())
    })
}

/// Survey matrix over `n_games` beta games stored row-major in `games`
/// (`n_games * dimensions` values). Entry `i` says player `players_of[i]`
/// answered `answers[i]` (0/1) for game `games_of[i]`.
#[no_mangle]
pub unsafe extern "C" fn lbpcg_surveys_new(
    schema: *const LbpcgSchema,
    games: *const u32,
    n_games: usize,
    n_players: usize,
    games_of: *const usize,
    players_of: *const usize,
    answers: *const u8,
    n_entries: usize,
    out: *mut *mut LbpcgSurveys,
) -> LbpcgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let s = &borrow(schema, "schema")?.0;
        let dims = s.len();
        let flat = array(games, n_games * dims, "games")?;
        let list = flat
            .chunks(dims.max(1))
            .take(n_games)
            .map(|v| game(s, v))
            .collect::<Result<Vec<_>, _>>()?;
        let gs = array(games_of, n_entries, "games_of")?;
        let ps = array(players_of, n_entries, "players_of")?;
        let ys = array(answers, n_entries, "answers")?;
        let entries: Vec<(usize, usize, u8)> = (0..n_entries).map(|i| (gs[i], ps[i], ys[i])).collect();
        *out = Box::into_raw(Box::new(LbpcgSurveys(SurveyMatrix::new(list, n_players, &entries)?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lbpcg_surveys_free(surveys: *mut LbpcgSurveys) {
    if !surveys.is_null() {
        drop(Box::from_raw(surveys));
    }
}

/// Run Crowd-EM. A `max_epochs` of 0 or a non-positive `tol` selects the
/// library default; `refit` is 0/1.
#[no_mangle]
pub unsafe extern "C" fn lbpcg_gpe_fit(
    schema: *const LbpcgSchema,
    surveys: *const LbpcgSurveys,
    max_epochs: usize,
    tol: f64,
    refit: u8,
    out: *mut *mut LbpcgGpe,
) -> LbpcgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let s = borrow(schema, "schema")?;
        let m = borrow(surveys, "surveys")?;
        let d = EmConfig::default();
        let cfg = EmConfig {
            max_epochs: if max_epochs == 0 { d.max_epochs } else { max_epochs },
            tol: if tol > 0.0 { tol } else { d.tol },
            refit: refit != 0,
        };
        let model = crowd_em(&m.0, &s.0, KrrConfig::default(), &cfg)?;
        *out = Box::into_raw(Box::new(LbpcgGpe(model)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lbpcg_gpe_free(model: *mut LbpcgGpe) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn lbpcg_gpe_game_count(model: *const LbpcgGpe) -> usize {
    model.as_ref().map_or(0, |m| m.0.games.len())
}

#[no_mangle]
pub unsafe extern "C" fn lbpcg_gpe_player_count(model: *const LbpcgGpe) -> usize {
    model.as_ref().map_or(0, |m| m.0.reliability.len())
}

/// 1 if EM met its tolerance, 0 otherwise (or for a null handle).
#[no_mangle]
pub unsafe extern "C" fn lbpcg_gpe_converged(model: *const LbpcgGpe) -> u8 {
    model.as_ref().map_or(0, |m| u8::from(m.0.converged))
}

/// Consensus γ per beta game; `out` holds at least `game_count` values.
#[no_mangle]
pub unsafe extern "C" fn lbpcg_gpe_gamma(model: *const LbpcgGpe, out: *mut f64, len: usize) -> LbpcgStatus {
    guard(|| copy_out(&borrow(model, "model")?.0.consensus.gamma, out, len))
}

/// Sensitivity α per player.
#[no_mangle]
pub unsafe extern "C" fn lbpcg_gpe_alpha(model: *const LbpcgGpe, out: *mut f64, len: usize) -> LbpcgStatus {
    guard(|| copy_out(&borrow(model, "model")?.0.reliability.alpha, out, len))
}

/// Specificity β per player.
#[no_mangle]
pub unsafe extern "C" fn lbpcg_gpe_beta(model: *const LbpcgGpe, out: *mut f64, len: usize) -> LbpcgStatus {
    guard(|| copy_out(&borrow(model, "model")?.0.reliability.beta, out, len))
}

/// Predicted popularity of any game of the model's schema.
#[no_mangle]
pub unsafe extern "C" fn lbpcg_gpe_predict(
    model: *const LbpcgGpe,
    values: *const u32,
    len: usize,
    out: *mut f64,
) -> LbpcgStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        let g = game(&m.schema, array(values, len, "values")?)?;
        *out_ptr(out, "out")? = m.predict_popularity(&g)?;
        Ok(())
    })
}

/// Load a `ensemble.art` written by the pipeline.
#[no_mangle]
pub unsafe extern "C" fn lbpcg_ensemble_load(path: *const c_char, out: *mut *mut LbpcgEnsemble) -> LbpcgStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = borrow(path, "path")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not valid UTF-8"))?;
        let e: PreferenceEnsemble<RandomForest> = load_artifact(path)?;
        *out = Box::into_raw(Box::new(LbpcgEnsemble(e)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lbpcg_ensemble_free(ensemble: *mut LbpcgEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// Expected play-log length (0 for a null handle).
#[no_mangle]
pub unsafe extern "C" fn lbpcg_ensemble_playlog_width(ensemble: *const LbpcgEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.0.playlog_width)
}

/// Override the decision thresholds θ_c and θ_r.
#[no_mangle]
pub unsafe extern "C" fn lbpcg_ensemble_set_thresholds(
    ensemble: *mut LbpcgEnsemble,
    theta_c: f64,
    theta_r: f64,
) -> LbpcgStatus {
    guard(|| {
        let e = out_ptr(ensemble, "ensemble")?;
        if !(0.0..=1.0).contains(&theta_c) || !(0.0..=1.0).contains(&theta_r) {
            return Err(invalid(format!("thresholds ({theta_c}, {theta_r}) outside [0, 1]")));
        }
        e.0.theta_c = theta_c;
        e.0.theta_r = theta_r;
        Ok(())
    })
}

/// Score one play-log for a game of difficulty `category`. Either output
/// pointer may be null if that value is not wanted.
#[no_mangle]
pub unsafe extern "C" fn lbpcg_ensemble_predict(
    ensemble: *const LbpcgEnsemble,
    playlog: *const f64,
    len: usize,
    category: usize,
    score: *mut f64,
    decision: *mut LbpcgDecision,
) -> LbpcgStatus {
    guard(|| {
        let e = &borrow(ensemble, "ensemble")?.0;
        let log = array(playlog, len, "playlog")?;
        if e.category_sizes.first().is_some_and(|&n| category >= n) {
            return Err(invalid(format!("category {category} out of range")));
        }
        let p = predict_preference(e, log, &FeatureVector::single(category))?;
        if let Some(s) = score.as_mut() {
            *s = p.score;
        }
        if let Some(d) = decision.as_mut() {
            *d = match p.decision {
                Decision::Negative => LbpcgDecision::Negative,
                Decision::Positive => LbpcgDecision::Positive,
                Decision::Rejected => LbpcgDecision::Rejected,
            };
        }
        Ok(())
    })
}
