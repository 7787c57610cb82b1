//! Plain-text summaries of fitted models.

use std::fmt::Write;

use ndarray::{ArrayView2, ArrayView3, Axis};

use crate::basic::BasicParams;
use crate::cov_latent::{CovLatentParams, LatentTransitions};
use crate::cov_manifest::CovManifestParams;
use crate::data::CategorySpec;
use crate::fitted::FittedModel;
use crate::fit::TransitionLayout;
use crate::inference::SeReport;
use crate::mixed::MixedParams;

fn matrix(out: &mut String, title: &str, rows: &[String], cols: &[String], m: ArrayView2<f64>) {
    let _ = writeln!(out, "\n{title}");
    let w0 = rows.iter().map(String::len).max().unwrap_or(0).max(4);
    let _ = write!(out, "{:w0$}", "");
    for c in cols {
        let _ = write!(out, " {c:>11}");
    }
    out.push('\n');
    for (r, name) in rows.iter().enumerate() {
        let _ = write!(out, "{name:w0$}");
        for c in 0..cols.len() {
            let _ = write!(out, " {:>11.6}", m[[r, c]]);
        }
        out.push('\n');
    }
}

fn labels(prefix: &str, range: std::ops::RangeInclusive<usize>) -> Vec<String> {
    range.map(|i| format!("{prefix}{i}")).collect()
}

fn psi_blocks(out: &mut String, psi: ArrayView3<f64>, cats: &CategorySpec) {
    let k = psi.dim().2;
    for (j, &c) in cats.counts().iter().enumerate() {
        let m = psi.index_axis(Axis(0), j);
        matrix(
            out,
            &format!("Conditional response probabilities, variable {} (category x state):", j + 1),
            &labels("y=", 0..=c - 1),
            &labels("u=", 1..=k),
            m.slice(ndarray::s![..c, ..]),
        );
    }
}

fn basic_blocks(out: &mut String, p: &BasicParams) {
    let k = p.piv.len();
    let states = labels("u=", 1..=k);
    matrix(
        out,
        "Initial probabilities:",
        &["piv".into()],
        &states,
        p.piv.view().insert_axis(Axis(0)),
    );
    for s in 0..p.pi.dim().0 {
        let title = match p.layout {
            TransitionLayout::Homogeneous => "Transition probabilities (origin x destination):".to_string(),
            TransitionLayout::Heterogeneous => {
                format!("Transition probabilities at occasion {} (origin x destination):", s + 2)
            }
        };
        matrix(out, &title, &states, &states, p.pi.index_axis(Axis(0), s));
    }
    psi_blocks(out, p.psi.view(), &p.categories);
}

fn cov_latent_blocks(out: &mut String, p: &CovLatentParams) {
    let k = p.n_states();
    let mut rows = vec!["intercept".to_string()];
    rows.extend(labels("x1_", 1..=p.p1()));
    matrix(
        out,
        "Initial logits against state 1 (Be):",
        &rows,
        &labels("u=", 2..=k),
        p.be.view(),
    );
    match &p.ga {
        LatentTransitions::Multilogit { ga } => {
            let mut rows = vec!["intercept".to_string()];
            rows.extend(labels("x2_", 1..=ga.dim().1 - 1));
            for a in 0..k {
                let cols: Vec<String> = (0..k).filter(|&b| b != a).map(|b| format!("{}->{}", a + 1, b + 1)).collect();
                matrix(
                    out,
                    &format!("Transition logits from state {} against staying (Ga):", a + 1),
                    &rows,
                    &cols,
                    ga.index_axis(Axis(0), a),
                );
            }
        }
        LatentTransitions::Difflogit { intercepts, slopes } => {
            let cols: Vec<String> = labels("slot ", 1..=k - 1);
            matrix(
                out,
                "Transition intercepts, origin x destination slot (Ga0):",
                &labels("u=", 1..=k),
                &cols,
                intercepts.view(),
            );
            matrix(
                out,
                "Transition slopes, state x covariate (Ga1):",
                &labels("u=", 1..=k),
                &labels("x2_", 1..=slopes.ncols()),
                slopes.view(),
            );
        }
    }
    psi_blocks(out, p.psi.view(), &p.categories);
}

fn cov_manifest_blocks(out: &mut String, p: &CovManifestParams) {
    let k = p.al.len();
    let (mu, al) = p.display_coordinates();
    matrix(
        out,
        "Cut-points (centered):",
        &["mu".into()],
        &labels("", 1..=mu.len()),
        mu.view().insert_axis(Axis(0)),
    );
    matrix(
        out,
        "Support points (shifted):",
        &["al".into()],
        &labels("u=", 1..=k),
        al.view().insert_axis(Axis(0)),
    );
    if !p.be.is_empty() {
        matrix(
            out,
            "Covariate effects:",
            &["be".into()],
            &labels("x", 1..=p.be.len()),
            p.be.view().insert_axis(Axis(0)),
        );
    }
    let states = labels("u=", 1..=k);
    matrix(
        out,
        "Stationary initial probabilities:",
        &["piv".into()],
        &states,
        p.piv.view().insert_axis(Axis(0)),
    );
    matrix(
        out,
        "Transition probabilities (origin x destination):",
        &states,
        &states,
        p.pi.view(),
    );
}

fn mixed_blocks(out: &mut String, p: &MixedParams) {
    let k1 = p.la.len();
    let k2 = p.piv.nrows();
    let classes = labels("class ", 1..=k1);
    let states = labels("u=", 1..=k2);
    matrix(out, "Class masses:", &["la".into()], &classes, p.la.view().insert_axis(Axis(0)));
    matrix(out, "Initial probabilities (state x class):", &states, &classes, p.piv.view());
    for u in 0..k1 {
        matrix(
            out,
            &format!("Transition probabilities in class {} (origin x destination):", u + 1),
            &states,
            &states,
            p.pi.index_axis(Axis(2), u),
        );
    }
    psi_blocks(out, p.psi.view(), &p.categories);
}

/// Convergence block, parameter blocks and, when given, standard errors.
pub fn summary_text(fit: &FittedModel, call: &str, se: Option<&SeReport>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Call:\n{call}\n");
    let _ = writeln!(out, "Model: {}", fit.variant().name());
    let _ = writeln!(out, "\nConvergence info:");
    let _ = writeln!(out, "{:>16} {:>6} {:>16} {:>16}", "LogLik", "np", "AIC", "BIC");
    let _ = writeln!(
        out,
        "{:>16.4} {:>6} {:>16.4} {:>16.4}",
        fit.loglik(),
        fit.np(),
        fit.aic(),
        fit.bic()
    );
    let _ = writeln!(
        out,
        "\nn = {}, iterations = {}, converged = {}, winning start = {}",
        fit.n_total(),
        fit.iterations(),
        fit.converged(),
        fit.start_index()
    );
    let d = fit.diagnostics();
    if !d.is_clean() {
        let _ = writeln!(out, "diagnostics: {}", serde_json::to_string(d).unwrap_or_default());
    }
    match fit {
        FittedModel::Basic(f) => basic_blocks(&mut out, &f.params),
        FittedModel::CovLatent(f) => cov_latent_blocks(&mut out, &f.params),
        FittedModel::CovManifest(f) => cov_manifest_blocks(&mut out, &f.params),
        FittedModel::Mixed(f) => mixed_blocks(&mut out, &f.params),
    }
    if let Some(se) = se {
        let method = match se.method {
            crate::inference::SeMethod::Numerical => "observed information".to_string(),
            crate::inference::SeMethod::Bootstrap => format!(
                "parametric bootstrap, {} of {} replicates",
                se.replicates.unwrap_or(0) - se.dropped.unwrap_or(0),
                se.replicates.unwrap_or(0)
            ),
        };
        let _ = writeln!(out, "\nStandard errors ({method}):");
        let w = se.labels.iter().chain(se.natural.iter().map(|n| &n.label)).map(String::len).max().unwrap_or(8);
        for ((label, est), s) in se.labels.iter().zip(&se.theta).zip(&se.se) {
            let _ = writeln!(out, "{label:w$} {est:>12.6} {:>12}", fmt_se(*s));
        }
        for n in &se.natural {
            let _ = writeln!(out, "{:w$} {:>12.6} {:>12}", n.label, n.estimate, fmt_se(n.se));
        }
        for warn in &se.warnings {
            let _ = writeln!(out, "warning: {warn}");
        }
    }
    out
}

fn fmt_se(s: Option<f64>) -> String {
    s.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}
