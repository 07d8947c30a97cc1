//! CSV tables in the layout of the published results tables, plus the
//! structured JSON mirror.

use serde::Serialize;

use crate::dataset::BalanceRow;
use crate::features::HhAggR2;
use crate::inference::{AggregatedEstimate, AnalysisResult, Verdict};

/// Token written in place of a number that could not be estimated.
pub const DEGENERATE: &str = "degenerate";

pub fn num(v: f64, decimals: usize) -> String {
    if !v.is_finite() {
        return DEGENERATE.to_string();
    }
    let s = format!("{v:.decimals$}");
    // no "-0.000"
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

pub fn p_value(p: f64) -> String {
    if p.is_finite() {
        format!("[{}]", num(p, 3))
    } else {
        DEGENERATE.to_string()
    }
}

pub fn interval(lower: f64, upper: f64) -> String {
    if lower.is_finite() && upper.is_finite() {
        format!("({},{})", num(lower, 3), num(upper, 3))
    } else {
        DEGENERATE.to_string()
    }
}

fn level_label(e: Option<&AggregatedEstimate>, fallback: f64) -> String {
    let level = e.map_or(fallback, |e| e.reported_level);
    format!("{}% CI", num(100.0 * level, 0))
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("write to memory");
    for r in rows {
        w.write_record(r).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("CSV output is UTF-8")
}

/// Estimate, interval and p-value lines for a set of aggregated columns.
fn estimate_block(prefix: &[String], cols: &[Option<&AggregatedEstimate>], level: &str, with_p: bool) -> Vec<Vec<String>> {
    let line = |stat: &str, f: &dyn Fn(&AggregatedEstimate) -> String| {
        let mut r = prefix.to_vec();
        r.push(stat.to_string());
        r.extend(cols.iter().map(|c| c.map_or(DEGENERATE.to_string(), f)));
        r
    };
    let mut out = vec![
        line("estimate", &|e| num(e.point, 3)),
        line(level, &|e| interval(e.lower, e.upper)),
    ];
    if with_p {
        out.push(line("p-value", &|e| p_value(e.p_adj)));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlpRow {
    pub learner: String,
    pub ate: AggregatedEstimate,
    pub het: Option<AggregatedEstimate>,
}

pub fn blp_table(outcome: &str, rows: &[BlpRow]) -> String {
    let mut lines = Vec::new();
    for r in rows {
        let level = level_label(Some(&r.ate), 0.9);
        lines.extend(estimate_block(
            &[outcome.to_string(), r.learner.clone()],
            &[Some(&r.ate), r.het.as_ref()],
            &level,
            true,
        ));
    }
    render(&["outcome", "learner", "statistic", "ATE (beta1)", "HET (beta2)"], &lines)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GatesRow {
    pub learner: String,
    pub most: AggregatedEstimate,
    pub least: AggregatedEstimate,
    pub difference: AggregatedEstimate,
}

pub fn gates_table(outcome: &str, rows: &[GatesRow]) -> String {
    let mut lines = Vec::new();
    for r in rows {
        lines.extend(estimate_block(
            &[outcome.to_string(), r.learner.clone()],
            &[Some(&r.most), Some(&r.least), Some(&r.difference)],
            &level_label(Some(&r.most), 0.9),
            true,
        ));
    }
    render(
        &["outcome", "learner", "statistic", "25% most (gamma4)", "25% least (gamma1)", "difference (gamma4 - gamma1)"],
        &lines,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClanRow {
    pub learner: String,
    pub covariate: String,
    pub most: AggregatedEstimate,
    pub least: AggregatedEstimate,
    pub difference: AggregatedEstimate,
}

pub fn clan_table(outcome: &str, rows: &[ClanRow]) -> String {
    let mut lines = Vec::new();
    for r in rows {
        lines.extend(estimate_block(
            &[outcome.to_string(), r.learner.clone(), r.covariate.clone()],
            &[Some(&r.most), Some(&r.least), Some(&r.difference)],
            &level_label(Some(&r.most), 0.9),
            false,
        ));
    }
    render(
        &[
            "outcome",
            "learner",
            "covariate",
            "statistic",
            "25% most (delta4)",
            "25% least (delta1)",
            "difference (delta4 - delta1)",
        ],
        &lines,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaRow {
    pub learner: String,
    pub lambda: f64,
    pub lambda_bar: f64,
}

/// Learner comparison; the winner of each criterion carries an asterisk.
pub fn learner_comparison_table(outcome: &str, rows: &[LambdaRow], blp: &Verdict, gates: &Verdict) -> String {
    let mark = |v: f64, learner: &str, verdict: &Verdict| {
        let star = matches!(verdict, Verdict::Winner(w) if w == learner);
        format!("{}{}", num(v, 3), if star { "*" } else { "" })
    };
    let lines: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                outcome.to_string(),
                r.learner.clone(),
                mark(r.lambda, &r.learner, blp),
                mark(r.lambda_bar, &r.learner, gates),
            ]
        })
        .collect();
    render(&["outcome", "learner", "Best BLP (Lambda)", "Best GATES (Lambda bar)"], &lines)
}

/// Adjusted R² of most-affected membership, one column per learner.
pub fn hh_vs_agg_table(rows: &[(String, Option<HhAggR2>)]) -> String {
    let mut header = vec!["covariates".to_string()];
    header.extend(rows.iter().map(|(l, _)| l.clone()));
    let line = |label: &str, f: fn(&HhAggR2) -> f64| {
        let mut r = vec![label.to_string()];
        r.extend(rows.iter().map(|(_, v)| v.as_ref().map_or(DEGENERATE.to_string(), |v| num(f(v), 2))));
        r
    };
    let lines = vec![
        line("Aggregate level covariates", |r| r.aggregate),
        line("Household level covariates", |r| r.household),
        line("All covariates", |r| r.all),
    ];
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    render(&header, &lines)
}

pub fn balance_csv(rows: &[BalanceRow]) -> String {
    let lines: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.covariate.clone(),
                r.n_total.to_string(),
                r.n_control.to_string(),
                num(r.control_mean, 3),
                num(r.control_sd, 3),
                num(r.coefficient, 3),
                num(r.p_value, 3),
            ]
        })
        .collect();
    render(
        &["covariate", "total obs", "control obs", "control mean", "control SD", "coefficient", "p-value"],
        &lines,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GatesPlotRow {
    pub learner: String,
    pub groups: Vec<AggregatedEstimate>,
    pub ate: AggregatedEstimate,
}

/// Group effects with the ATE band, one line per group.
pub fn gates_plot_csv(rows: &[GatesPlotRow]) -> String {
    let mut lines = Vec::new();
    for r in rows {
        for (k, g) in r.groups.iter().enumerate() {
            lines.push(vec![
                r.learner.clone(),
                format!("G{}", k + 1),
                num(g.point, 6),
                num(g.lower, 6),
                num(g.upper, 6),
                num(r.ate.point, 6),
                num(r.ate.lower, 6),
                num(r.ate.upper, 6),
            ]);
        }
    }
    render(&["learner", "group", "point", "lower", "upper", "ate", "ate_lower", "ate_upper"], &lines)
}

/// All per-outcome tables keyed by file name.
pub fn outcome_tables(result: &AnalysisResult, balance: &[BalanceRow]) -> Vec<(&'static str, String)> {
    let o = &result.outcome;
    let ls = &result.learners;
    let blp: Vec<BlpRow> =
        ls.iter().map(|l| BlpRow { learner: l.learner.clone(), ate: l.ate, het: l.het }).collect();
    let gates: Vec<GatesRow> = ls
        .iter()
        .map(|l| GatesRow {
            learner: l.learner.clone(),
            most: l.gates[l.gates.len() - 1],
            least: l.gates[0],
            difference: l.gates_difference,
        })
        .collect();
    let clan: Vec<ClanRow> = ls
        .iter()
        .flat_map(|l| {
            l.clan.iter().flatten().map(|c| ClanRow {
                learner: l.learner.clone(),
                covariate: c.covariate.clone(),
                most: c.most,
                least: c.least,
                difference: c.difference,
            })
        })
        .collect();
    let lambda: Vec<LambdaRow> = ls
        .iter()
        .map(|l| LambdaRow { learner: l.learner.clone(), lambda: l.lambda, lambda_bar: l.lambda_bar })
        .collect();
    let hh: Vec<(String, Option<HhAggR2>)> = ls.iter().map(|l| (l.learner.clone(), l.hh_vs_agg)).collect();
    let plot: Vec<GatesPlotRow> = ls
        .iter()
        .map(|l| GatesPlotRow { learner: l.learner.clone(), groups: l.gates.clone(), ate: l.ate })
        .collect();
    vec![
        ("blp.csv", blp_table(o, &blp)),
        ("gates.csv", gates_table(o, &gates)),
        ("clan.csv", clan_table(o, &clan)),
        ("learner_comparison.csv", learner_comparison_table(o, &lambda, &result.selection.blp, &result.selection.gates)),
        ("balance.csv", balance_csv(balance)),
        ("hh_vs_agg.csv", hh_vs_agg_table(&hh)),
        ("gates_plot.csv", gates_plot_csv(&plot)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formats() {
        assert_eq!(num(26.9594, 3), "26.959");
        assert_eq!(num(-0.0001, 3), "0.000");
        assert_eq!(num(f64::NAN, 3), DEGENERATE);
        assert_eq!(p_value(0.6071), "[0.607]");
        assert_eq!(interval(-25.386, 77.802), "(-25.386,77.802)");
    }
}
