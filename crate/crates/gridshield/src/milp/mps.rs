//! Fixed-format MPS writer (ROWS / COLUMNS with integer markers / RHS /
//! BOUNDS). Names are truncated to 8 characters with collision suffixes so
//! mainstream solvers can re-import the files.

use std::collections::BTreeSet;

use super::{MilpModel, Relation, VarKind};

fn short_names(raw: &[String]) -> Vec<String> {
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for name in raw {
        let cleaned: String = name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
            .collect();
        let mut candidate: String = cleaned.chars().take(8).collect();
        if candidate.is_empty() {
            candidate = "N".to_string();
        }
        let mut counter = 1u32;
        while used.contains(&candidate) {
            let suffix = format!("{counter}");
            let keep = 8usize.saturating_sub(suffix.len());
            candidate = format!("{}{}", cleaned.chars().take(keep).collect::<String>(), suffix);
            counter += 1;
        }
        used.insert(candidate.clone());
        out.push(candidate);
    }
    out
}

fn fmt_value(v: f64) -> String {
    format!("{v:.6}")
}

/// Render the model as fixed-format MPS text.
pub fn export_mps(model: &MilpModel) -> String {
    let var_names = short_names(
        &model.variables.iter().map(|v| v.name.clone()).collect::<Vec<_>>(),
    );
    let row_names = short_names(
        &model.constraints.iter().map(|c| c.name.clone()).collect::<Vec<_>>(),
    );

    let mut out = String::new();
    out.push_str("NAME          GRIDSHLD\n");
    out.push_str("ROWS\n");
    out.push_str(" N  COST\n");
    for (i, c) in model.constraints.iter().enumerate() {
        let tag = match c.relation {
            Relation::Le => 'L',
            Relation::Eq => 'E',
            Relation::Ge => 'G',
        };
        out.push_str(&format!(" {}  {}\n", tag, row_names[i]));
    }

    out.push_str("COLUMNS\n");
    let mut in_integer_block = false;
    let mut marker_count = 0;
    for (j, var) in model.variables.iter().enumerate() {
        let is_int = var.kind == VarKind::Binary;
        if is_int && !in_integer_block {
            out.push_str(&format!(
                "    MARKER{marker_count:02}  'MARKER'                 'INTORG'\n"
            ));
            marker_count += 1;
            in_integer_block = true;
        }
        if !is_int && in_integer_block {
            out.push_str(&format!(
                "    MARKER{marker_count:02}  'MARKER'                 'INTEND'\n"
            ));
            marker_count += 1;
            in_integer_block = false;
        }
        let mut entries: Vec<(String, f64)> = Vec::new();
        if let Some(c) = model.objective.get(&j) {
            if *c != 0.0 {
                entries.push(("COST".to_string(), *c));
            }
        }
        for (i, con) in model.constraints.iter().enumerate() {
            if let Some(a) = con.coefficients.get(&j) {
                if *a != 0.0 {
                    entries.push((row_names[i].clone(), *a));
                }
            }
        }
        if entries.is_empty() {
            // keep the column present so bounds stay meaningful
            entries.push(("COST".to_string(), 0.0));
        }
        for pair in entries.chunks(2) {
            let mut line = format!("    {:<8}  {:<8}  {:>12}", var_names[j], pair[0].0, fmt_value(pair[0].1));
            if let Some(second) = pair.get(1) {
                line.push_str(&format!("   {:<8}  {:>12}", second.0, fmt_value(second.1)));
            }
            line.push('\n');
            out.push_str(&line);
        }
    }
    if in_integer_block {
        out.push_str(&format!(
            "    MARKER{marker_count:02}  'MARKER'                 'INTEND'\n"
        ));
    }

    out.push_str("RHS\n");
    for (i, c) in model.constraints.iter().enumerate() {
        if c.rhs != 0.0 {
            out.push_str(&format!("    RHS       {:<8}  {:>12}\n", row_names[i], fmt_value(c.rhs)));
        }
    }

    out.push_str("BOUNDS\n");
    for (j, var) in model.variables.iter().enumerate() {
        match var.kind {
            VarKind::Binary => {
                out.push_str(&format!(" BV BND       {}\n", var_names[j]));
            }
            VarKind::Continuous => {
                if var.lower != 0.0 {
                    out.push_str(&format!(
                        " LO BND       {:<8}  {:>12}\n",
                        var_names[j],
                        fmt_value(var.lower)
                    ));
                }
                if var.upper.is_finite() {
                    out.push_str(&format!(
                        " UP BND       {:<8}  {:>12}\n",
                        var_names[j],
                        fmt_value(var.upper)
                    ));
                }
            }
        }
    }
    out.push_str("ENDATA\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::MilpModel;

    #[test]
    fn empty_model_has_all_sections() {
        let text = export_mps(&MilpModel::default());
        for section in ["NAME", "ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA"] {
            assert!(text.contains(section), "missing {section}");
        }
    }

    #[test]
    fn single_constraint_model_golden() {
        let mut m = MilpModel::default();
        let x = m.add_binary("x");
        let y = m.add_variable("y", crate::milp::VarKind::Continuous, 0.0, 4.0);
        m.objective = [(x, 1.0), (y, 0.5)].into_iter().collect();
        m.add_constraint("cover", [(x, 1.0), (y, 1.0)].into_iter().collect(), Relation::Ge, 1.0);
        let text = export_mps(&m);
        let golden = "\
NAME          GRIDSHLD
ROWS
 N  COST
 G  COVER
COLUMNS
    MARKER00  'MARKER'                 'INTORG'
    X         COST          1.000000   COVER         1.000000
    MARKER01  'MARKER'                 'INTEND'
    Y         COST          0.500000   COVER         1.000000
RHS
    RHS       COVER         1.000000
BOUNDS
 BV BND       X
 UP BND       Y             4.000000
ENDATA
";
        assert_eq!(text, golden);
    }

    #[test]
    fn name_collisions_get_suffixes() {
        let names = vec![
            "averylongname_a".to_string(),
            "averylongname_b".to_string(),
            "averylongname_c".to_string(),
        ];
        let short = short_names(&names);
        assert_eq!(short.len(), 3);
        let set: std::collections::BTreeSet<_> = short.iter().collect();
        assert_eq!(set.len(), 3);
        for s in &short {
            assert!(s.len() <= 8);
        }
    }
}
