use super::{Atom, Diagnostic, DiagnosticKind, MolecularGraph};

/// Permitted valences for an element at a formal charge, ascending.
///
/// `None` means the element is outside the table and any valence is
/// accepted.
pub fn allowed_valences(element: &str, charge: i32) -> Option<Vec<u32>> {
    let (base, shift): (&[i32], i32) = match element {
        "B" => (&[3], -charge),
        "C" => (&[4], -charge.abs()),
        "N" => (&[3], charge),
        "O" => (&[2], charge),
        "P" => (&[3, 5], charge),
        "S" => (&[2, 4, 6], charge),
        "F" | "Cl" | "Br" | "I" => (&[1], charge),
        "H" => (&[1], -charge.abs()),
        _ => return None,
    };
    Some(
        base.iter()
            .map(|v| v + shift)
            .filter(|&v| v >= 0)
            .map(|v| v as u32)
            .collect(),
    )
}

/// Hydrogens an organic-subset atom carries to reach its lowest permitted
/// valence not below `bond_valence`.
pub fn implicit_hydrogens(atom: &Atom, bond_valence: u32) -> u32 {
    if atom.bracket {
        return 0;
    }
    allowed_valences(&atom.element, atom.charge)
        .and_then(|vs| vs.into_iter().find(|&v| v >= bond_valence))
        .map(|v| v - bond_valence)
        .unwrap_or(0)
}

pub(super) fn check(g: &MolecularGraph) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for (i, atom) in g.atoms.iter().enumerate() {
        let Some(allowed) = allowed_valences(&atom.element, atom.charge) else {
            continue;
        };
        let used = g.bond_valence(i) + if atom.bracket { atom.hydrogens } else { 0 };
        let max = allowed.last().copied().unwrap_or(0);
        if used > max {
            diags.push(Diagnostic {
                kind: DiagnosticKind::ValenceError,
                pos: atom.token,
                message: format!(
                    "{}{} has valence {used}, permitted {allowed:?}",
                    atom.element,
                    match atom.charge {
                        0 => String::new(),
                        c => format!("({c:+})"),
                    }
                ),
            });
        }
    }
    diags
}
