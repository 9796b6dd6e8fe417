//! Replacement of numeric measurements by placeholder tokens.

use std::sync::OnceLock;

use regex::Regex;

pub const TOKEN_3D: &str = "_3DS_";
pub const TOKEN_2D: &str = "_2DS_";
pub const TOKEN_LOC: &str = "_Loc_";
pub const TOKEN_CM: &str = "_SCM_";
pub const TOKEN_MM: &str = "_SMM_";

const NUM: &str = r"\d+(?:\.\d+)?";
const UNIT: &str = r"(?:cm|mm)";
const SEP: &str = r"\s*[×xX*]\s*";

struct Rules {
    size_3d: Regex,
    size_2d: Regex,
    clock: Regex,
    cm: Regex,
    mm: Regex,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| {
        // Leading factors may omit the unit ("1.5 × 0.6 cm"); the last one may not.
        let factor = format!(r"{NUM}(?:\s*{UNIT})?");
        let last = format!(r"{NUM}\s*{UNIT}\b");
        Rules {
            size_3d: Regex::new(&format!(r"\b{factor}{SEP}{factor}{SEP}{last}")).unwrap(),
            size_2d: Regex::new(&format!(r"\b{factor}{SEP}{last}")).unwrap(),
            clock: Regex::new(r"\b(?:1[0-2]|[1-9])\s*o['’]clock(?:\s+position)?").unwrap(),
            cm: Regex::new(&format!(r"\b{NUM}\s*cm\b")).unwrap(),
            mm: Regex::new(&format!(r"\b{NUM}\s*mm\b")).unwrap(),
        }
    })
}

/// Rewrites sizes, clock positions and scalar lengths into placeholder
/// tokens. Three-factor sizes are replaced before two-factor ones so a 3-D
/// size is never split into a 2-D size plus a scalar.
pub fn normalize_measurements(text: &str) -> String {
    let r = rules();
    let text = r.size_3d.replace_all(text, TOKEN_3D);
    let text = r.size_2d.replace_all(&text, TOKEN_2D);
    let text = r.clock.replace_all(&text, TOKEN_LOC);
    let text = r.cm.replace_all(&text, TOKEN_CM);
    let text = r.mm.replace_all(&text, TOKEN_MM);
    text.into_owned()
}
