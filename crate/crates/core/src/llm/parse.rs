use crate::corpus::Decision;

const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];
const TRAILING_PUNCT: &[char] = &['.', ',', ':', ';', '!'];

/// Maps a raw model response onto a decision.
///
/// After trimming, lowercasing and peeling off surrounding quotes and trailing
/// punctuation, an exact `included`/`excluded` wins. Otherwise the text is
/// scanned for those two words; exactly one distinct hit is accepted, anything
/// else is `Unparseable`.
pub fn parse_decision(text: &str) -> Decision {
    let lowered = text.to_lowercase();
    match strip_decorations(&lowered) {
        "included" => return Decision::Included,
        "excluded" => return Decision::Excluded,
        _ => {}
    }

    let mut included = false;
    let mut excluded = false;
    for word in lowered.split(|c: char| !c.is_alphanumeric()) {
        match word {
            "included" => included = true,
            "excluded" => excluded = true,
            _ => {}
        }
    }
    match (included, excluded) {
        (true, false) => Decision::Included,
        (false, true) => Decision::Excluded,
        _ => Decision::Unparseable,
    }
}

fn strip_decorations(mut s: &str) -> &str {
    loop {
        let next = s
            .trim()
            .trim_end_matches(TRAILING_PUNCT)
            .trim()
            .trim_matches(QUOTES);
        if next.len() == s.len() {
            return next;
        }
        s = next;
    }
}
