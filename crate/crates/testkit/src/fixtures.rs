//! Plaintext PII fixtures and a scanner that looks for them in raw bytes.

use std::path::Path;

use consent_core::vault::PiiFields;

const FIRST: [&str; 8] = ["Ingrid", "Astrid", "Solveig", "Kari", "Ragnhild", "Sigrid", "Maren", "Tove"];
const LAST: [&str; 8] = ["Haugland", "Brekke", "Solbakken", "Lindqvist", "Fjeldstad", "Aasen", "Nygaard", "Rostad"];

/// Deterministic fixture `i`: full name, 11-digit national id, phone.
pub fn fixture(i: usize) -> PiiFields {
    PiiFields {
        mother_name: format!("{} {} {}", FIRST[i % 8], LAST[(i / 8) % 8], char::from(b'A' + (i / 64 % 26) as u8)),
        national_id: format!("{:011}", 13_579_246_801u64 + i as u64 * 7_919),
        phone: format!("+479{:07}", 4_200_000 + i * 37),
    }
}

pub fn fixtures(n: usize) -> Vec<PiiFields> {
    (0..n).map(fixture).collect()
}

/// Every plaintext string that must never appear at rest.
pub fn needles(fixtures: &[PiiFields]) -> Vec<String> {
    fixtures
        .iter()
        .flat_map(|f| {
            [
                f.mother_name.clone(),
                f.national_id.clone(),
                f.phone.clone(),
                f.phone.trim_start_matches('+').to_owned(),
            ]
        })
        .collect()
}

/// Occurrences of any needle in `haystack`, as `(needle, offset)`.
pub fn scan(haystack: &[u8], needles: &[String]) -> Vec<(String, usize)> {
    let mut hits = Vec::new();
    for n in needles {
        let n_bytes = n.as_bytes();
        if n_bytes.is_empty() || n_bytes.len() > haystack.len() {
            continue;
        }
        for (off, w) in haystack.windows(n_bytes.len()).enumerate() {
            if w == n_bytes {
                hits.push((n.clone(), off));
            }
        }
    }
    hits
}

/// Scans every regular file below `dir`.
pub fn scan_dir(dir: &Path, needles: &[String]) -> std::io::Result<Vec<(String, String, usize)>> {
    let mut hits = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path)?;
                for (n, off) in scan(&bytes, needles) {
                    hits.push((path.display().to_string(), n, off));
                }
            }
        }
    }
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_distinct_and_shaped() {
        let f = fixtures(300);
        let mut ids: Vec<_> = f.iter().map(|x| x.national_id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 300);
        assert!(f.iter().all(|x| x.national_id.len() == 11));
        assert_eq!(scan(b"xx13579246801yy", &needles(&f[..1])), vec![("13579246801".to_string(), 2)]);
    }
}
