//! English number names.

use super::BaselineError;

const ONES: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen",
];

const TENS: [&str; 10] =
    ["", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"];

const SCALES: [(u64, &str); 3] = [(1_000_000_000, "billion"), (1_000_000, "million"), (1_000, "thousand")];

pub const CARDINAL_LIMIT: u64 = 1_000_000_000_000;
pub const ORDINAL_LIMIT: u64 = 1_000_000;

pub const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];

fn push_below_thousand(n: u64, out: &mut Vec<&'static str>) {
    debug_assert!(n > 0 && n < 1000);
    let hundreds = n / 100;
    let rest = n % 100;
    if hundreds > 0 {
        out.push(ONES[hundreds as usize]);
        out.push("hundred");
    }
    if rest >= 20 {
        out.push(TENS[(rest / 10) as usize]);
        if !rest.is_multiple_of(10) {
            out.push(ONES[(rest % 10) as usize]);
        }
    } else if rest > 0 {
        out.push(ONES[rest as usize]);
    }
}

fn cardinal_words(n: u64) -> Vec<&'static str> {
    if n == 0 {
        return vec!["zero"];
    }
    let mut out = Vec::new();
    let mut rest = n;
    for (scale, name) in SCALES {
        let chunk = rest / scale;
        if chunk > 0 {
            push_below_thousand(chunk, &mut out);
            out.push(name);
        }
        rest %= scale;
    }
    if rest > 0 {
        push_below_thousand(rest, &mut out);
    }
    out
}

/// Cardinal number name without "and": 120 -> "one hundred twenty".
pub fn verbalize_cardinal(n: u64) -> Result<String, BaselineError> {
    if n >= CARDINAL_LIMIT {
        return Err(BaselineError::OutOfRange { value: n, limit: CARDINAL_LIMIT });
    }
    Ok(cardinal_words(n).join(" "))
}

fn ordinal_of_word(word: &str) -> String {
    match word {
        "one" => "first".into(),
        "two" => "second".into(),
        "three" => "third".into(),
        "five" => "fifth".into(),
        "eight" => "eighth".into(),
        "nine" => "ninth".into(),
        "twelve" => "twelfth".into(),
        w if w.ends_with('y') => format!("{}ieth", &w[..w.len() - 1]),
        w => format!("{w}th"),
    }
}

/// Ordinal number name: 17 -> "seventeenth", 112 -> "one hundred twelfth".
pub fn verbalize_ordinal(n: u64) -> Result<String, BaselineError> {
    if n == 0 || n >= ORDINAL_LIMIT {
        return Err(BaselineError::OutOfRange { value: n, limit: ORDINAL_LIMIT });
    }
    let mut words: Vec<String> = cardinal_words(n).into_iter().map(String::from).collect();
    let last = words.pop().expect("non-empty");
    words.push(ordinal_of_word(&last));
    Ok(words.join(" "))
}

pub fn digit_name(d: char) -> Option<&'static str> {
    d.to_digit(10).map(|v| ONES[v as usize])
}

/// Each digit read on its own: "0123" -> "zero one two three".
pub fn digits_individually(s: &str) -> String {
    s.chars().filter_map(digit_name).collect::<Vec<_>>().join(" ")
}

/// Spoken year. 2000-2009 and other X00Y years with X in {10, 20} read as
/// cardinals ("two thousand five"); everything else as two-digit pairs
/// ("twenty twenty", "nineteen ninety nine", "nineteen hundred",
/// "nineteen hundred five").
pub fn verbalize_year(year: u64) -> Result<String, BaselineError> {
    if !(1000..=9999).contains(&year) {
        return Err(BaselineError::OutOfRange { value: year, limit: 10_000 });
    }
    let high = year / 100;
    let low = year % 100;
    if low < 10 && high.is_multiple_of(10) {
        return verbalize_cardinal(year);
    }
    let mut words = cardinal_words(high);
    match low {
        0 => words.push("hundred"),
        1..=9 => {
            words.push("hundred");
            words.extend(cardinal_words(low));
        }
        _ => words.extend(cardinal_words(low)),
    }
    Ok(words.join(" "))
}

pub fn days_in_month(month: u32) -> u32 {
    match month {
        2 => 29,
        4 | 6 | 9 | 11 => 30,
        _ => 31,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cardinals() {
        assert_eq!(verbalize_cardinal(0).unwrap(), "zero");
        assert_eq!(verbalize_cardinal(120).unwrap(), "one hundred twenty");
        assert_eq!(verbalize_cardinal(15).unwrap(), "fifteen");
        assert_eq!(verbalize_cardinal(1_000_001).unwrap(), "one million one");
        assert_eq!(
            verbalize_cardinal(999_999_999_999).unwrap(),
            "nine hundred ninety nine billion nine hundred ninety nine million \
             nine hundred ninety nine thousand nine hundred ninety nine"
        );
        assert!(matches!(verbalize_cardinal(CARDINAL_LIMIT), Err(BaselineError::OutOfRange { .. })));
    }

    #[test]
    fn ordinals() {
        assert_eq!(verbalize_ordinal(17).unwrap(), "seventeenth");
        assert_eq!(verbalize_ordinal(1).unwrap(), "first");
        assert_eq!(verbalize_ordinal(20).unwrap(), "twentieth");
        assert_eq!(verbalize_ordinal(112).unwrap(), "one hundred twelfth");
        assert_eq!(verbalize_ordinal(100).unwrap(), "one hundredth");
        assert_eq!(verbalize_ordinal(23).unwrap(), "twenty third");
        assert!(verbalize_ordinal(0).is_err());
        assert!(verbalize_ordinal(ORDINAL_LIMIT).is_err());
    }

    #[test]
    fn years() {
        assert_eq!(verbalize_year(2020).unwrap(), "twenty twenty");
        assert_eq!(verbalize_year(2023).unwrap(), "twenty twenty three");
        assert_eq!(verbalize_year(1999).unwrap(), "nineteen ninety nine");
        assert_eq!(verbalize_year(2005).unwrap(), "two thousand five");
        assert_eq!(verbalize_year(2000).unwrap(), "two thousand");
        assert_eq!(verbalize_year(2010).unwrap(), "twenty ten");
        assert_eq!(verbalize_year(1900).unwrap(), "nineteen hundred");
        assert_eq!(verbalize_year(1905).unwrap(), "nineteen hundred five");
        assert_eq!(verbalize_year(1066).unwrap(), "ten sixty six");
    }

    #[test]
    fn digits() {
        assert_eq!(digits_individually("442-0"), "four four two zero");
    }
}
