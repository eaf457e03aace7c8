use crate::data::DocumentPair;
use crate::error::{Error, Result};

/// Anything carrying a contest-year label.
pub trait Yearly {
    fn year(&self) -> u32;
}

impl Yearly for DocumentPair {
    fn year(&self) -> u32 {
        self.year
    }
}

/// Holds out every item of `held_out_year` for testing and trains on the rest.
pub fn leave_one_out_split<P: Yearly>(
    corpus: Vec<P>,
    held_out_year: u32,
) -> Result<(Vec<P>, Vec<P>)> {
    if !corpus.iter().any(|p| p.year() == held_out_year) {
        let mut years: Vec<u32> = corpus.iter().map(Yearly::year).collect();
        years.sort_unstable();
        years.dedup();
        return Err(Error::Data(format!(
            "year {held_out_year} not in corpus (years: {years:?})"
        )));
    }
    let (test, train): (Vec<P>, Vec<P>) =
        corpus.into_iter().partition(|p| p.year() == held_out_year);
    if train.is_empty() {
        return Err(Error::Data(format!(
            "holding out {held_out_year} leaves no training data"
        )));
    }
    Ok((train, test))
}
