//! Row- and item-parallel helpers with a sequential fallback.
//!
//! Everything that touches pixels goes through these so the `parallel`
//! feature is the only switch between rayon and plain iterators.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Calls `f(y, row)` for every `width`-sized row of `data`.
pub(crate) fn for_each_row<T, F>(data: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| f(y, row));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| f(y, row));
}

/// Builds a row-major buffer by evaluating `f(x, y)` at every pixel.
pub(crate) fn build<T, F>(width: usize, height: usize, f: F) -> Vec<T>
where
    T: Send + Clone + Default,
    F: Fn(usize, usize) -> T + Sync + Send,
{
    let mut data = vec![T::default(); width * height];
    for_each_row(&mut data, width, |y, row| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = f(x, y);
        }
    });
    data
}

/// Order-preserving map over `0..n`.
pub(crate) fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return (0..n).map(f).collect();
}

/// Counts items satisfying `pred`.
pub(crate) fn count<T, F>(items: &[T], pred: F) -> usize
where
    T: Sync,
    F: Fn(&T) -> bool + Sync + Send,
{
    #[cfg(feature = "parallel")]
    return items.par_iter().filter(|v| pred(v)).count();
    #[cfg(not(feature = "parallel"))]
    return items.iter().filter(|v| pred(v)).count();
}
