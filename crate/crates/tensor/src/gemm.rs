use rayon::prelude::*;

use crate::scalar::Float;

#[derive(Clone, Copy)]
pub(crate) struct SendPtr<T>(pub *mut T);
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

#[derive(Clone, Copy)]
pub(crate) struct SendConstPtr<T>(pub *const T);
unsafe impl<T> Send for SendConstPtr<T> {}
unsafe impl<T> Sync for SendConstPtr<T> {}

/// Strided matrix view: pointer plus row and column strides.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<T> {
    pub ptr: *const T,
    pub rs: isize,
    pub cs: isize,
}

#[derive(Clone, Copy)]
pub(crate) struct MatMut<T> {
    pub ptr: *mut T,
    pub rs: isize,
    pub cs: isize,
}

const PAR_WORK: usize = 1 << 18;
const MIN_CHUNK: usize = 64;

/// `C <- A B + beta C`, split over disjoint row or column blocks of `C` on the
/// rayon pool. The result does not depend on the split: every element of `C`
/// is reduced over `k` in the same order.
///
/// # Safety
/// Same contract as [`Float::gemm`].
pub(crate) unsafe fn gemm<T: Float>(m: usize, k: usize, n: usize, a: MatRef<T>, b: MatRef<T>, beta: T, c: MatMut<T>) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let p = c.ptr.offset(i as isize * c.rs + j as isize * c.cs);
                *p = if beta == T::zero() { T::zero() } else { *p * beta };
            }
        }
        return;
    }
    let work = m.saturating_mul(n).saturating_mul(k);
    let threads = rayon::current_num_threads();
    if work < PAR_WORK || threads <= 1 {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.ptr,
            a.rs,
            a.cs,
            b.ptr,
            b.rs,
            b.cs,
            beta,
            c.ptr,
            c.rs,
            c.cs,
        );
        return;
    }
    let ap = SendConstPtr(a.ptr);
    let bp = SendConstPtr(b.ptr);
    let cp = SendPtr(c.ptr);
    if n >= m {
        let chunk = n.div_ceil(threads * 2).max(MIN_CHUNK);
        let blocks = n.div_ceil(chunk);
        (0..blocks).into_par_iter().for_each(|blk| {
            let (ap, bp, cp) = (ap, bp, cp);
            let j0 = blk * chunk;
            let nn = chunk.min(n - j0);
            T::gemm(
                m,
                k,
                nn,
                T::one(),
                ap.0,
                a.rs,
                a.cs,
                bp.0.offset(j0 as isize * b.cs),
                b.rs,
                b.cs,
                beta,
                cp.0.offset(j0 as isize * c.cs),
                c.rs,
                c.cs,
            );
        });
    } else {
        let chunk = m.div_ceil(threads * 2).max(MIN_CHUNK);
        let blocks = m.div_ceil(chunk);
        (0..blocks).into_par_iter().for_each(|blk| {
            let (ap, bp, cp) = (ap, bp, cp);
            let i0 = blk * chunk;
            let mm = chunk.min(m - i0);
            T::gemm(
                mm,
                k,
                n,
                T::one(),
                ap.0.offset(i0 as isize * a.rs),
                a.rs,
                a.cs,
                bp.0,
                b.rs,
                b.cs,
                beta,
                cp.0.offset(i0 as isize * c.rs),
                c.rs,
                c.cs,
            );
        });
    }
}
