#ifndef ECGVAE_TENSOR_HPP
#define ECGVAE_TENSOR_HPP

#include <Eigen/Dense>
#include <Eigen/StdVector>
#include <vector>

namespace ecgvae {

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using MatXR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// SIMD-aligned storage for buffers Eigen maps over. Eigen's reduction
/// kernels peel a scalar prologue up to the first aligned element, so the
/// accumulation order (and float rounding) of an unaligned buffer would
/// depend on where the allocator happened to place it; pinning the alignment
/// keeps results identical across runs.
template <class S>
using AlignedVec = std::vector<S, Eigen::aligned_allocator<S>>;

/// Dense (channels, height, width) tensor, row-major within each plane.
template <class S>
struct Tensor3 {
    int c = 0, h = 0, w = 0;
    AlignedVec<S> v;

    Tensor3() = default;
    Tensor3(int c_, int h_, int w_) {
        resize(c_, h_, w_);
        zero();
    }

    /// Adjusts dimensions without clearing contents; callers that need zeroed
    /// storage follow up with zero().
    void resize(int c_, int h_, int w_) {
        c = c_;
        h = h_;
        w = w_;
        v.resize(static_cast<size_t>(c) * h * w);
    }
    void zero() { std::fill(v.begin(), v.end(), S(0)); }

    S* data() { return v.data(); }
    const S* data() const { return v.data(); }
    size_t size() const { return v.size(); }

    S& at(int ci, int hi, int wi) { return v[(static_cast<size_t>(ci) * h + hi) * w + wi]; }
    S at(int ci, int hi, int wi) const { return v[(static_cast<size_t>(ci) * h + hi) * w + wi]; }

    /// View as (c, h*w) row-major matrix: one row per channel.
    Eigen::Map<MatXR<S>> as_mat() { return {v.data(), c, static_cast<Eigen::Index>(h) * w}; }
    Eigen::Map<const MatXR<S>> as_mat() const {
        return {v.data(), c, static_cast<Eigen::Index>(h) * w};
    }
};

} // namespace ecgvae

#endif
