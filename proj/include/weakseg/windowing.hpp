#pragma once

#include <algorithm>
#include <string>

#include "weakseg/data_io.hpp"
#include "weakseg/tensor.hpp"

namespace weakseg {

struct WindowConfig {
    Index size = 32;
};

/// First frame index covered by the window of frame `i`. The window holds
/// frames [i - floor(S/2), i - floor(S/2) + S), so frame i sits at row
/// floor(S/2) for every S.
inline Index window_start(Index i, Index size) { return i - size / 2; }

/// Row of a window that holds its own frame.
inline Index window_center(Index size) { return size / 2; }

/// S x D window around frame `i`, zero rows outside [0, T).
template <typename Derived>
MatrixX<typename Derived::Scalar> window(const Eigen::MatrixBase<Derived>& x, Index i, Index size) {
    using Scalar = typename Derived::Scalar;
    if (size < 1) throw std::invalid_argument("window: size must be >= 1");
    if (i < 0 || i >= x.rows())
        throw std::out_of_range("window: frame " + std::to_string(i) + " outside [0, " + std::to_string(x.rows()) + ")");
    MatrixX<Scalar> w = MatrixX<Scalar>::Zero(size, x.cols());
    const Index start = window_start(i, size);
    const Index lo = std::max<Index>(start, 0);
    const Index hi = std::min<Index>(start + size, x.rows());
    if (hi > lo) w.middleRows(lo - start, hi - lo) = x.middleRows(lo, hi - lo);
    return w;
}

/// All T windows of a sequence with stride one, stored as a (T*S) x D
/// matrix whose rows [i*S, (i+1)*S) are window i.
struct WindowStack {
    std::string video_id;
    Index frames = 0;
    Index size = 0;
    Matrix data;

    Index dim() const { return data.cols(); }
    auto at(Index i) const { return data.middleRows(i * size, size); }
};

template <typename Derived>
MatrixX<typename Derived::Scalar> stack_windows(const Eigen::MatrixBase<Derived>& x, Index size) {
    using Scalar = typename Derived::Scalar;
    if (size < 1) throw std::invalid_argument("stack: window size must be >= 1");
    const Index T = x.rows();
    MatrixX<Scalar> out = MatrixX<Scalar>::Zero(T * size, x.cols());
    for (Index i = 0; i < T; ++i) {
        const Index start = window_start(i, size);
        const Index lo = std::max<Index>(start, 0);
        const Index hi = std::min<Index>(start + size, T);
        if (hi > lo) out.middleRows(i * size + (lo - start), hi - lo) = x.middleRows(lo, hi - lo);
    }
    return out;
}

inline WindowStack stack(const FeatureSequence& x, const WindowConfig& cfg) {
    return WindowStack{x.video_id, x.length(), cfg.size, stack_windows(x.frames, cfg.size)};
}

}  // namespace weakseg
