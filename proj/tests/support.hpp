#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "weakseg/rng.hpp"
#include "weakseg/tensor.hpp"

namespace weakseg::testing {

inline Matrix random_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

inline Tensor random_leaf(Index rows, Index cols, Rng& rng, double scale = 1.0) {
    return Tensor(random_matrix(rows, cols, rng, scale), true);
}

/// Largest relative gap ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)
/// over `leaves`, with central differences of step h.
inline double gradient_error(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves, double h = 1e-5,
                             double floor = 1e-8) {
    for (const auto& l : leaves) Tensor(l).zero_grad();
    {
        Tape tape;
        Tensor loss;
        {
            TapeScope scope(tape);
            loss = f();
        }
        tape.backward(loss);
    }
    double worst = 0.0;
    for (const auto& leaf : leaves) {
        Tensor p = leaf;
        const Matrix analytic = p.grad();
        Matrix numeric(analytic.rows(), analytic.cols());
        for (Index i = 0; i < p.numel(); ++i) {
            double& x = p.mutable_value().data()[i];
            const double saved = x;
            x = saved + h;
            const double up = f().item();
            x = saved - h;
            const double down = f().item();
            x = saved;
            numeric.data()[i] = (up - down) / (2.0 * h);
        }
        const double denom = std::max({analytic.norm(), numeric.norm(), floor});
        worst = std::max(worst, (analytic - numeric).norm() / denom);
        p.zero_grad();
    }
    return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("weakseg_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace weakseg::testing
