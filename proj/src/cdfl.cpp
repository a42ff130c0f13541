#include "weakseg/cdfl.hpp"

#include <cmath>
#include <limits>

namespace weakseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// -log(exp(-a) + exp(-b))
double softmin(double a, double b) {
    if (a == kInf) return b;
    if (b == kInf) return a;
    const double m = std::min(a, b);
    return m - std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

SegmentationGraph make_graph(const Tensor& log_posteriors, const Alignment& anchor, Index delta) {
    const Index T = log_posteriors.rows();
    const Index N = static_cast<Index>(anchor.transcript.size());
    if (delta < 0) throw std::invalid_argument("make_graph: delta must be >= 0");
    if (N < 1 || static_cast<Index>(anchor.lengths.size()) != N || anchor.frames() != T)
        throw ContractError("make_graph: alignment does not cover the posterior frames");
    for (Index l : anchor.lengths)
        if (l < 1) throw ContractError("make_graph: alignment has an empty segment");
    for (Index a : anchor.transcript)
        if (a < 0 || a >= log_posteriors.cols()) throw std::out_of_range("make_graph: action index out of range");

    SegmentationGraph g;
    g.energies = scale(log_posteriors, -1.0);
    g.transcript = anchor.transcript;
    g.anchors = anchor.boundaries();
    g.pseudo_labels = anchor.frame_labels();
    g.delta = delta;
    g.candidates.resize(static_cast<std::size_t>(N + 1));
    g.candidates.front() = {0};
    g.candidates.back() = {T};
    for (Index n = 1; n < N; ++n) {
        const Index lo = std::max(g.anchors[static_cast<std::size_t>(n)] - delta, n);
        const Index hi = std::min(g.anchors[static_cast<std::size_t>(n)] + delta, T - (N - n));
        for (Index t = lo; t <= hi; ++t) g.candidates[static_cast<std::size_t>(n)].push_back(t);
    }
    return g;
}

double path_energy(const SegmentationGraph& graph, const std::vector<Index>& boundaries) {
    const std::size_t N = graph.transcript.size();
    if (boundaries.size() != N + 1 || boundaries.front() != 0 || boundaries.back() != graph.frames())
        throw ContractError("path_energy: boundaries must run from 0 to T with one per segment");
    const Matrix& e = graph.energies.value();
    double total = 0.0;
    for (std::size_t n = 1; n <= N; ++n) {
        if (boundaries[n] <= boundaries[n - 1]) throw ContractError("path_energy: boundaries must increase strictly");
        const Index a = graph.transcript[n - 1];
        for (Index s = boundaries[n - 1]; s < boundaries[n]; ++s) total += e(s, a);
    }
    return total;
}

std::vector<std::vector<Index>> enumerate_paths(const SegmentationGraph& graph) {
    std::vector<std::vector<Index>> out;
    std::vector<Index> path{0};
    const std::size_t N = graph.transcript.size();
    auto rec = [&](auto&& self, std::size_t n) -> void {
        if (n == N + 1) {
            out.push_back(path);
            return;
        }
        for (Index t : graph.candidates[n]) {
            if (t <= path.back()) continue;
            path.push_back(t);
            self(self, n + 1);
            path.pop_back();
        }
    };
    rec(rec, 1);
    return out;
}

Tensor logadd_valid(const SegmentationGraph& graph) {
    const Index T = graph.frames();
    const std::size_t N = graph.transcript.size();
    const Matrix& e = graph.energies.value();
    Matrix prefix = Matrix::Zero(T + 1, e.cols());
    for (Index t = 0; t < T; ++t) prefix.row(t + 1) = prefix.row(t) + e.row(t);
    const auto& B = graph.candidates;
    auto seg = [&](std::size_t n, Index from, Index to) {
        const Index a = graph.transcript[n - 1];
        return prefix(to, a) - prefix(from, a);
    };

    // fwd[n][i]: soft-min energy of prefixes ending at boundary B[n][i];
    // bwd[n][i]: soft-min energy of the remainder starting there.
    std::vector<std::vector<double>> fwd(N + 1), bwd(N + 1);
    for (std::size_t n = 0; n <= N; ++n) {
        fwd[n].assign(B[n].size(), kInf);
        bwd[n].assign(B[n].size(), kInf);
    }
    fwd[0][0] = 0.0;
    for (std::size_t n = 1; n <= N; ++n)
        for (std::size_t j = 0; j < B[n].size(); ++j)
            for (std::size_t i = 0; i < B[n - 1].size() && B[n - 1][i] < B[n][j]; ++i)
                if (fwd[n - 1][i] < kInf) fwd[n][j] = softmin(fwd[n][j], fwd[n - 1][i] + seg(n, B[n - 1][i], B[n][j]));
    bwd[N][0] = 0.0;
    for (std::size_t n = N; n >= 1; --n)
        for (std::size_t i = 0; i < B[n - 1].size(); ++i)
            for (std::size_t j = 0; j < B[n].size(); ++j)
                if (B[n - 1][i] < B[n][j] && bwd[n][j] < kInf)
                    bwd[n - 1][i] = softmin(bwd[n - 1][i], bwd[n][j] + seg(n, B[n - 1][i], B[n][j]));
    const double total = fwd[N][0];
    if (total == kInf) throw ContractError("logadd_valid: graph has no valid path");

    Tensor energies = graph.energies;
    return make_result(Shape{}, Matrix::Constant(1, 1, total), {energies},
                       [energies, fwd = std::move(fwd), bwd = std::move(bwd), B, transcript = graph.transcript,
                        prefix = std::move(prefix), total, N, T](detail::Node& self) {
                           auto seg = [&](std::size_t n, Index from, Index to) {
                               const Index a = transcript[n - 1];
                               return prefix(to, a) - prefix(from, a);
                           };
                           const double g = self.grad(0, 0);
                           Matrix grad = Matrix::Zero(energies.rows(), energies.cols());
                           // Edge posteriors spread over each edge's frames with a difference array.
                           for (std::size_t n = 1; n <= N; ++n) {
                               std::vector<double> diff(static_cast<std::size_t>(T + 1), 0.0);
                               for (std::size_t i = 0; i < B[n - 1].size(); ++i) {
                                   if (fwd[n - 1][i] == kInf) continue;
                                   for (std::size_t j = 0; j < B[n].size(); ++j) {
                                       if (B[n - 1][i] >= B[n][j] || bwd[n][j] == kInf) continue;
                                       const double w = std::exp(
                                           total - (fwd[n - 1][i] + seg(n, B[n - 1][i], B[n][j]) + bwd[n][j]));
                                       diff[static_cast<std::size_t>(B[n - 1][i])] += w;
                                       diff[static_cast<std::size_t>(B[n][j])] -= w;
                                   }
                               }
                               const Index a = transcript[n - 1];
                               double run = 0.0;
                               for (Index s = 0; s < T; ++s) {
                                   run += diff[static_cast<std::size_t>(s)];
                                   grad(s, a) += run;
                               }
                           }
                           energies.node()->accumulate_expr(g * grad);
                       });
}

Tensor logadd_invalid_constrained(const SegmentationGraph& graph) {
    const Matrix& e = graph.energies.value();
    const Index T = graph.frames();
    if (static_cast<Index>(graph.pseudo_labels.size()) != T)
        throw ContractError("logadd_invalid_constrained: pseudo labels do not cover the frames");
    Matrix mask = Matrix::Zero(e.rows(), e.cols());
    double lowest = kInf;
    for (Index s = 0; s < T; ++s) {
        const Index a = graph.pseudo_labels[static_cast<std::size_t>(s)];
        for (Index b = 0; b < e.cols(); ++b)
            if (b != a && e(s, b) < e(s, a)) {
                mask(s, b) = 1.0;
                lowest = std::min(lowest, e(s, b));
            }
    }
    if (lowest == kInf) return make_result(Shape{}, Matrix::Constant(1, 1, kInf), {}, nullptr);
    Matrix w = (mask.array() * (-(e.array() - lowest)).exp()).matrix();
    const double z = w.sum();
    const double value = lowest - std::log(z);
    w /= z;
    Tensor energies = graph.energies;
    return make_result(Shape{}, Matrix::Constant(1, 1, value), {energies},
                       [energies, w = std::move(w)](detail::Node& self) {
                           energies.node()->accumulate_expr(self.grad(0, 0) * w);
                       });
}

Tensor cdfl(const SegmentationGraph& graph) {
    Tensor valid = logadd_valid(graph);
    Tensor invalid = logadd_invalid_constrained(graph);
    if (std::isinf(invalid.item())) return valid;
    return sub(valid, invalid);
}

}  // namespace weakseg
