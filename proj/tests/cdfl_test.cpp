#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "support.hpp"
#include "weakseg/cdfl.hpp"

namespace weakseg {
namespace {

using testing::gradient_error;
using testing::random_matrix;
using testing::logadd_oracle;
using testing::random_alignment;
using testing::valid_path_energies;

/// Log posteriors whose energies are exactly `energies`.
Tensor from_energies(const Matrix& energies, bool grad = false) { return Tensor(Matrix(-energies), grad); }

TEST(PathEnergy, Examples) {
    SegmentationGraph g = make_graph(from_energies(Matrix::Zero(2, 1)), Alignment{{0}, {2}, 0}, 1);
    EXPECT_EQ(path_energy(g, {0, 2}), 0.0);
    Matrix e(2, 2);
    e << 0.5, 9.0, 9.0, 0.25;
    g = make_graph(from_energies(e), Alignment{{0, 1}, {1, 1}, 0}, 1);
    EXPECT_EQ(path_energy(g, {0, 1, 2}), 0.75);
    EXPECT_THROW(path_energy(g, {0, 2}), ContractError);
    EXPECT_THROW(path_energy(g, {0, 1, 1}), ContractError);
}

TEST(PathEnergy, MatchesLabelExpansion) {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix e = random_matrix(10, 3, rng).cwiseAbs();
        Alignment a = random_alignment(10, 3, 3, rng);
        SegmentationGraph g = make_graph(from_energies(e), a, 2);
        double expect = 0.0;
        ActionSequence labels = a.frame_labels();
        for (Index t = 0; t < 10; ++t) expect += e(t, labels[static_cast<std::size_t>(t)]);
        EXPECT_NEAR(path_energy(g, a.boundaries()), expect, 1e-12);
    }
}

TEST(Graph, CandidatesAreClippedAndOrdered) {
    Matrix e = Matrix::Zero(8, 2);
    SegmentationGraph g = make_graph(from_energies(e), Alignment{{0, 1, 0}, {1, 2, 5}, 0}, 3);
    EXPECT_EQ(g.candidates[1], (std::vector<Index>{1, 2, 3, 4}));
    EXPECT_EQ(g.candidates[2], (std::vector<Index>{2, 3, 4, 5, 6}));
    for (const auto& path : enumerate_paths(g))
        for (std::size_t n = 1; n < path.size(); ++n) EXPECT_LT(path[n - 1], path[n]);
    EXPECT_THROW(make_graph(from_energies(e), Alignment{{0}, {7}, 0}, 1), ContractError);
}

TEST(LogaddValid, ClosedForms) {
    Rng rng(2);
    Matrix e = random_matrix(5, 2, rng).cwiseAbs();
    SegmentationGraph g = make_graph(from_energies(e), Alignment{{0, 1}, {2, 3}, 0}, 0);
    EXPECT_NEAR(logadd_valid(g).item(), path_energy(g, {0, 2, 5}), 1e-12);
    // Two paths of equal energy E: E - log 2.
    Matrix flat = Matrix::Constant(4, 2, 0.7);
    g = make_graph(from_energies(flat), Alignment{{0, 1}, {2, 2}, 0}, 1);
    ASSERT_EQ(enumerate_paths(g).size(), 3u);
    EXPECT_NEAR(logadd_valid(g).item(), 4 * 0.7 - std::log(3.0), 1e-12);
    Matrix two = Matrix::Constant(3, 2, 0.4);
    g = make_graph(from_energies(two), Alignment{{0, 1}, {1, 2}, 0}, 1);
    ASSERT_EQ(enumerate_paths(g).size(), 2u);
    EXPECT_NEAR(logadd_valid(g).item(), 3 * 0.4 - std::log(2.0), 1e-12);
}

TEST(LogaddValid, MatchesEnumerationAndBounds) {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const Index T = 4 + static_cast<Index>(rng.below(11));
        const Index N = 1 + static_cast<Index>(rng.below(3));
        const Index delta = static_cast<Index>(rng.below(4));
        Matrix e = random_matrix(T, 3, rng, 2.0).cwiseAbs();
        const Alignment anchor = random_alignment(T, N, 3, rng);
        SegmentationGraph g = make_graph(from_energies(e), anchor, delta);
        std::vector<double> energies;
        for (const auto& p : enumerate_paths(g)) energies.push_back(path_energy(g, p));
        // the scan over all compositions finds the same paths
        std::vector<double> scanned = valid_path_energies(e, anchor, delta);
        ASSERT_EQ(scanned.size(), energies.size());
        EXPECT_NEAR(logadd_oracle(scanned), logadd_oracle(energies), 1e-12);
        const double v = logadd_valid(g).item();
        EXPECT_NEAR(v, logadd_oracle(energies), 1e-9);
        EXPECT_LE(v, *std::min_element(energies.begin(), energies.end()) + 1e-12);
        // Reversed summation order gives the same value.
        std::reverse(energies.begin(), energies.end());
        EXPECT_NEAR(v, logadd_oracle(energies), 1e-9);
    }
}

TEST(LogaddInvalid, Examples) {
    // One-hot correct posteriors: nothing undercuts the anchor label.
    Matrix lp = Matrix::Constant(4, 3, std::log(1e-10));
    for (Index t = 0; t < 4; ++t) lp(t, t < 2 ? 0 : 2) = 0.0;
    SegmentationGraph g = make_graph(Tensor(lp), Alignment{{0, 2}, {2, 2}, 0}, 1);
    EXPECT_TRUE(std::isinf(logadd_invalid_constrained(g).item()));
    EXPECT_EQ(cdfl(g).item(), logadd_valid(g).item());

    Matrix e(1, 2);
    e << 1.0, 0.5;
    g = make_graph(from_energies(e), Alignment{{0}, {1}, 0}, 0);
    EXPECT_NEAR(logadd_invalid_constrained(g).item(), 0.5, 1e-15);
}

TEST(LogaddInvalid, MatchesFilteredEnumeration) {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const Index T = 4 + static_cast<Index>(rng.below(11));
        Matrix e = random_matrix(T, 4, rng).cwiseAbs();
        Alignment a = random_alignment(T, 1 + static_cast<Index>(rng.below(3)), 4, rng);
        SegmentationGraph g = make_graph(from_energies(e), a, 2);
        ActionSequence labels = a.frame_labels();
        std::vector<double> chosen;
        for (Index t = 0; t < T; ++t)
            for (Index b = 0; b < 4; ++b)
                if (b != labels[static_cast<std::size_t>(t)] && e(t, b) < e(t, labels[static_cast<std::size_t>(t)]))
                    chosen.push_back(e(t, b));
        const double v = logadd_invalid_constrained(g).item();
        if (chosen.empty())
            EXPECT_TRUE(std::isinf(v));
        else
            EXPECT_NEAR(v, logadd_oracle(chosen), 1e-9);
    }
}

TEST(Cdfl, GradientsMatchFiniteDifferences) {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor logits(random_matrix(6, 3, rng), true);
        Alignment a = random_alignment(6, 2, 3, rng);
        auto loss = [&] { return cdfl(make_graph(log_softmax(logits), a, 2)); };
        EXPECT_LT(gradient_error(loss, {logits}), 1e-4);
    }
}

TEST(Cdfl, SaturatesOnPerfectPosteriors) {
    Matrix lp = Matrix::Constant(6, 2, std::log(1e-10));
    for (Index t = 0; t < 6; ++t) lp(t, t < 3 ? 0 : 1) = std::log1p(-1e-10);
    SegmentationGraph g = make_graph(Tensor(lp), Alignment{{0, 1}, {3, 3}, 0}, 0);
    EXPECT_LT(cdfl(g).item(), 1e-8);
}

TEST(Cdfl, GradientDescentLowersLoss) {
    Rng rng(6);
    Tensor logits(random_matrix(12, 3, rng), true);
    Alignment anchor{{0, 2, 1}, {4, 4, 4}, 0};
    double previous = std::numeric_limits<double>::infinity(), first = 0.0;
    for (int step = 0; step < 40; ++step) {
        Tape tape;
        Tensor loss;
        {
            TapeScope scope(tape);
            loss = cdfl(make_graph(log_softmax(logits), anchor, 2));
        }
        EXPECT_LE(loss.item(), previous + 1e-12) << "step " << step;
        previous = loss.item();
        if (step == 0) first = previous;
        tape.backward(loss);
        logits.mutable_value() -= 0.02 * logits.grad();
        logits.zero_grad();
    }
    EXPECT_LT(previous, first - 0.1);
}

}  // namespace
}  // namespace weakseg
