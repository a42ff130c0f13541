#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "support.hpp"
#include "weakseg/prob_models.hpp"
#include "weakseg/viterbi.hpp"

namespace weakseg {
namespace {

using testing::random_matrix;
using testing::BruteAlignment;
using testing::viterbi_oracle;

TEST(Prior, LikelihoodArithmetic) {
    ClassPrior prior(4);
    prior.set_counts((RowVector(4) << 1, 1, 1, 1).finished());
    Matrix lp(1, 4);
    lp << std::log(0.5), std::log(0.2), std::log(0.2), std::log(0.1);
    Matrix ll = to_likelihood(lp, prior);
    EXPECT_NEAR(ll(0, 0), std::log(2.0), 1e-14);

    ClassPrior two(2);
    Matrix p2(1, 2);
    p2 << std::log(0.3), std::log(0.7);
    Matrix l2 = to_likelihood(p2, two).array().exp();
    EXPECT_NEAR(l2(0, 0), 0.6, 1e-14);
    EXPECT_NEAR(l2(0, 1), 1.4, 1e-14);
}

TEST(Prior, RankingMatchesPosteriorOverPrior) {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        ClassPrior prior(5);
        RowVector c(5);
        for (Index a = 0; a < 5; ++a) c(a) = static_cast<double>(rng.below(20));
        prior.set_counts(c);
        Matrix logits = random_matrix(1, 5, rng);
        Matrix post = (logits.array() - std::log(logits.array().exp().sum())).matrix();
        Matrix ll = to_likelihood(post, prior);
        RowVector ratio = post.array().exp() / prior.probabilities().array();
        for (Index a = 0; a < 5; ++a)
            for (Index b = 0; b < 5; ++b)
                if (ratio(a) > ratio(b) * (1 + 1e-12)) EXPECT_GT(ll(0, a), ll(0, b));
    }
}

TEST(Prior, FloorAfterSingleFullAlignment) {
    ClassPrior prior(4);
    prior.update(Alignment{{2}, {9}, 0.0});
    RowVector p = prior.probabilities();
    EXPECT_EQ(p(2), 1.0 - 3.0 * kProbabilityFloor);
    EXPECT_EQ(p(0), kProbabilityFloor);
    EXPECT_NEAR(p.sum(), 1.0, 1e-15);
    Matrix lp = Matrix::Constant(2, 4, -std::numeric_limits<double>::infinity());
    EXPECT_TRUE(to_likelihood(lp, prior).allFinite());
}

TEST(Prior, UniformArgmaxEqualsPosteriorArgmax) {
    Rng rng(2);
    ClassPrior prior(6);
    Matrix lp = random_matrix(20, 6, rng);
    Matrix ll = to_likelihood(lp, prior);
    for (Index t = 0; t < 20; ++t) {
        Index a, b;
        lp.row(t).maxCoeff(&a);
        ll.row(t).maxCoeff(&b);
        EXPECT_EQ(a, b);
    }
}

TEST(Prior, UpdatesAreOrderIndependent) {
    std::vector<Alignment> batch{{{0, 1}, {3, 4}, 0}, {{2}, {5}, 0}, {{1, 0, 2}, {1, 1, 6}, 0}};
    ClassPrior p1(3), p2(3);
    LengthModel l1(3, 4.0), l2(3, 4.0);
    for (const auto& a : batch) {
        p1.update(a);
        l1.update(a);
    }
    for (auto it = batch.rbegin(); it != batch.rend(); ++it) {
        p2.update(*it);
        l2.update(*it);
    }
    EXPECT_EQ(p1.probabilities(), p2.probabilities());
    for (Index a = 0; a < 3; ++a) EXPECT_EQ(l1.rate(a), l2.rate(a));
}

TEST(Lengths, PoissonClosedFormAndNormalization) {
    Vector t = poisson_log_table(1.0, 400);
    // Mass outside [1, 400] is e^-1 at l = 0 plus a negligible tail.
    EXPECT_NEAR(std::exp(t(1)) * (1.0 - std::exp(-1.0)), std::exp(-1.0), 1e-12);
    for (double rate : {0.5, 3.0, 17.0, 120.0})
        for (Index l_max : {1, 5, 60, 300}) EXPECT_NEAR(poisson_log_table(rate, l_max).tail(l_max).array().exp().sum(), 1.0, 1e-12);
    Vector five = poisson_log_table(5.0, 50);
    Index mode;
    five.tail(50).maxCoeff(&mode);
    EXPECT_TRUE(mode + 1 == 5 || mode + 1 == 4);
    EXPECT_NEAR(five(4), five(5), 1e-12);  // Poisson(5) ties at 4 and 5
    LengthModel m(2, 3.0);
    EXPECT_THROW(m.log_prob(0, 0, 10), std::out_of_range);
    EXPECT_THROW(m.log_prob(11, 0, 10), std::out_of_range);
}

TEST(Lengths, RateIsRunningMean) {
    LengthModel m(3, 7.0);
    EXPECT_EQ(m.rate(0), 7.0);
    m.add_length(0, 4);
    m.add_length(0, 6);
    EXPECT_EQ(m.rate(0), 5.0);
    Rng rng(3);
    std::vector<double> seen;
    for (int i = 0; i < 200; ++i) {
        const Index l = 1 + static_cast<Index>(rng.below(40));
        m.add_length(1, l);
        seen.push_back(static_cast<double>(l));
        double mean = 0;
        for (double v : seen) mean += v;
        EXPECT_NEAR(m.rate(1), mean / static_cast<double>(seen.size()), 1e-12);
    }
}

TEST(Viterbi, SingleSegment) {
    Rng rng(4);
    Matrix ll = random_matrix(6, 3, rng);
    LengthModel m(3, 4.0);
    Alignment a = decode(ll, {1}, m);
    EXPECT_EQ(a.lengths, std::vector<Index>{6});
    EXPECT_NEAR(a.score, ll.col(1).sum() + m.log_prob(6, 1, 6), 1e-12);
}

TEST(Viterbi, ThreeFrameExample) {
    Matrix post(3, 2);
    post << 0.9, 0.1, 0.8, 0.2, 0.2, 0.8;
    Matrix ll = to_likelihood(post.array().log().matrix(), ClassPrior(2));
    // Rate 2 gives p(1) == p(2), a uniform length model over the feasible lengths.
    Alignment a = decode(ll, {0, 1}, LengthModel(2, 2.0));
    EXPECT_EQ(a.lengths, (std::vector<Index>{2, 1}));
}

TEST(Viterbi, TiesGoToEarliestBoundary) {
    // (1,2) and (2,1) score identically; the earlier boundary wins.
    Alignment a = decode(Matrix::Zero(3, 1), {0, 0}, LengthModel(1, 2.0));
    EXPECT_EQ(a.lengths, (std::vector<Index>{1, 2}));
}

TEST(Viterbi, RoundingDoesNotBreakTies) {
    // A repeated action scores every split of its frames alike up to
    // summation order; the earliest boundary must still win.
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const Index T = 5 + static_cast<Index>(rng.below(7));
        Matrix ll = random_matrix(T, 2, rng, 2.0);
        LengthModel m(2, rng.uniform(1.0, 6.0));
        for (const ActionSequence& tr : {ActionSequence{1, 1}, ActionSequence{0, 1, 1}, ActionSequence{1, 1, 1}})
            EXPECT_EQ(decode(ll, tr, m).lengths, viterbi_oracle(ll, tr, m).lengths) << T;
    }
}

TEST(Viterbi, InfeasibleInputs) {
    LengthModel m(2, 3.0);
    EXPECT_THROW(decode(Matrix::Zero(2, 2), {0, 1, 0}, m), InfeasibleError);
    EXPECT_EQ(score(Matrix::Zero(2, 2), {0, 1, 0}, m), -std::numeric_limits<double>::infinity());
    LengthModel capped(2, 3.0, 2);
    EXPECT_THROW(decode(Matrix::Zero(5, 2), {0, 1}, capped), InfeasibleError);
    EXPECT_NO_THROW(decode(Matrix::Zero(4, 2), {0, 1}, capped));
}

TEST(Viterbi, InvariantToPerFrameConstants) {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix ll = random_matrix(15, 3, rng);
        Matrix shifted = ll;
        for (Index t = 0; t < 15; ++t) shifted.row(t).array() += rng.uniform(-5, 5);
        LengthModel m(3, 5.0);
        ActionSequence tr{0, 2, 1};
        EXPECT_EQ(decode(ll, tr, m).lengths, decode(shifted, tr, m).lengths);
    }
}

TEST(Viterbi, RepeatedAdjacentActionsAreSeparateSegments) {
    Matrix ll = Matrix::Zero(6, 2);
    Alignment a = decode(ll, {1, 1}, LengthModel(2, 3.0));
    EXPECT_EQ(a.lengths.size(), 2u);
    EXPECT_EQ(a.frames(), 6);
}

TEST(Select, PicksGeneratingTranscript) {
    Rng rng(7);
    // Well separated: true labels get +3 log-likelihood.
    ActionSequence truth_labels;
    for (Index a : {2, 0, 3}) truth_labels.insert(truth_labels.end(), 10, a);
    Matrix ll = random_matrix(30, 4, rng, 0.3);
    for (Index t = 0; t < 30; ++t) ll(t, truth_labels[static_cast<std::size_t>(t)]) += 3.0;
    std::vector<ActionSequence> cands{{0, 1}, {2, 0, 3}, {1, 3, 2}, {2, 3}, {3, 0, 2, 1}};
    LengthModel m(4, 10.0);
    Selection s = select_transcript(ll, cands, m);
    EXPECT_EQ(s.index, 1u);
    EXPECT_EQ(select_transcript(ll, {cands[3]}, m).index, 0u);
    std::vector<ActionSequence> perm{cands[4], cands[1], cands[0], cands[3], cands[2]};
    EXPECT_EQ(perm[select_transcript(ll, perm, m).index], cands[1]);
    EXPECT_EQ(select_transcript(ll, cands, m, 3).index, 1u);
    EXPECT_THROW(select_transcript(ll, {}, m), std::invalid_argument);
    EXPECT_THROW(select_transcript(Matrix::Zero(1, 4), {{0, 1}}, m), InfeasibleError);
}

}  // namespace
}  // namespace weakseg
