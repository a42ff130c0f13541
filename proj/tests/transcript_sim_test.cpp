#include <gtest/gtest.h>

#include "oracles.hpp"
#include "weakseg/rng.hpp"
#include "weakseg/transcript_sim.hpp"

namespace weakseg {
namespace {

using Seq = std::vector<int>;
using testing::indel_distance;

TEST(Lcs, Examples) {
    EXPECT_EQ(lcs_length(Seq{1, 2, 3}, Seq{1, 2, 3}), 3u);
    EXPECT_EQ(lcs_length(Seq{1}, Seq{2}), 0u);
    EXPECT_EQ(lcs_length(Seq{1, 2, 3}, Seq{1, 9, 3}), 2u);
    EXPECT_EQ(lcs_length(Seq{}, Seq{4, 5}), 0u);
}

TEST(Similarity, Examples) {
    EXPECT_EQ(transcript_similarity(Seq{4, 1, 4}, Seq{4, 1, 4}), 1.0);
    EXPECT_EQ(transcript_similarity(Seq{1, 2}, Seq{3, 4, 5}), 0.0);
    EXPECT_DOUBLE_EQ(transcript_similarity(Seq{1, 2, 3}, Seq{1, 9, 3}), 2.0 / 3.0);
    EXPECT_EQ(transcript_similarity(Seq{}, Seq{1}), 0.0);
    EXPECT_THROW(transcript_similarity(Seq{}, Seq{}), std::invalid_argument);
}

TEST(Similarity, RandomPairProperties) {
    Rng rng(1);
    auto draw = [&] {
        Seq s(1 + rng.below(10));
        for (auto& v : s) v = static_cast<int>(rng.below(6));
        return s;
    };
    for (int i = 0; i < 1000; ++i) {
        Seq x = draw(), y = draw();
        const double s = transcript_similarity(x, y);
        EXPECT_EQ(s, transcript_similarity(y, x));
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 1.0);
        EXPECT_EQ(s == 1.0, x == y);
        EXPECT_EQ(indel_distance(x, y), x.size() + y.size() - 2 * lcs_length(x, y));
    }
}

}  // namespace
}  // namespace weakseg
