#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <vector>

namespace weakseg {

/// Length of the longest common subsequence, O(|x| |y|) time, O(|y|) memory.
template <typename T>
std::size_t lcs_length(std::span<const T> x, std::span<const T> y) {
    std::vector<std::size_t> row(y.size() + 1, 0);
    for (const T& xi : x) {
        std::size_t diag = 0;
        for (std::size_t j = 1; j <= y.size(); ++j) {
            const std::size_t up = row[j];
            row[j] = xi == y[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
            diag = up;
        }
    }
    return row[y.size()];
}

template <typename T>
std::size_t lcs_length(const std::vector<T>& x, const std::vector<T>& y) {
    return lcs_length(std::span<const T>(x), std::span<const T>(y));
}

/// 2 * lcs / (|x| + |y|), in [0, 1].
template <typename T>
double transcript_similarity(const std::vector<T>& x, const std::vector<T>& y) {
    if (x.empty() && y.empty()) throw std::invalid_argument("transcript_similarity: both transcripts are empty");
    return 2.0 * static_cast<double>(lcs_length(x, y)) / static_cast<double>(x.size() + y.size());
}

}  // namespace weakseg
