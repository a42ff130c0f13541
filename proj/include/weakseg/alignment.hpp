#pragma once

#include <vector>

#include "weakseg/data_io.hpp"

namespace weakseg {

/// Frame lengths of each transcript element, in transcript order.
struct Alignment {
    ActionSequence transcript;
    std::vector<Index> lengths;
    double score = 0.0;

    Index frames() const {
        Index total = 0;
        for (Index l : lengths) total += l;
        return total;
    }

    /// Boundaries t_0 = 0 < t_1 < ... < t_N = T; segment n covers [t_{n-1}, t_n).
    std::vector<Index> boundaries() const {
        std::vector<Index> b{0};
        for (Index l : lengths) b.push_back(b.back() + l);
        return b;
    }

    ActionSequence frame_labels() const {
        ActionSequence labels;
        labels.reserve(static_cast<std::size_t>(frames()));
        for (std::size_t n = 0; n < lengths.size(); ++n)
            labels.insert(labels.end(), static_cast<std::size_t>(lengths[n]), transcript[n]);
        return labels;
    }
};

}  // namespace weakseg
