#pragma once

#include <vector>

#include "weakseg/alignment.hpp"
#include "weakseg/tensor.hpp"

namespace weakseg {

/// Paths of a transcript through T frames whose inner boundaries stay
/// within `delta` frames of an anchor segmentation.
struct SegmentationGraph {
    Tensor energies;  // T x classes, -log p(a|e_t)
    ActionSequence transcript;
    std::vector<Index> anchors;                 // t_0 = 0 < ... < t_N = T
    std::vector<std::vector<Index>> candidates;  // ascending boundary choices per anchor
    ActionSequence pseudo_labels;               // anchor labelling, one per frame
    Index delta = 0;

    Index frames() const { return energies.rows(); }
};

/// Builds the graph from log posteriors (kept on the tape) and a decoded
/// alignment of the same frames.
SegmentationGraph make_graph(const Tensor& log_posteriors, const Alignment& anchor, Index delta);

/// Energy of one path given as boundaries t_0 = 0 < ... < t_N = T.
double path_energy(const SegmentationGraph& graph, const std::vector<Index>& boundaries);

/// Every valid boundary tuple, in lexicographic order. Exponential; for tests
/// and small graphs.
std::vector<std::vector<Index>> enumerate_paths(const SegmentationGraph& graph);

/// -log sum over valid paths of exp(-E), by a forward recursion.
Tensor logadd_valid(const SegmentationGraph& graph);

/// -log sum of exp(-energy) over frame/class pairs whose energy undercuts
/// the anchor label of that frame. +inf (no mass) when there are none.
Tensor logadd_invalid_constrained(const SegmentationGraph& graph);

/// logadd_valid - logadd_invalid_constrained; an empty invalid set leaves
/// only the valid term.
Tensor cdfl(const SegmentationGraph& graph);

}  // namespace weakseg
